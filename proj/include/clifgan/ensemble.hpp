#pragma once

#include <array>
#include <filesystem>

#include "clifgan/checkpoint.hpp"
#include "clifgan/fuse.hpp"
#include "clifgan/metrics.hpp"

namespace clifgan::ensemble {

/// Wraps a segmentation (post image) or siamese (pre + post) checkpoint as a
/// damage predictor. Footprint-task models emit {0,1}.
metrics::DamagePredictor make_predictor(const ModelCheckpoint& ckpt);

struct LoadedModel {
    ModelCheckpoint checkpoint;
    metrics::DamagePredictor predict;
};

LoadedModel load_model(const std::filesystem::path& path);

/// Descriptor: {"members": [path, path, path]}; relative paths resolve
/// against the descriptor's directory.
struct Ensemble {
    std::array<std::filesystem::path, 3> members;
};

Ensemble load_descriptor(const std::filesystem::path& path);
void save_descriptor(const Ensemble& e, const std::filesystem::path& path);

struct LoadedEnsemble {
    std::array<metrics::DamagePredictor, 3> members;
    std::uint64_t size_bytes = 0;  // sum of member checkpoint files
    double train_time_seconds = 0;  // sum of member training times
};

/// Loads the three members; their architecture configs must match.
LoadedEnsemble load_ensemble(const Ensemble& e);

/// Member predictions, majority vote, then morphological filtering.
DamageMask fuse_pipeline(const LoadedEnsemble& e, const data::TileSample& sample, const fuse::MorphologyConfig& config);

}  // namespace clifgan::ensemble
