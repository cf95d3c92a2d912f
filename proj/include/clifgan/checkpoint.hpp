#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace clifgan {

enum class CheckpointProvenance {
    vanilla,
    contrastive_pretrained,
    contrastive_finetuned,
    gan_generator,
    gan_discriminator,
    siamese
};

std::string to_string(CheckpointProvenance p);
CheckpointProvenance checkpoint_provenance_from_string(const std::string& s);

struct TrainLogRecord {
    int epoch = 0;
    double train_loss = 0;
    double val_metric = 0;  // NaN when no validation ran that epoch
    double lr = 0;
};

void to_json(nlohmann::json& j, const TrainLogRecord& r);
void from_json(const nlohmann::json& j, TrainLogRecord& r);

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

/// Serialized weights plus everything needed to rebuild the network.
struct ModelCheckpoint {
    CheckpointProvenance provenance = CheckpointProvenance::vanilla;
    nlohmann::json arch_config;
    NamedTensors weights;
    std::vector<TrainLogRecord> train_log;
    double train_time_seconds = 0;
    std::uint64_t size_bytes = 0;  // set by save/load

    const torch::Tensor* find(const std::string& name) const;
};

/// Detached CPU copies of every parameter and buffer, in registration order.
NamedTensors capture_weights(const torch::nn::Module& module, const std::string& prefix = "");

/// Copies tensors into the module's parameters/buffers by name. Every
/// module tensor must be present unless `allow_missing`; names not belonging
/// to the module are ignored when `prefix` filters them out.
void restore_weights(torch::nn::Module& module, const NamedTensors& weights, const std::string& prefix = "",
                     bool allow_missing = false);

/// Container layout: 8-byte magic "CLFGCKPT", u32 version, u64 header length,
/// JSON header (provenance, arch_config, train_log, tensor index), raw
/// little-endian tensor blob. Returns the file size and stores it in
/// `ckpt.size_bytes`.
std::uint64_t save_checkpoint(ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Train log as JSON lines, one record per epoch.
void write_train_log(const std::vector<TrainLogRecord>& log, const std::filesystem::path& path);

}  // namespace clifgan
