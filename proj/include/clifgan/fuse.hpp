#pragma once

#include <array>
#include <vector>

#include <json.hpp>

#include "clifgan/grid.hpp"
#include "clifgan/metrics.hpp"

namespace clifgan::fuse {

using BinaryGrid = Grid<std::uint8_t>;

/// Per pixel: a label emitted by at least two members wins; with three
/// distinct votes the most severe damage label wins (255 only wins by
/// majority).
DamageMask majority_vote(const DamageMask& a, const DamageMask& b, const DamageMask& c);
std::uint8_t vote(std::uint8_t a, std::uint8_t b, std::uint8_t c);

struct MorphologyConfig {
    int side = 3;             // square structuring element
    int min_region_area = 2;  // 10 at 512 px, 2 at desk scale

    void validate() const;
};

void to_json(nlohmann::json& j, const MorphologyConfig& c);
void from_json(const nlohmann::json& j, MorphologyConfig& c);

// Binary morphology with a side×side square on the unbounded plane: pixels
// outside the grid are 0 and results are cropped back to the grid.
BinaryGrid erode(const BinaryGrid& g, int side);
BinaryGrid dilate(const BinaryGrid& g, int side);
BinaryGrid open(const BinaryGrid& g, int side);
BinaryGrid close(const BinaryGrid& g, int side);

/// 4-connected components of pixels equal to `value`; returns a component id
/// grid (0 = not part of any component, ids start at 1) and the count.
std::pair<Grid<int>, int> connected_components(const DamageMask& mask, std::uint8_t value);

/// Open then close of each severity level set {label >= c}, ascending c,
/// then removal of 4-connected regions smaller than min_region_area.
DamageMask morph_filter(const DamageMask& mask, const MorphologyConfig& config);

/// The per-class open/close pass alone (no area pruning). Idempotent.
DamageMask open_close_pass(const DamageMask& mask, int side);

/// Removes 4-connected regions of classes 1..4 with area < min_area.
DamageMask prune_small_regions(const DamageMask& mask, int min_area);

/// Vote then morphology.
DamageMask fuse_masks(const DamageMask& a, const DamageMask& b, const DamageMask& c, const MorphologyConfig& config);

/// Runs three predictors on the sample and fuses their outputs.
DamageMask fuse_predictions(const std::array<metrics::DamagePredictor, 3>& members, const data::TileSample& sample,
                            const MorphologyConfig& config);

}  // namespace clifgan::fuse
