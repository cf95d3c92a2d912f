#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "clifgan/checkpoint.hpp"
#include "clifgan/data.hpp"

namespace clifgan::gan {

/// gan1: pre RGB + damage mask -> post RGB.
/// gan2: pre RGB + damage mask -> post RGB + post mask.
enum class Variant { gan1, gan2 };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct GeneratorConfig {
    Variant variant = Variant::gan1;
    int depth = 6;  // 6 at 256 px, 4 at desk scale
    int base_channels = 64;

    int in_channels() const { return 4; }
    int out_channels() const { return variant == Variant::gan1 ? 3 : 4; }
    void validate() const;
};

struct DiscriminatorConfig {
    int layers = 3;
    int base_channels = 64;
    void validate() const;
};

enum class AdversarialLoss { bce, least_squares };

struct GanTrainConfig {
    AdversarialLoss adversarial_loss = AdversarialLoss::bce;
    double l1_weight = 100.0;
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int epochs = 200;
    int batch_size = 1;
    int image_size = 256;
    std::uint64_t seed = 0;
    /// When set, generator.ckpt and discriminator.ckpt in this directory are
    /// rewritten after every epoch.
    std::optional<std::filesystem::path> checkpoint_dir;

    void validate() const;
};

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);
void to_json(nlohmann::json& j, const DiscriminatorConfig& c);
void from_json(const nlohmann::json& j, DiscriminatorConfig& c);
void to_json(nlohmann::json& j, const GanTrainConfig& c);
void from_json(const nlohmann::json& j, GanTrainConfig& c);

// ---------------------------------------------------------------------------
// Mask editing

enum class EditMode { set_all, per_building_map, randomize };

struct MaskEditSpec {
    EditMode mode = EditMode::randomize;
    int target_level = label::destroyed;
    std::map<int, int> mapping;  // building id (1-based component id) -> level
    std::array<double, 4> level_distribution{0.25, 0.25, 0.25, 0.25};
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const MaskEditSpec& s);
void from_json(const nlohmann::json& j, MaskEditSpec& s);

/// Buildings are the 4-connected components of `footprints`; every footprint
/// pixel receives its building's level, background stays 0.
DamageMask edit_mask(const DamageMask& current, const DamageMask& footprints, const MaskEditSpec& spec, Rng& rng);

// ---------------------------------------------------------------------------
// Networks

/// pix2pix U-Net: `depth` stride-2 4×4 convolutions down, transposed
/// convolutions up with skip connections, tanh output.
struct UnetGeneratorImpl : torch::nn::Module {
    explicit UnetGeneratorImpl(const GeneratorConfig& config);
    torch::Tensor forward(const torch::Tensor& x);

    GeneratorConfig config;
    torch::nn::ModuleList down{nullptr};
    torch::nn::ModuleList up{nullptr};
};
TORCH_MODULE(UnetGenerator);

/// PatchGAN over the channel-concatenated (condition, candidate) pair: `layers`
/// stride-2 4×4 convolutions then a 3×3 score layer, so an H×W input yields
/// an (H/2^layers)×(W/2^layers) grid of patch logits.
struct PatchDiscriminatorImpl : torch::nn::Module {
    PatchDiscriminatorImpl(int condition_channels, int candidate_channels, const DiscriminatorConfig& config);
    torch::Tensor forward(const torch::Tensor& condition, const torch::Tensor& candidate);

    DiscriminatorConfig config;
    torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

struct GanPair {
    UnetGenerator generator{nullptr};
    PatchDiscriminator discriminator{nullptr};
};

GanPair build_gan(Variant variant, GeneratorConfig gen_config, const DiscriminatorConfig& disc_config);

/// Patch grid side for an input side, following the conv arithmetic.
int patch_grid_size(int input_size, int layers);

// ---------------------------------------------------------------------------
// Tensors

/// Mask level -> [-1,1]: level/4 then ×2−1. Ignore (255) encodes as background.
torch::Tensor encode_mask(const DamageMask& mask);
/// [-1,1] channel -> nearest legend level in {0..4}.
DamageMask decode_mask(const torch::Tensor& channel);
std::uint8_t decode_level(double value);

/// 1×4×H×W generator input.
torch::Tensor generator_input(const Image& pre_image, const DamageMask& mask);

struct GanLogRecord {
    int step = 0;
    double d_loss = 0;
    double g_adversarial = 0;
    double g_l1 = 0;
};

struct GanTrainResult {
    ModelCheckpoint generator;
    ModelCheckpoint discriminator;
    std::vector<GanLogRecord> trace;
};

/// Alternating discriminator/generator Adam steps; G loss = adversarial +
/// l1_weight·L1 over every output channel. Samples are resized to
/// config.image_size.
GanTrainResult train_gan(GanPair& gan, const data::DatasetManifest& train, const GanTrainConfig& config);

/// Mean absolute error (in [-1,1] units) of the generator on a manifest.
double generator_l1(UnetGenerator& generator, const data::DatasetManifest& manifest, int image_size);

UnetGenerator load_generator(const ModelCheckpoint& ckpt);
PatchDiscriminator load_discriminator(const ModelCheckpoint& ckpt);

/// gan1: post_image = G output, post_mask = desired_mask. gan2: image and
/// mask both split from the output. Footprints come from desired_mask.
data::TileSample synthesize(UnetGenerator& generator, const Image& pre_image, const DamageMask& desired_mask,
                            const std::string& id = "synthetic");

/// Appends `count` synthetic samples built from base samples (cycled in
/// order) with masks edited per `edit_spec`.
data::DatasetManifest augment_dataset(const data::DatasetManifest& base, UnetGenerator& generator, int count,
                                      const MaskEditSpec& edit_spec, Rng& rng);

}  // namespace clifgan::gan
