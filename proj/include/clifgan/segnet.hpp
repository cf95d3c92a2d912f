#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "clifgan/checkpoint.hpp"
#include "clifgan/data.hpp"
#include "clifgan/tensors.hpp"

namespace clifgan::segnet {

enum class BackboneKind { mobilenet_class, resnet50_class };

/// One backbone stage. For mobilenet_class: inverted-residual expansion
/// factor; for resnet50_class: bottleneck expansion (4).
struct StageSpec {
    int expansion = 1;
    int channels = 16;
    int repeats = 1;
    int stride = 1;
};

struct BackboneConfig {
    BackboneKind kind = BackboneKind::mobilenet_class;
    double width_multiplier = 1.0;
    std::vector<StageSpec> stage_spec = mobilenet_v2_stages();
    int output_stride = 16;
    bool pretrained = false;
    std::string pretrained_path;  // checkpoint with backbone.* tensors

    static std::vector<StageSpec> mobilenet_v2_stages();
    static std::vector<StageSpec> resnet50_stages();
    void validate() const;
};

/// Which pairing a segmentation model learns.
enum class SegTask {
    damage,     // post image -> post mask, 5 classes
    footprint,  // pre image -> pre mask, 2 classes
};

struct SegModelConfig {
    BackboneConfig backbone;
    std::vector<int> aspp_rates{6, 12, 18};
    int aspp_channels = 256;
    int low_level_channels = 48;
    int decoder_channels = 256;
    int num_classes = 5;
    bool separable_convs = true;
    SegTask task = SegTask::damage;

    /// Width-0.25 configuration used for CPU-scale runs on 64-128 px tiles.
    static SegModelConfig desk(double width = 0.25);
    void validate() const;
};

void to_json(nlohmann::json& j, const StageSpec& s);
void from_json(const nlohmann::json& j, StageSpec& s);
void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);
void to_json(nlohmann::json& j, const SegModelConfig& c);
void from_json(const nlohmann::json& j, SegModelConfig& c);

// ---------------------------------------------------------------------------
// Network

/// Conv -> BN -> activation. Depthwise when groups == in_channels.
struct ConvBnActImpl : torch::nn::Module {
    ConvBnActImpl(int in, int out, int kernel, int stride = 1, int dilation = 1, int groups = 1,
                  bool activation = true, bool relu6 = false);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv{nullptr};
    torch::nn::BatchNorm2d bn{nullptr};
    bool activation;
    bool relu6;
};
TORCH_MODULE(ConvBnAct);

/// MobileNetV2 inverted residual: expand 1×1, depthwise 3×3, linear project.
struct InvertedResidualImpl : torch::nn::Module {
    InvertedResidualImpl(int in, int out, int stride, int dilation, int expansion);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Sequential body{nullptr};
    bool use_residual;
};
TORCH_MODULE(InvertedResidual);

/// ResNet bottleneck: 1×1 reduce, 3×3 (strided/dilated), 1×1 expand.
struct BottleneckImpl : torch::nn::Module {
    BottleneckImpl(int in, int mid, int expansion, int stride, int dilation);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Sequential body{nullptr};
    torch::nn::Sequential shortcut{nullptr};
};
TORCH_MODULE(Bottleneck);

struct BackboneOutput {
    torch::Tensor low_level;  // stride 4
    torch::Tensor high_level;  // output stride
};

struct BackboneImpl : torch::nn::Module {
    explicit BackboneImpl(const BackboneConfig& config);
    BackboneOutput forward(const torch::Tensor& x);

    int low_level_channels() const { return low_channels_; }
    int out_channels() const { return out_channels_; }

private:
    torch::nn::Sequential stem{nullptr};
    torch::nn::ModuleList stages{nullptr};
    std::vector<int> stage_strides_;  // cumulative stride after each stage
    int low_channels_ = 0;
    int out_channels_ = 0;
};
TORCH_MODULE(Backbone);

/// Depthwise 3×3 (optionally dilated) followed by pointwise 1×1, each with BN+ReLU.
struct SeparableConvImpl : torch::nn::Module {
    SeparableConvImpl(int in, int out, int dilation);
    torch::Tensor forward(const torch::Tensor& x);

    ConvBnAct depthwise{nullptr};
    ConvBnAct pointwise{nullptr};
};
TORCH_MODULE(SeparableConv);

struct AsppImpl : torch::nn::Module {
    AsppImpl(int in, int out, const std::vector<int>& rates, bool separable);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::ModuleList branches{nullptr};
    torch::nn::Conv2d pool_conv{nullptr};
    ConvBnAct project{nullptr};
};
TORCH_MODULE(Aspp);

struct DecoderImpl : torch::nn::Module {
    DecoderImpl(int low_in, int low_out, int aspp_channels, int out, bool separable);
    torch::Tensor forward(const torch::Tensor& low_level, const torch::Tensor& aspp_out);

    ConvBnAct reduce{nullptr};
    torch::nn::Sequential fuse{nullptr};
};
TORCH_MODULE(Decoder);

/// DeepLabv3+-style encoder/decoder. `features` is the decoder's
/// pre-classifier map at stride 4; `forward` returns logits at input size.
struct SegModelImpl : torch::nn::Module {
    explicit SegModelImpl(SegModelConfig config);

    torch::Tensor features(const torch::Tensor& x);
    torch::Tensor forward(const torch::Tensor& x);

    const SegModelConfig& config() const { return config_; }
    int feature_channels() const { return config_.decoder_channels; }
    /// Throws ConfigError unless H and W are divisible by the output stride.
    void check_input(const torch::Tensor& x) const;

    Backbone backbone{nullptr};
    Aspp aspp{nullptr};
    Decoder decoder{nullptr};
    torch::nn::Conv2d classifier{nullptr};

private:
    SegModelConfig config_;
};
TORCH_MODULE(SegModel);

SegModel build_segmodel(const SegModelConfig& config);

std::int64_t parameter_count(const torch::nn::Module& module);

// ---------------------------------------------------------------------------
// Training

/// initial_lr · (1 − iteration/total)^power.
double poly_lr(long iteration, long total_iterations, double initial_lr, double power);

enum class EarlyStopMetric { seg_f1, cls_f1 };

struct TrainSchedule {
    double initial_lr = 0.01;
    int batch_size = 16;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double poly_power = 0.9;
    int max_epochs = 344;
    int early_stop_patience = 10;
    int eval_every = 1;
    EarlyStopMetric early_stop_metric = EarlyStopMetric::seg_f1;
    std::uint64_t seed = 0;
    /// On-the-fly augmentation; identity when absent.
    std::optional<data::AugmentationConfig> augmentation;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainSchedule& s);
void from_json(const nlohmann::json& j, TrainSchedule& s);

/// Shuffled, optionally augmented mini-batches over an in-memory manifest.
class BatchStream {
public:
    BatchStream(const data::DatasetManifest& manifest, int batch_size, std::uint64_t seed,
                std::optional<data::AugmentationConfig> augmentation);
    /// Batches for one epoch; order and augmentation depend only on (seed, epoch).
    std::vector<Batch> epoch(int epoch) const;
    int batches_per_epoch() const;
    std::size_t size() const { return samples_.size(); }

private:
    std::vector<std::shared_ptr<const data::TileSample>> samples_;
    int batch_size_;
    std::uint64_t seed_;
    std::optional<data::AugmentationConfig> augmentation_;
};

struct LoopResult {
    std::vector<TrainLogRecord> log;
    NamedTensors best_weights;  // empty when no validation ran
    double best_metric = 0;
    int best_epoch = -1;
    int epochs_run = 0;
    double seconds = 0;
};

/// Hooks for the shared SGD loop.
struct LoopHooks {
    /// Loss on one batch with the module in training mode.
    std::function<torch::Tensor(const Batch&)> loss;
    /// Validation metric (higher is better); empty disables early stopping.
    std::function<double()> validate;
    /// Called at the start of every epoch (e.g. to set train/eval modes).
    std::function<void()> set_train_mode;
};

/// SGD with momentum/weight decay, per-iteration poly LR over
/// max_epochs × batches, early stopping on the validation metric, tracking
/// the best weights of `module`.
LoopResult run_sgd_loop(torch::nn::Module& module, std::vector<torch::Tensor> parameters,
                        const data::DatasetManifest& train, const TrainSchedule& schedule, const LoopHooks& hooks);

/// Image and label tensors the model sees for its task.
torch::Tensor task_input(const Batch& b, SegTask task);
torch::Tensor task_target(const Batch& b, SegTask task);
const Image& task_image(const data::TileSample& s, SegTask task);

/// Cross-entropy training on `train`, early stopping on `val`. The returned
/// checkpoint holds the best-validation weights.
ModelCheckpoint train_vanilla(SegModel& model, const data::DatasetManifest& train, const data::DatasetManifest& val,
                              const TrainSchedule& schedule,
                              CheckpointProvenance provenance = CheckpointProvenance::vanilla);

/// Validation metric of a segmentation model over a manifest.
double validation_metric(SegModel& model, const data::DatasetManifest& val, EarlyStopMetric metric);

DamageMask predict_mask(SegModel& model, const Image& image);

/// Rebuilds the network from a checkpoint's arch_config and weights.
SegModel load_segmodel(const ModelCheckpoint& ckpt);
nlohmann::json segnet_arch(const SegModelConfig& config);
ModelCheckpoint make_checkpoint(SegModel& model, CheckpointProvenance provenance);

}  // namespace clifgan::segnet
