#pragma once

#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "clifgan/segnet.hpp"

namespace clifgan::contrastive {

struct ContrastiveConfig {
    int embedding_dim = 128;
    double temperature = 0.1;
    int pixels_per_class = 64;
    bool use_color_distortion = false;
    int pretrain_epochs = 50;
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const ContrastiveConfig& c);
void from_json(const nlohmann::json& j, ContrastiveConfig& c);

/// Three 1×1 convolutions with ReLU between them, then per-pixel L2
/// normalization.
struct ProjectionHeadImpl : torch::nn::Module {
    ProjectionHeadImpl(int in_channels, int embedding_dim);
    torch::Tensor forward(const torch::Tensor& features);

    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
};
TORCH_MODULE(ProjectionHead);

/// Segmentation model with a projection head on its decoder features. The
/// classifier layer is bypassed while the head is attached.
struct ContrastiveModelImpl : torch::nn::Module {
    ContrastiveModelImpl(segnet::SegModel model, const ContrastiveConfig& config);
    /// N×embedding_dim×H/4×W/4 unit vectors.
    torch::Tensor forward(const torch::Tensor& x);

    segnet::SegModel model{nullptr};
    ProjectionHead head{nullptr};
    ContrastiveConfig config;
};
TORCH_MODULE(ContrastiveModel);

ContrastiveModel attach_projection_head(segnet::SegModel model, const ContrastiveConfig& config);
/// Drops the head; the returned model shares parameters with the input.
segnet::SegModel detach_projection_head(const ContrastiveModel& model);

/// Multi-positive InfoNCE over already-sampled pixels of one image:
/// mean over anchors i of
///   −log Σ_{j≠i, same class} exp(z_i·z_j/τ) / Σ_{k≠i} exp(z_i·z_k/τ).
/// `embeddings` is n×D, `labels` has n entries. Anchors without a positive
/// are skipped; returns an undefined tensor when no anchor remains.
torch::Tensor sampled_pixel_loss(const torch::Tensor& embeddings, const std::vector<int>& labels, double temperature);

/// Per-image pixel sample: up to pixels_per_class positions per class that
/// has at least 2 non-ignore pixels; empty when fewer than 2 such classes.
std::vector<std::pair<int, int>> sample_pixels(const DamageMask& labels, int pixels_per_class, Rng& rng,
                                               std::vector<int>* sampled_labels);

struct LossStats {
    int images_used = 0;
    int images_skipped = 0;
};

/// Within-image loss for a batch of N×D×h×w embeddings with per-image label
/// grids already at h×w. Mean over contributing images; 0 (and a warning)
/// when no image has two classes.
torch::Tensor within_image_loss(const torch::Tensor& embeddings, const std::vector<DamageMask>& labels,
                                const ContrastiveConfig& config, Rng& rng, LossStats* stats = nullptr);

/// Nearest-neighbour downsampling of the label masks in a batch to (h, w).
std::vector<DamageMask> downsample_labels(const torch::Tensor& masks, int h, int w);

/// Optimizes the within-image loss with the schedule's SGD settings for
/// config.pretrain_epochs epochs (no early stopping). Provenance
/// contrastive_pretrained.
ModelCheckpoint pretrain(ContrastiveModel& model, const data::DatasetManifest& train, const ContrastiveConfig& config,
                         const segnet::TrainSchedule& schedule);

/// Removes the projection head from a pretrained checkpoint and trains the
/// segmentation model with cross-entropy exactly like train_vanilla.
ModelCheckpoint finetune(const ModelCheckpoint& pretrained, const data::DatasetManifest& train,
                         const data::DatasetManifest& val, const segnet::TrainSchedule& schedule);

/// Segmentation model (without head) initialized from a pretrained checkpoint.
segnet::SegModel model_from_pretrained(const ModelCheckpoint& pretrained);

}  // namespace clifgan::contrastive
