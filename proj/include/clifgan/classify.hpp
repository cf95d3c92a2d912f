#pragma once

#include <json.hpp>
#include <torch/torch.h>

#include "clifgan/segnet.hpp"

namespace clifgan::classify {

/// Convolutional reduction of the concatenated pre/post feature maps to
/// per-pixel class logits.
struct FusionHeadImpl : torch::nn::Module {
    FusionHeadImpl(int feature_channels, int head_channels, int num_classes);
    torch::Tensor forward(const torch::Tensor& pre_features, const torch::Tensor& post_features);

    torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(FusionHead);

/// Both branches run through the single `extractor` module.
struct SiameseClassifierImpl : torch::nn::Module {
    SiameseClassifierImpl(segnet::SegModel extractor, int head_channels);
    /// N×5×H×W logits at input resolution.
    torch::Tensor forward(const torch::Tensor& pre, const torch::Tensor& post);

    segnet::SegModel extractor{nullptr};
    FusionHead head{nullptr};
    int head_channels;
};
TORCH_MODULE(SiameseClassifier);

/// Extractor initialized from a vanilla or contrastive_finetuned checkpoint.
SiameseClassifier build_siamese(const ModelCheckpoint& seg_ckpt, int head_channels);

nlohmann::json siamese_arch(const SiameseClassifier& classifier);

/// Cross-entropy on post_mask with the shared SGD loop and early stopping.
/// With `freeze_extractor` only head parameters are optimized and the
/// extractor stays in eval mode.
ModelCheckpoint train_classifier(SiameseClassifier& classifier, const data::DatasetManifest& train,
                                 const data::DatasetManifest& val, const segnet::TrainSchedule& schedule,
                                 bool freeze_extractor);

SiameseClassifier load_classifier(const ModelCheckpoint& ckpt);

/// Each 4-connected component of `footprints` (nonzero, non-ignore) takes
/// the majority damage level among its building-labelled pixels; ties go to
/// the most severe level. Components without any building label are left
/// alone.
DamageMask building_majority(const DamageMask& prediction, const DamageMask& footprints);

/// Per-pixel argmax over {0..4}. With `building_level`, the prediction is
/// reduced per building; footprints default to the predicted building set.
DamageMask predict_damage(SiameseClassifier& classifier, const Image& pre_image, const Image& post_image,
                          bool building_level = false, const DamageMask* footprints = nullptr);

}  // namespace clifgan::classify
