#pragma once

#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "clifgan/data.hpp"

namespace clifgan {

/// [0,1] image -> 1×3×H×W float tensor in [-1,1].
torch::Tensor image_to_tensor(const Image& img);
/// 3×H×W (or 1×3×H×W) tensor in [-1,1] -> [0,1] image.
Image tensor_to_image(const torch::Tensor& t);

/// H×W int64 tensor of mask labels.
torch::Tensor mask_to_tensor(const DamageMask& mask);
DamageMask tensor_to_mask(const torch::Tensor& t);

/// Per-pixel argmax over dim 1 of N×C×H×W logits. Ties resolve to the lowest
/// class index. Returns N×H×W int64.
torch::Tensor argmax_labels(const torch::Tensor& logits);

/// A stacked mini-batch. Image tensors are N×3×H×W in [-1,1], masks N×H×W int64.
struct Batch {
    torch::Tensor pre;
    torch::Tensor post;
    torch::Tensor pre_mask;
    torch::Tensor post_mask;
    std::vector<std::string> ids;
};

Batch make_batch(const std::vector<std::shared_ptr<const data::TileSample>>& samples);

/// Pixel cross-entropy ignoring label 255. Zero (with gradient graph intact)
/// when every pixel is ignored.
torch::Tensor masked_cross_entropy(const torch::Tensor& logits, const torch::Tensor& target);

/// Runtime-wide deterministic setup: single intra-op thread and the given
/// torch seed.
void seed_torch(std::uint64_t seed);

}  // namespace clifgan
