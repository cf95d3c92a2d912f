#include "clifgan/tensors.hpp"

#include <algorithm>

namespace clifgan {

torch::Tensor image_to_tensor(const Image& img) {
    auto t = torch::from_blob(const_cast<float*>(img.data().data()), {1, img.channels(), img.height(), img.width()},
                              torch::kFloat32)
                 .clone();
    return t.mul_(2.0).sub_(1.0);
}

Image tensor_to_image(const torch::Tensor& t) {
    auto x = t.detach().to(torch::kFloat32).contiguous();
    if (x.dim() == 4) x = x[0];
    TORCH_CHECK(x.dim() == 3, "tensor_to_image expects C×H×W");
    x = x.add(1.0).mul(0.5).clamp(0.0, 1.0).contiguous();
    Image img(static_cast<int>(x.size(0)), static_cast<int>(x.size(1)), static_cast<int>(x.size(2)));
    std::copy_n(x.data_ptr<float>(), img.data().size(), img.data().begin());
    return img;
}

torch::Tensor mask_to_tensor(const DamageMask& mask) {
    auto t = torch::empty({mask.height(), mask.width()}, torch::kInt64);
    auto* p = t.data_ptr<std::int64_t>();
    for (std::size_t i = 0; i < mask.area(); ++i) p[i] = mask.cells()[i];
    return t;
}

DamageMask tensor_to_mask(const torch::Tensor& t) {
    auto x = t.detach().to(torch::kInt64).contiguous();
    TORCH_CHECK(x.dim() == 2, "tensor_to_mask expects H×W");
    DamageMask m(static_cast<int>(x.size(0)), static_cast<int>(x.size(1)));
    const auto* p = x.data_ptr<std::int64_t>();
    for (std::size_t i = 0; i < m.area(); ++i) m.cells()[i] = static_cast<std::uint8_t>(p[i]);
    return m;
}

torch::Tensor argmax_labels(const torch::Tensor& logits) {
    // torch::argmax returns the first maximal index on CPU, which is the
    // lowest class; made explicit here so the contract does not hinge on it.
    auto x = logits.detach();
    const auto max_vals = std::get<0>(x.max(1, /*keepdim=*/true));
    const auto is_max = x.eq(max_vals);
    const auto num_classes = x.size(1);
    auto idx = torch::arange(num_classes, torch::kInt64).view({1, num_classes, 1, 1}).expand_as(x);
    auto candidates = torch::where(is_max, idx, torch::full_like(idx, num_classes));
    return std::get<0>(candidates.min(1));
}

Batch make_batch(const std::vector<std::shared_ptr<const data::TileSample>>& samples) {
    TORCH_CHECK(!samples.empty(), "make_batch: empty batch");
    std::vector<torch::Tensor> pre, post, pre_m, post_m;
    Batch b;
    for (const auto& s : samples) {
        pre.push_back(image_to_tensor(s->pre_image));
        post.push_back(image_to_tensor(s->post_image));
        pre_m.push_back(mask_to_tensor(s->pre_mask));
        post_m.push_back(mask_to_tensor(s->post_mask));
        b.ids.push_back(s->id);
    }
    b.pre = torch::cat(pre, 0);
    b.post = torch::cat(post, 0);
    b.pre_mask = torch::stack(pre_m, 0);
    b.post_mask = torch::stack(post_m, 0);
    return b;
}

torch::Tensor masked_cross_entropy(const torch::Tensor& logits, const torch::Tensor& target) {
    const auto valid = target.ne(label::ignore);
    const auto count = valid.sum().item<std::int64_t>();
    if (count == 0) return logits.sum() * 0.0;
    const auto safe_target = torch::where(valid, target, torch::zeros_like(target));
    const auto nll = torch::nn::functional::cross_entropy(
        logits, safe_target, torch::nn::functional::CrossEntropyFuncOptions().reduction(torch::kNone));
    return (nll * valid.to(nll.scalar_type())).sum() / static_cast<double>(count);
}

void seed_torch(std::uint64_t seed) {
    torch::set_num_threads(1);
    torch::manual_seed(seed);
}

}  // namespace clifgan
