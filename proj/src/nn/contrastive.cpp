#include "clifgan/contrastive.hpp"

#include <algorithm>
#include <limits>

#include "clifgan/log.hpp"

namespace clifgan::contrastive {

using nlohmann::json;
namespace F = torch::nn::functional;

void ContrastiveConfig::validate() const {
    if (embedding_dim < 1) throw ConfigError("contrastive: embedding_dim must be >= 1");
    if (!(temperature > 0)) throw ConfigError("contrastive: temperature must be > 0");
    if (pixels_per_class < 2) throw ConfigError("contrastive: pixels_per_class must be >= 2");
    if (pretrain_epochs < 1) throw ConfigError("contrastive: pretrain_epochs must be >= 1");
}

void to_json(json& j, const ContrastiveConfig& c) {
    j = json{{"embedding_dim", c.embedding_dim},       {"temperature", c.temperature},
             {"pixels_per_class", c.pixels_per_class}, {"use_color_distortion", c.use_color_distortion},
             {"pretrain_epochs", c.pretrain_epochs},   {"seed", c.seed}};
}

void from_json(const json& j, ContrastiveConfig& c) {
    ContrastiveConfig d;
    c.embedding_dim = j.value("embedding_dim", d.embedding_dim);
    c.temperature = j.value("temperature", d.temperature);
    c.pixels_per_class = j.value("pixels_per_class", d.pixels_per_class);
    c.use_color_distortion = j.value("use_color_distortion", d.use_color_distortion);
    c.pretrain_epochs = j.value("pretrain_epochs", d.pretrain_epochs);
    c.seed = j.value("seed", d.seed);
    c.validate();
}

ProjectionHeadImpl::ProjectionHeadImpl(int in_channels, int embedding_dim) {
    conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, in_channels, 1)));
    conv2 = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, in_channels, 1)));
    conv3 = register_module("conv3", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, embedding_dim, 1)));
}

torch::Tensor ProjectionHeadImpl::forward(const torch::Tensor& features) {
    auto z = conv3(torch::relu(conv2(torch::relu(conv1(features)))));
    return F::normalize(z, F::NormalizeFuncOptions().p(2).dim(1).eps(1e-12));
}

ContrastiveModelImpl::ContrastiveModelImpl(segnet::SegModel m, const ContrastiveConfig& cfg) : config(cfg) {
    config.validate();
    model = register_module("model", std::move(m));
    head = register_module("head", ProjectionHead(model->feature_channels(), config.embedding_dim));
}

torch::Tensor ContrastiveModelImpl::forward(const torch::Tensor& x) { return head(model->features(x)); }

ContrastiveModel attach_projection_head(segnet::SegModel model, const ContrastiveConfig& config) {
    return ContrastiveModel(std::move(model), config);
}

segnet::SegModel detach_projection_head(const ContrastiveModel& model) { return model->model; }

// ---------------------------------------------------------------------------

torch::Tensor sampled_pixel_loss(const torch::Tensor& embeddings, const std::vector<int>& labels, double temperature) {
    const auto n = embeddings.size(0);
    TORCH_CHECK(static_cast<std::size_t>(n) == labels.size(), "sampled_pixel_loss: label count mismatch");
    auto lbl = torch::tensor(std::vector<std::int64_t>(labels.begin(), labels.end()), torch::kInt64);
    const auto not_self = torch::eye(n, torch::kBool).logical_not();
    const auto same = lbl.unsqueeze(1).eq(lbl.unsqueeze(0)).logical_and(not_self);
    const auto has_positive = same.any(1);
    if (!has_positive.any().item<bool>()) return {};

    const auto sim = embeddings.matmul(embeddings.t()) / temperature;
    const auto neg_inf = torch::full_like(sim, -std::numeric_limits<double>::infinity());
    const auto anchors = has_positive.nonzero().squeeze(1);
    const auto s = sim.index_select(0, anchors);
    const auto log_num = torch::logsumexp(torch::where(same.index_select(0, anchors), s, neg_inf.index_select(0, anchors)), 1);
    const auto log_den = torch::logsumexp(torch::where(not_self.index_select(0, anchors), s, neg_inf.index_select(0, anchors)), 1);
    return (log_den - log_num).mean();
}

std::vector<std::pair<int, int>> sample_pixels(const DamageMask& labels, int pixels_per_class, Rng& rng,
                                               std::vector<int>* sampled_labels) {
    std::array<std::vector<std::pair<int, int>>, label::num_classes> by_class;
    for (int y = 0; y < labels.height(); ++y)
        for (int x = 0; x < labels.width(); ++x) {
            const auto v = labels(y, x);
            if (v < label::num_classes) by_class[v].emplace_back(y, x);
        }
    int eligible = 0;
    for (const auto& c : by_class) eligible += c.size() >= 2 ? 1 : 0;
    std::vector<std::pair<int, int>> picked;
    if (sampled_labels) sampled_labels->clear();
    if (eligible < 2) return picked;
    for (int c = 0; c < label::num_classes; ++c) {
        auto& pool = by_class[c];
        if (pool.size() < 2) continue;
        const std::size_t take = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(pixels_per_class));
        // Partial Fisher-Yates.
        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng() % (pool.size() - i));
            std::swap(pool[i], pool[j]);
            picked.push_back(pool[i]);
            if (sampled_labels) sampled_labels->push_back(c);
        }
    }
    return picked;
}

std::vector<DamageMask> downsample_labels(const torch::Tensor& masks, int h, int w) {
    std::vector<DamageMask> out;
    for (int64_t i = 0; i < masks.size(0); ++i) out.push_back(data::resize_mask(tensor_to_mask(masks[i]), {h, w}));
    return out;
}

torch::Tensor within_image_loss(const torch::Tensor& embeddings, const std::vector<DamageMask>& labels,
                                const ContrastiveConfig& config, Rng& rng, LossStats* stats) {
    TORCH_CHECK(embeddings.dim() == 4, "within_image_loss: expected N×D×h×w embeddings");
    TORCH_CHECK(static_cast<std::size_t>(embeddings.size(0)) == labels.size(), "within_image_loss: batch mismatch");
    LossStats local;
    std::vector<torch::Tensor> terms;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i].height() != embeddings.size(2) || labels[i].width() != embeddings.size(3))
            throw Error("within_image_loss: labels not aligned to the embedding grid");
        std::vector<int> sampled_labels;
        const auto pixels = sample_pixels(labels[i], config.pixels_per_class, rng, &sampled_labels);
        if (pixels.empty()) {
            ++local.images_skipped;
            continue;
        }
        std::vector<std::int64_t> flat;
        flat.reserve(pixels.size());
        for (auto [y, x] : pixels) flat.push_back(static_cast<std::int64_t>(y) * labels[i].width() + x);
        const auto idx = torch::tensor(flat, torch::kInt64);
        const auto z = embeddings[static_cast<int64_t>(i)].flatten(1).t().index_select(0, idx);  // n×D
        auto term = sampled_pixel_loss(z, sampled_labels, config.temperature);
        if (!term.defined()) {
            ++local.images_skipped;
            continue;
        }
        terms.push_back(term);
        ++local.images_used;
    }
    if (stats) *stats = local;
    if (terms.empty()) {
        log::warn("within_image_loss: no image in the batch has two classes; contributing 0");
        return embeddings.sum() * 0.0;
    }
    return torch::stack(terms).mean();
}

// ---------------------------------------------------------------------------

namespace {

torch::Tensor color_distort(const torch::Tensor& x, Rng& rng) {
    auto out = x.clone();
    for (int64_t i = 0; i < x.size(0); ++i) {
        const double brightness = uniform(rng, -0.2, 0.2);
        const double contrast = uniform(rng, 0.8, 1.2);
        out[i] = ((x[i] * contrast) + brightness).clamp(-1.0, 1.0);
    }
    return out;
}

json pretrained_arch(const ContrastiveModel& model) {
    return json{{"kind", "segnet+projection"}, {"config", model->model->config()}, {"contrastive", model->config}};
}

}  // namespace

ModelCheckpoint pretrain(ContrastiveModel& model, const data::DatasetManifest& train, const ContrastiveConfig& config,
                         const segnet::TrainSchedule& schedule) {
    config.validate();
    if (train.empty()) throw Error("pretrain: training manifest is empty");
    segnet::TrainSchedule s = schedule;
    s.max_epochs = config.pretrain_epochs;
    const auto task = model->model->config().task;
    Rng rng(derive_seed(config.seed, "contrastive-sampling"));
    segnet::LoopHooks hooks;
    hooks.loss = [&](const Batch& b) {
        auto input = segnet::task_input(b, task);
        if (config.use_color_distortion) input = color_distort(input, rng);
        const auto emb = model->forward(input);
        const auto labels = downsample_labels(segnet::task_target(b, task), static_cast<int>(emb.size(2)),
                                              static_cast<int>(emb.size(3)));
        return within_image_loss(emb, labels, config, rng);
    };
    auto result = segnet::run_sgd_loop(*model, model->parameters(), train, s, hooks);
    ModelCheckpoint ckpt;
    ckpt.provenance = CheckpointProvenance::contrastive_pretrained;
    ckpt.arch_config = pretrained_arch(model);
    ckpt.weights = capture_weights(*model);
    ckpt.train_log = std::move(result.log);
    ckpt.train_time_seconds = result.seconds;
    return ckpt;
}

segnet::SegModel model_from_pretrained(const ModelCheckpoint& pretrained) {
    if (pretrained.provenance != CheckpointProvenance::contrastive_pretrained)
        throw Error("finetune: expected a contrastive_pretrained checkpoint, got " + to_string(pretrained.provenance));
    return segnet::load_segmodel(pretrained);
}

ModelCheckpoint finetune(const ModelCheckpoint& pretrained, const data::DatasetManifest& train,
                         const data::DatasetManifest& val, const segnet::TrainSchedule& schedule) {
    auto model = model_from_pretrained(pretrained);
    auto ckpt = segnet::train_vanilla(model, train, val, schedule, CheckpointProvenance::contrastive_finetuned);
    ckpt.train_time_seconds += pretrained.train_time_seconds;
    return ckpt;
}

}  // namespace clifgan::contrastive
