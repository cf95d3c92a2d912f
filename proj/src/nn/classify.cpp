#include "clifgan/classify.hpp"

#include "clifgan/fuse.hpp"
#include "clifgan/metrics.hpp"

namespace clifgan::classify {

using nlohmann::json;
namespace nn = torch::nn;
namespace F = torch::nn::functional;

FusionHeadImpl::FusionHeadImpl(int feature_channels, int head_channels, int num_classes) {
    body = register_module(
        "body", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(2 * feature_channels, head_channels, 3).padding(1).bias(false)),
                               nn::BatchNorm2d(head_channels), nn::ReLU(),
                               nn::Conv2d(nn::Conv2dOptions(head_channels, num_classes, 1))));
}

torch::Tensor FusionHeadImpl::forward(const torch::Tensor& pre_features, const torch::Tensor& post_features) {
    return body->forward(torch::cat({pre_features, post_features}, 1));
}

SiameseClassifierImpl::SiameseClassifierImpl(segnet::SegModel ex, int hc) : head_channels(hc) {
    if (hc < 1) throw ConfigError("siamese: head_channels must be >= 1");
    extractor = register_module("extractor", std::move(ex));
    head = register_module("head", FusionHead(extractor->feature_channels(), hc, label::num_classes));
}

torch::Tensor SiameseClassifierImpl::forward(const torch::Tensor& pre, const torch::Tensor& post) {
    if (pre.sizes() != post.sizes()) throw Error("siamese: pre and post inputs differ in size");
    const auto features = extractor->features(torch::cat({pre, post}, 0)).chunk(2, 0);
    const auto logits = head(features[0], features[1]);
    return F::interpolate(logits, F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{pre.size(2), pre.size(3)})
                                      .mode(torch::kBilinear)
                                      .align_corners(false));
}

SiameseClassifier build_siamese(const ModelCheckpoint& seg_ckpt, int head_channels) {
    if (seg_ckpt.provenance != CheckpointProvenance::vanilla &&
        seg_ckpt.provenance != CheckpointProvenance::contrastive_finetuned)
        throw Error("build_siamese: segmentation checkpoint must be vanilla or contrastive_finetuned, got " +
                    to_string(seg_ckpt.provenance));
    return SiameseClassifier(segnet::load_segmodel(seg_ckpt), head_channels);
}

json siamese_arch(const SiameseClassifier& classifier) {
    return json{{"kind", "siamese"}, {"segnet", classifier->extractor->config()}, {"head_channels", classifier->head_channels}};
}

namespace {

DamageMask predict_raw(SiameseClassifier& c, const Image& pre, const Image& post) {
    torch::NoGradGuard guard;
    c->eval();
    return tensor_to_mask(argmax_labels(c->forward(image_to_tensor(pre), image_to_tensor(post)))[0]);
}

}  // namespace

ModelCheckpoint train_classifier(SiameseClassifier& classifier, const data::DatasetManifest& train,
                                 const data::DatasetManifest& val, const segnet::TrainSchedule& schedule,
                                 bool freeze_extractor) {
    if (train.empty()) throw Error("train_classifier: training manifest is empty");
    if (val.empty()) throw Error("train_classifier: validation manifest is empty; validation is mandatory");
    std::vector<torch::Tensor> params =
        freeze_extractor ? classifier->head->parameters() : classifier->parameters();
    if (freeze_extractor)
        for (auto& p : classifier->extractor->parameters()) p.set_requires_grad(false);

    segnet::LoopHooks hooks;
    hooks.loss = [&](const Batch& b) {
        return masked_cross_entropy(classifier->forward(b.pre, b.post), b.post_mask);
    };
    hooks.set_train_mode = [&] {
        classifier->train();
        if (freeze_extractor) classifier->extractor->eval();
    };
    hooks.validate = [&] {
        metrics::ConfusionMatrix cm;
        for (std::size_t i = 0; i < val.size(); ++i) {
            const auto s = val.load(i);
            cm.add(predict_raw(classifier, s->pre_image, s->post_image), s->post_mask);
        }
        if (schedule.early_stop_metric == segnet::EarlyStopMetric::seg_f1) return metrics::seg_f1(cm);
        return metrics::cls_f1(cm).overall.value_or(0.0);
    };
    auto result = segnet::run_sgd_loop(*classifier, params, train, schedule, hooks);
    if (freeze_extractor)
        for (auto& p : classifier->extractor->parameters()) p.set_requires_grad(true);

    ModelCheckpoint ckpt;
    ckpt.provenance = CheckpointProvenance::siamese;
    ckpt.arch_config = siamese_arch(classifier);
    ckpt.arch_config["frozen_extractor"] = freeze_extractor;
    ckpt.weights = capture_weights(*classifier);
    ckpt.train_log = std::move(result.log);
    ckpt.train_time_seconds = result.seconds;
    return ckpt;
}

SiameseClassifier load_classifier(const ModelCheckpoint& ckpt) {
    if (ckpt.provenance != CheckpointProvenance::siamese)
        throw Error("expected a siamese checkpoint, got " + to_string(ckpt.provenance));
    auto cfg = ckpt.arch_config.at("segnet").get<segnet::SegModelConfig>();
    cfg.backbone.pretrained = false;
    SiameseClassifier c(segnet::SegModel(cfg), ckpt.arch_config.at("head_channels").get<int>());
    restore_weights(*c, ckpt.weights);
    c->eval();
    return c;
}

DamageMask building_majority(const DamageMask& prediction, const DamageMask& footprints) {
    if (prediction.size() != footprints.size()) throw Error("building_majority: size mismatch");
    DamageMask binary(footprints.size(), 0);
    for (std::size_t i = 0; i < binary.cells().size(); ++i)
        binary.cells()[i] = label::is_building(footprints.cells()[i]) ? 1 : 0;
    const auto [ids, count] = fuse::connected_components(binary, 1);
    std::vector<std::array<int, 5>> votes(count + 1, std::array<int, 5>{});
    for (std::size_t i = 0; i < prediction.cells().size(); ++i) {
        const int b = ids.cells()[i];
        const auto v = prediction.cells()[i];
        if (b > 0 && label::is_building(v)) ++votes[b][v];
    }
    std::vector<int> winner(count + 1, 0);
    for (int b = 1; b <= count; ++b)
        for (int c = 1; c <= 4; ++c)
            if (votes[b][c] > 0 && votes[b][c] >= votes[b][winner[b]]) winner[b] = c;
    DamageMask out = prediction;
    for (std::size_t i = 0; i < out.cells().size(); ++i) {
        const int b = ids.cells()[i];
        if (b > 0 && winner[b] > 0) out.cells()[i] = static_cast<std::uint8_t>(winner[b]);
    }
    return out;
}

DamageMask predict_damage(SiameseClassifier& classifier, const Image& pre_image, const Image& post_image,
                          bool building_level, const DamageMask* footprints) {
    if (pre_image.height() != post_image.height() || pre_image.width() != post_image.width())
        throw Error("predict_damage: pre and post images differ in size");
    auto mask = predict_raw(classifier, pre_image, post_image);
    if (!building_level) return mask;
    return building_majority(mask, footprints ? *footprints : mask);
}

}  // namespace clifgan::classify
