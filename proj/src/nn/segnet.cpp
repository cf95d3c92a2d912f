#include "clifgan/segnet.hpp"

#include <algorithm>
#include <cmath>

namespace clifgan::segnet {

namespace F = torch::nn::functional;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configs

std::vector<StageSpec> BackboneConfig::mobilenet_v2_stages() {
    return {{1, 16, 1, 1}, {6, 24, 2, 2}, {6, 32, 3, 2}, {6, 64, 4, 2},
            {6, 96, 3, 1}, {6, 160, 3, 2}, {6, 320, 1, 1}};
}

std::vector<StageSpec> BackboneConfig::resnet50_stages() {
    return {{4, 64, 3, 1}, {4, 128, 4, 2}, {4, 256, 6, 2}, {4, 512, 3, 2}};
}

namespace {

int stem_stride(BackboneKind kind) { return kind == BackboneKind::mobilenet_class ? 2 : 4; }

int make_divisible(double v, int divisor = 8) {
    int nv = std::max(divisor, static_cast<int>(v + divisor / 2.0) / divisor * divisor);
    if (nv < 0.9 * v) nv += divisor;
    return nv;
}

std::string kind_name(BackboneKind k) { return k == BackboneKind::mobilenet_class ? "mobilenet_class" : "resnet50_class"; }

BackboneKind kind_from(const std::string& s) {
    if (s == "mobilenet_class") return BackboneKind::mobilenet_class;
    if (s == "resnet50_class") return BackboneKind::resnet50_class;
    throw ConfigError("unknown backbone kind '" + s + "'");
}

}  // namespace

void BackboneConfig::validate() const {
    if (!(width_multiplier > 0)) throw ConfigError("backbone: width_multiplier must be > 0");
    if (output_stride != 8 && output_stride != 16) throw ConfigError("backbone: output_stride must be 8 or 16");
    if (stage_spec.empty()) throw ConfigError("backbone: stage_spec is empty");
    int stride = stem_stride(kind);
    bool has_low = stride == 4;
    for (const auto& s : stage_spec) {
        if (s.expansion < 1 || s.channels < 1 || s.repeats < 1 || (s.stride != 1 && s.stride != 2))
            throw ConfigError("backbone: invalid stage spec entry");
        stride *= s.stride;
        has_low = has_low || stride == 4;
    }
    if (!has_low) throw ConfigError("backbone: no stage reaches stride 4 for low-level features");
    if (stride < output_stride) throw ConfigError("backbone: stages never reach the output stride");
}

SegModelConfig SegModelConfig::desk(double width) {
    SegModelConfig c;
    c.backbone.width_multiplier = width;
    c.backbone.output_stride = 8;
    c.backbone.stage_spec = {{1, 16, 1, 1}, {6, 24, 2, 2}, {6, 32, 2, 2}, {6, 64, 2, 2}, {6, 96, 1, 1}};
    c.aspp_rates = {2, 4, 6};
    c.aspp_channels = 32;
    c.low_level_channels = 12;
    c.decoder_channels = 32;
    return c;
}

void SegModelConfig::validate() const {
    backbone.validate();
    if (aspp_rates.empty()) throw ConfigError("segmodel: aspp_rates is empty");
    for (std::size_t i = 0; i < aspp_rates.size(); ++i) {
        if (aspp_rates[i] <= 0) throw ConfigError("segmodel: aspp_rates must be positive");
        if (i > 0 && aspp_rates[i] <= aspp_rates[i - 1]) throw ConfigError("segmodel: aspp_rates must be strictly increasing");
    }
    if (num_classes < 2) throw ConfigError("segmodel: num_classes must be >= 2");
    if (aspp_channels < 1 || low_level_channels < 1 || decoder_channels < 1)
        throw ConfigError("segmodel: channel counts must be positive");
    if (task == SegTask::damage && num_classes != label::num_classes)
        throw ConfigError("segmodel: damage task needs 5 classes");
    if (task == SegTask::footprint && num_classes != 2) throw ConfigError("segmodel: footprint task needs 2 classes");
}

void to_json(json& j, const StageSpec& s) { j = json::array({s.expansion, s.channels, s.repeats, s.stride}); }

void from_json(const json& j, StageSpec& s) {
    s.expansion = j.at(0).get<int>();
    s.channels = j.at(1).get<int>();
    s.repeats = j.at(2).get<int>();
    s.stride = j.at(3).get<int>();
}

void to_json(json& j, const BackboneConfig& c) {
    j = json{{"kind", kind_name(c.kind)},
             {"width_multiplier", c.width_multiplier},
             {"stage_spec", c.stage_spec},
             {"output_stride", c.output_stride},
             {"pretrained", c.pretrained},
             {"pretrained_path", c.pretrained_path}};
}

void from_json(const json& j, BackboneConfig& c) {
    BackboneConfig d;
    c.kind = kind_from(j.value("kind", kind_name(d.kind)));
    c.width_multiplier = j.value("width_multiplier", d.width_multiplier);
    if (j.contains("stage_spec"))
        c.stage_spec = j.at("stage_spec").get<std::vector<StageSpec>>();
    else
        c.stage_spec = c.kind == BackboneKind::resnet50_class ? BackboneConfig::resnet50_stages() : d.stage_spec;
    c.output_stride = j.value("output_stride", d.output_stride);
    c.pretrained = j.value("pretrained", d.pretrained);
    c.pretrained_path = j.value("pretrained_path", d.pretrained_path);
    c.validate();
}

void to_json(json& j, const SegModelConfig& c) {
    j = json{{"backbone", c.backbone},
             {"aspp_rates", c.aspp_rates},
             {"aspp_channels", c.aspp_channels},
             {"low_level_channels", c.low_level_channels},
             {"decoder_channels", c.decoder_channels},
             {"num_classes", c.num_classes},
             {"separable_convs", c.separable_convs},
             {"task", c.task == SegTask::damage ? "damage" : "footprint"}};
}

void from_json(const json& j, SegModelConfig& c) {
    SegModelConfig d;
    c.backbone = j.contains("backbone") ? j.at("backbone").get<BackboneConfig>() : d.backbone;
    c.aspp_rates = j.value("aspp_rates", d.aspp_rates);
    c.aspp_channels = j.value("aspp_channels", d.aspp_channels);
    c.low_level_channels = j.value("low_level_channels", d.low_level_channels);
    c.decoder_channels = j.value("decoder_channels", d.decoder_channels);
    const std::string task = j.value("task", "damage");
    if (task != "damage" && task != "footprint") throw ConfigError("segmodel: unknown task '" + task + "'");
    c.task = task == "damage" ? SegTask::damage : SegTask::footprint;
    c.num_classes = j.value("num_classes", c.task == SegTask::damage ? 5 : 2);
    c.separable_convs = j.value("separable_convs", d.separable_convs);
    c.validate();
}

// ---------------------------------------------------------------------------
// Layers

ConvBnActImpl::ConvBnActImpl(int in, int out, int kernel, int stride, int dilation, int groups, bool act, bool r6)
    : activation(act), relu6(r6) {
    const int pad = dilation * (kernel - 1) / 2;
    conv = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel)
                                                         .stride(stride)
                                                         .padding(pad)
                                                         .dilation(dilation)
                                                         .groups(groups)
                                                         .bias(false)));
    bn = register_module("bn", torch::nn::BatchNorm2d(out));
}

torch::Tensor ConvBnActImpl::forward(const torch::Tensor& x) {
    auto y = bn(conv(x));
    if (!activation) return y;
    return relu6 ? torch::clamp(y, 0.0, 6.0) : torch::relu(y);
}

InvertedResidualImpl::InvertedResidualImpl(int in, int out, int stride, int dilation, int expansion)
    : use_residual(stride == 1 && in == out) {
    body = torch::nn::Sequential();
    const int hidden = in * expansion;
    if (expansion != 1) body->push_back(ConvBnAct(in, hidden, 1, 1, 1, 1, true, true));
    body->push_back(ConvBnAct(hidden, hidden, 3, stride, dilation, hidden, true, true));
    body->push_back(ConvBnAct(hidden, out, 1, 1, 1, 1, false));
    register_module("body", body);
}

torch::Tensor InvertedResidualImpl::forward(const torch::Tensor& x) {
    auto y = body->forward(x);
    return use_residual ? x + y : y;
}

BottleneckImpl::BottleneckImpl(int in, int mid, int expansion, int stride, int dilation) {
    const int out = mid * expansion;
    body = torch::nn::Sequential(ConvBnAct(in, mid, 1), ConvBnAct(mid, mid, 3, stride, dilation),
                                 ConvBnAct(mid, out, 1, 1, 1, 1, false));
    register_module("body", body);
    shortcut = torch::nn::Sequential();
    if (stride != 1 || in != out) shortcut->push_back(ConvBnAct(in, out, 1, stride, 1, 1, false));
    register_module("shortcut", shortcut);
}

torch::Tensor BottleneckImpl::forward(const torch::Tensor& x) {
    auto s = shortcut->is_empty() ? x : shortcut->forward(x);
    return torch::relu(body->forward(x) + s);
}

BackboneImpl::BackboneImpl(const BackboneConfig& config) {
    config.validate();
    const double w = config.width_multiplier;
    stages = torch::nn::ModuleList();
    int stride = 0;
    int in = 0;
    if (config.kind == BackboneKind::mobilenet_class) {
        in = make_divisible(32 * w);
        stem = torch::nn::Sequential(ConvBnAct(3, in, 3, 2, 1, 1, true, true));
        stride = 2;
    } else {
        in = make_divisible(64 * w);
        stem = torch::nn::Sequential(ConvBnAct(3, in, 7, 2), torch::nn::MaxPool2d(
                                                                  torch::nn::MaxPool2dOptions(3).stride(2).padding(1)));
        stride = 4;
    }
    register_module("stem", stem);
    if (stride == 4) low_channels_ = in;

    int dilation = 1;
    for (const auto& spec : config.stage_spec) {
        int s = spec.stride;
        if (stride * s > config.output_stride) {
            dilation *= s;
            s = 1;
        } else {
            stride *= s;
        }
        const int out = make_divisible(spec.channels * w);
        torch::nn::Sequential stage;
        for (int r = 0; r < spec.repeats; ++r) {
            const int block_stride = r == 0 ? s : 1;
            if (config.kind == BackboneKind::mobilenet_class) {
                stage->push_back(InvertedResidual(in, out, block_stride, dilation, spec.expansion));
                in = out;
            } else {
                stage->push_back(Bottleneck(in, out, spec.expansion, block_stride, dilation));
                in = out * spec.expansion;
            }
        }
        stages->push_back(stage);
        stage_strides_.push_back(stride);
        if (stride == 4) low_channels_ = in;
    }
    out_channels_ = in;
    register_module("stages", stages);
}

BackboneOutput BackboneImpl::forward(const torch::Tensor& x) {
    BackboneOutput out;
    auto y = stem->forward(x);
    if (stage_strides_.empty() || stage_strides_.front() != 4) out.low_level = y;
    for (std::size_t i = 0; i < stages->size(); ++i) {
        y = stages[i]->as<torch::nn::SequentialImpl>()->forward(y);
        if (stage_strides_[i] == 4) out.low_level = y;
    }
    out.high_level = y;
    return out;
}

SeparableConvImpl::SeparableConvImpl(int in, int out, int dilation) {
    depthwise = register_module("depthwise", ConvBnAct(in, in, 3, 1, dilation, in));
    pointwise = register_module("pointwise", ConvBnAct(in, out, 1));
}

torch::Tensor SeparableConvImpl::forward(const torch::Tensor& x) { return pointwise(depthwise(x)); }

AsppImpl::AsppImpl(int in, int out, const std::vector<int>& rates, bool separable) {
    branches = torch::nn::ModuleList();
    branches->push_back(ConvBnAct(in, out, 1));
    for (int r : rates) {
        if (separable)
            branches->push_back(SeparableConv(in, out, r));
        else
            branches->push_back(ConvBnAct(in, out, 3, 1, r));
    }
    register_module("branches", branches);
    // Image-level branch has no BN: its 1×1 map cannot be batch-normalized
    // for single-image batches.
    pool_conv = register_module("pool_conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1)));
    project = register_module("project", ConvBnAct(out * static_cast<int>(rates.size() + 2), out, 1));
}

torch::Tensor AsppImpl::forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> outs;
    for (const auto& b : *branches) {
        if (auto sep = b->as<SeparableConvImpl>())
            outs.push_back(sep->forward(x));
        else
            outs.push_back(b->as<ConvBnActImpl>()->forward(x));
    }
    auto pooled = torch::relu(pool_conv(F::adaptive_avg_pool2d(x, F::AdaptiveAvgPool2dFuncOptions(1))));
    outs.push_back(pooled.expand({-1, -1, x.size(2), x.size(3)}));
    return project(torch::cat(outs, 1));
}

DecoderImpl::DecoderImpl(int low_in, int low_out, int aspp_channels, int out, bool separable) {
    reduce = register_module("reduce", ConvBnAct(low_in, low_out, 1));
    if (separable)
        fuse = torch::nn::Sequential(SeparableConv(low_out + aspp_channels, out, 1), SeparableConv(out, out, 1));
    else
        fuse = torch::nn::Sequential(ConvBnAct(low_out + aspp_channels, out, 3), ConvBnAct(out, out, 3));
    register_module("fuse", fuse);
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& low_level, const torch::Tensor& aspp_out) {
    auto low = reduce(low_level);
    auto up = F::interpolate(aspp_out, F::InterpolateFuncOptions()
                                           .size(std::vector<int64_t>{low.size(2), low.size(3)})
                                           .mode(torch::kBilinear)
                                           .align_corners(false));
    return fuse->forward(torch::cat({low, up}, 1));
}

SegModelImpl::SegModelImpl(SegModelConfig config) : config_(std::move(config)) {
    config_.validate();
    backbone = register_module("backbone", Backbone(config_.backbone));
    aspp = register_module("aspp", Aspp(backbone->out_channels(), config_.aspp_channels, config_.aspp_rates,
                                        config_.separable_convs));
    decoder = register_module("decoder", Decoder(backbone->low_level_channels(), config_.low_level_channels,
                                                 config_.aspp_channels, config_.decoder_channels,
                                                 config_.separable_convs));
    classifier = register_module(
        "classifier", torch::nn::Conv2d(torch::nn::Conv2dOptions(config_.decoder_channels, config_.num_classes, 1)));
}

void SegModelImpl::check_input(const torch::Tensor& x) const {
    if (x.dim() != 4 || x.size(1) != 3) throw ConfigError("segmodel: expected N×3×H×W input");
    const int os = config_.backbone.output_stride;
    if (x.size(2) % os != 0 || x.size(3) % os != 0)
        throw ConfigError("segmodel: input H and W must be divisible by the output stride " + std::to_string(os) +
                          " (got " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) + ")");
}

torch::Tensor SegModelImpl::features(const torch::Tensor& x) {
    check_input(x);
    auto bb = backbone->forward(x);
    return decoder->forward(bb.low_level, aspp->forward(bb.high_level));
}

torch::Tensor SegModelImpl::forward(const torch::Tensor& x) {
    auto logits = classifier(features(x));
    return F::interpolate(logits, F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{x.size(2), x.size(3)})
                                      .mode(torch::kBilinear)
                                      .align_corners(false));
}

SegModel build_segmodel(const SegModelConfig& config) {
    SegModel model(config);
    if (config.backbone.pretrained) {
        if (config.backbone.pretrained_path.empty())
            throw ConfigError("backbone.pretrained is set but pretrained_path is empty");
        const auto ckpt = load_checkpoint(config.backbone.pretrained_path);
        restore_weights(*model->backbone, ckpt.weights, "backbone.");
    }
    return model;
}

std::int64_t parameter_count(const torch::nn::Module& module) {
    std::int64_t n = 0;
    for (const auto& p : module.parameters()) n += p.numel();
    return n;
}

}  // namespace clifgan::segnet
