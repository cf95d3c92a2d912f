#include "clifgan/gan.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "clifgan/fuse.hpp"
#include "clifgan/log.hpp"
#include "clifgan/segnet.hpp"
#include "clifgan/tensors.hpp"

namespace clifgan::gan {

using nlohmann::json;
namespace nn = torch::nn;

std::string to_string(Variant v) { return v == Variant::gan1 ? "gan1" : "gan2"; }

Variant variant_from_string(const std::string& s) {
    if (s == "gan1") return Variant::gan1;
    if (s == "gan2") return Variant::gan2;
    throw ConfigError("unknown GAN variant '" + s + "'");
}

void GeneratorConfig::validate() const {
    if (depth < 2 || depth > 8) throw ConfigError("generator: depth must be in [2, 8]");
    if (base_channels < 1) throw ConfigError("generator: base_channels must be >= 1");
}

void DiscriminatorConfig::validate() const {
    if (layers < 1 || layers > 6) throw ConfigError("discriminator: layers must be in [1, 6]");
    if (base_channels < 1) throw ConfigError("discriminator: base_channels must be >= 1");
}

void GanTrainConfig::validate() const {
    if (!(l1_weight >= 0)) throw ConfigError("gan training: l1_weight must be >= 0");
    if (!(lr > 0) || !(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
        throw ConfigError("gan training: invalid Adam parameters");
    if (epochs < 1 || batch_size < 1) throw ConfigError("gan training: epochs and batch_size must be >= 1");
    if (image_size < 8) throw ConfigError("gan training: image_size must be >= 8");
}

void to_json(json& j, const GeneratorConfig& c) {
    j = json{{"variant", to_string(c.variant)}, {"depth", c.depth}, {"base_channels", c.base_channels},
             {"in_channels", c.in_channels()}, {"out_channels", c.out_channels()}};
}

void from_json(const json& j, GeneratorConfig& c) {
    GeneratorConfig d;
    c.variant = variant_from_string(j.value("variant", to_string(d.variant)));
    c.depth = j.value("depth", d.depth);
    c.base_channels = j.value("base_channels", d.base_channels);
    if (j.contains("in_channels") && j.at("in_channels").get<int>() != 4)
        throw ConfigError("generator: in_channels is fixed at 4");
    if (j.contains("out_channels") && j.at("out_channels").get<int>() != c.out_channels())
        throw ConfigError("generator: out_channels does not match the variant");
    c.validate();
}

void to_json(json& j, const DiscriminatorConfig& c) { j = json{{"layers", c.layers}, {"base_channels", c.base_channels}}; }

void from_json(const json& j, DiscriminatorConfig& c) {
    DiscriminatorConfig d;
    c.layers = j.value("layers", d.layers);
    c.base_channels = j.value("base_channels", d.base_channels);
    c.validate();
}

void to_json(json& j, const GanTrainConfig& c) {
    j = json{{"adversarial_loss", c.adversarial_loss == AdversarialLoss::bce ? "bce" : "least_squares"},
             {"l1_weight", c.l1_weight},
             {"lr", c.lr},
             {"beta1", c.beta1},
             {"beta2", c.beta2},
             {"epochs", c.epochs},
             {"batch_size", c.batch_size},
             {"image_size", c.image_size},
             {"seed", c.seed}};
    j["checkpoint_dir"] = c.checkpoint_dir ? json(c.checkpoint_dir->string()) : json(nullptr);
}

void from_json(const json& j, GanTrainConfig& c) {
    GanTrainConfig d;
    const std::string loss = j.value("adversarial_loss", "bce");
    if (loss == "bce") c.adversarial_loss = AdversarialLoss::bce;
    else if (loss == "least_squares" || loss == "lsgan") c.adversarial_loss = AdversarialLoss::least_squares;
    else throw ConfigError("gan training: unknown adversarial_loss '" + loss + "'");
    c.l1_weight = j.value("l1_weight", d.l1_weight);
    c.lr = j.value("lr", d.lr);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.image_size = j.value("image_size", d.image_size);
    c.seed = j.value("seed", d.seed);
    if (j.contains("checkpoint_dir") && !j.at("checkpoint_dir").is_null())
        c.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
    else
        c.checkpoint_dir.reset();
    c.validate();
}

// ---------------------------------------------------------------------------

void MaskEditSpec::validate() const {
    auto check_level = [](int v) {
        if (v < 1 || v > 4) throw ConfigError("mask edit: levels must be in 1..4, got " + std::to_string(v));
    };
    if (mode == EditMode::set_all) check_level(target_level);
    for (const auto& [id, level] : mapping) check_level(level);
    double sum = 0;
    for (double p : level_distribution) {
        if (!(p >= 0)) throw ConfigError("mask edit: level_distribution entries must be >= 0");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("mask edit: level_distribution must sum to 1");
}

namespace {

const char* mode_name(EditMode m) {
    switch (m) {
        case EditMode::set_all: return "set_all";
        case EditMode::per_building_map: return "per_building_map";
        case EditMode::randomize: return "randomize";
    }
    return "?";
}

}  // namespace

void to_json(json& j, const MaskEditSpec& s) {
    json mapping = json::object();
    for (const auto& [id, level] : s.mapping) mapping[std::to_string(id)] = level;
    j = json{{"mode", mode_name(s.mode)},
             {"target_level", s.target_level},
             {"mapping", mapping},
             {"level_distribution", s.level_distribution},
             {"seed", s.seed}};
}

void from_json(const json& j, MaskEditSpec& s) {
    MaskEditSpec d;
    const std::string mode = j.value("mode", "randomize");
    if (mode == "set_all") s.mode = EditMode::set_all;
    else if (mode == "per_building_map") s.mode = EditMode::per_building_map;
    else if (mode == "randomize") s.mode = EditMode::randomize;
    else throw ConfigError("mask edit: unknown mode '" + mode + "'");
    s.target_level = j.value("target_level", d.target_level);
    s.mapping.clear();
    if (j.contains("mapping"))
        for (const auto& [k, v] : j.at("mapping").items()) s.mapping[std::stoi(k)] = v.get<int>();
    s.level_distribution = j.value("level_distribution", d.level_distribution);
    s.seed = j.value("seed", d.seed);
    s.validate();
}

DamageMask edit_mask(const DamageMask& current, const DamageMask& footprints, const MaskEditSpec& spec, Rng& rng) {
    spec.validate();
    if (current.size() != footprints.size()) throw Error("edit_mask: mask and footprint sizes differ");
    for (auto v : footprints.cells())
        if (v > 1) throw Error("edit_mask: footprint values must be 0 or 1");
    const auto [ids, count] = fuse::connected_components(footprints, 1);
    if (count == 0) {
        log::warn("edit_mask: footprint mask is empty; mask returned unchanged");
        return current;
    }
    std::vector<int> level(count + 1, 0);
    for (int b = 1; b <= count; ++b) {
        switch (spec.mode) {
            case EditMode::set_all: level[b] = spec.target_level; break;
            case EditMode::per_building_map: {
                auto it = spec.mapping.find(b);
                level[b] = it == spec.mapping.end() ? -1 : it->second;
                break;
            }
            case EditMode::randomize: {
                const double u = uniform01(rng);
                double acc = 0;
                int pick = 4;
                for (int k = 0; k < 4; ++k) {
                    acc += spec.level_distribution[k];
                    if (u < acc && spec.level_distribution[k] > 0) {
                        pick = k + 1;
                        break;
                    }
                }
                // Guard against rounding past the last nonzero entry.
                while (spec.level_distribution[pick - 1] == 0 && pick > 1) --pick;
                level[b] = pick;
                break;
            }
        }
    }
    DamageMask out(current.size(), 0);
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x) {
            const int b = ids(y, x);
            if (b == 0) continue;
            if (level[b] >= 0) {
                out(y, x) = static_cast<std::uint8_t>(level[b]);
            } else {
                const auto existing = current(y, x);
                out(y, x) = label::is_building(existing) ? existing : label::no_damage;
            }
        }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

int level_channels(int base, int i) { return base * (1 << std::min(i, 3)); }

nn::Conv2d down_conv(int in, int out, bool bias) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(2).padding(1).bias(bias));
}

nn::ConvTranspose2d up_conv(int in, int out, bool bias) {
    return nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1).bias(bias));
}

void pix2pix_init(nn::Module& module) {
    torch::NoGradGuard guard;
    for (auto& m : module.modules(false)) {
        if (auto* conv = m->as<nn::Conv2d>()) {
            conv->weight.normal_(0.0, 0.02);
            if (conv->bias.defined()) conv->bias.zero_();
        } else if (auto* convt = m->as<nn::ConvTranspose2d>()) {
            convt->weight.normal_(0.0, 0.02);
            if (convt->bias.defined()) convt->bias.zero_();
        } else if (auto* bn = m->as<nn::BatchNorm2d>()) {
            bn->weight.normal_(1.0, 0.02);
            bn->bias.zero_();
        }
    }
}

}  // namespace

UnetGeneratorImpl::UnetGeneratorImpl(const GeneratorConfig& cfg) : config(cfg) {
    config.validate();
    const int d = config.depth;
    const int b = config.base_channels;
    down = register_module("down", nn::ModuleList());
    up = register_module("up", nn::ModuleList());

    down->push_back(nn::Sequential(down_conv(config.in_channels(), b, true)));
    for (int i = 1; i < d; ++i) {
        nn::Sequential block(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)),
                             down_conv(level_channels(b, i - 1), level_channels(b, i), i == d - 1));
        if (i != d - 1) block->push_back(nn::BatchNorm2d(level_channels(b, i)));
        down->push_back(block);
    }
    // up[i] consumes the output of down[i] (concatenated with the skip for i < d-1).
    for (int i = 0; i < d; ++i) {
        const int in = i == d - 1 ? level_channels(b, i) : 2 * level_channels(b, i);
        if (i == 0) {
            up->push_back(nn::Sequential(nn::ReLU(), up_conv(in, config.out_channels(), true), nn::Tanh()));
        } else {
            up->push_back(nn::Sequential(nn::ReLU(), up_conv(in, level_channels(b, i - 1), false),
                                         nn::BatchNorm2d(level_channels(b, i - 1))));
        }
    }
    pix2pix_init(*this);
}

torch::Tensor UnetGeneratorImpl::forward(const torch::Tensor& x) {
    const int d = config.depth;
    if (x.dim() != 4 || x.size(1) != config.in_channels())
        throw Error("generator: expected N×4×H×W input");
    const int64_t m = int64_t{1} << d;
    if (x.size(2) % m != 0 || x.size(3) % m != 0) {
        std::ostringstream os;
        os << "generator: H and W must be divisible by 2^depth = " << m << ", got " << x.size(2) << "×" << x.size(3);
        throw ConfigError(os.str());
    }
    std::vector<torch::Tensor> skips;
    torch::Tensor h = x;
    for (int i = 0; i < d; ++i) {
        h = down[i]->as<nn::Sequential>()->forward(h);
        skips.push_back(h);
    }
    for (int i = d - 1; i >= 0; --i) {
        torch::Tensor in = i == d - 1 ? h : torch::cat({h, skips[i]}, 1);
        h = up[i]->as<nn::Sequential>()->forward(in);
    }
    return h;
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int condition_channels, int candidate_channels,
                                               const DiscriminatorConfig& cfg)
    : config(cfg) {
    config.validate();
    const int b = config.base_channels;
    body = register_module("body", nn::Sequential());
    body->push_back(down_conv(condition_channels + candidate_channels, b, true));
    body->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    for (int i = 1; i < config.layers; ++i) {
        body->push_back(down_conv(level_channels(b, i - 1), level_channels(b, i), false));
        body->push_back(nn::BatchNorm2d(level_channels(b, i)));
        body->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    }
    body->push_back(nn::Conv2d(nn::Conv2dOptions(level_channels(b, config.layers - 1), 1, 3).padding(1)));
    pix2pix_init(*this);
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& condition, const torch::Tensor& candidate) {
    return body->forward(torch::cat({condition, candidate}, 1));
}

GanPair build_gan(Variant variant, GeneratorConfig gen_config, const DiscriminatorConfig& disc_config) {
    gen_config.variant = variant;
    GanPair pair;
    pair.generator = UnetGenerator(gen_config);
    pair.discriminator = PatchDiscriminator(gen_config.in_channels(), gen_config.out_channels(), disc_config);
    return pair;
}

int patch_grid_size(int input_size, int layers) {
    int s = input_size;
    for (int i = 0; i < layers; ++i) s = (s + 2 - 4) / 2 + 1;
    return s;
}

// ---------------------------------------------------------------------------

namespace {

torch::Tensor encode_mask_tensor(const torch::Tensor& masks) {
    auto m = masks.clone();
    m.masked_fill_(m.eq(label::ignore), 0);
    return (m.to(torch::kFloat32) / 4.0 * 2.0 - 1.0).unsqueeze(1);
}

}  // namespace

torch::Tensor encode_mask(const DamageMask& mask) { return encode_mask_tensor(mask_to_tensor(mask).unsqueeze(0)); }

std::uint8_t decode_level(double value) {
    const double level = std::round((value + 1.0) / 2.0 * 4.0);
    return static_cast<std::uint8_t>(std::clamp(level, 0.0, 4.0));
}

DamageMask decode_mask(const torch::Tensor& channel) {
    auto t = channel.detach().to(torch::kFloat64).squeeze().contiguous();
    TORCH_CHECK(t.dim() == 2, "decode_mask: expected a single H×W channel");
    DamageMask out({static_cast<int>(t.size(0)), static_cast<int>(t.size(1))}, 0);
    const double* p = t.data_ptr<double>();
    for (std::size_t i = 0; i < out.cells().size(); ++i) out.cells()[i] = decode_level(p[i]);
    return out;
}

torch::Tensor generator_input(const Image& pre_image, const DamageMask& mask) {
    if (pre_image.height() != mask.height() || pre_image.width() != mask.width())
        throw Error("generator input: image and mask sizes differ");
    return torch::cat({image_to_tensor(pre_image), encode_mask(mask)}, 1);
}

namespace {

struct GanTensors {
    torch::Tensor input;
    torch::Tensor target;
};

GanTensors batch_tensors(const Batch& b, Variant variant) {
    const auto mask = encode_mask_tensor(b.post_mask);
    GanTensors t;
    t.input = torch::cat({b.pre, mask}, 1);
    t.target = variant == Variant::gan1 ? b.post : torch::cat({b.post, mask}, 1);
    return t;
}

data::DatasetManifest resized(const data::DatasetManifest& m, int size) {
    data::DatasetManifest out;
    for (std::size_t i = 0; i < m.size(); ++i) {
        auto s = m.load(i);
        out.add(s->size() == Size2{size, size} ? *s : data::resize_tile(*s, {size, size}));
    }
    return out;
}

torch::Tensor adversarial(const torch::Tensor& scores, bool real, AdversarialLoss kind) {
    auto target = real ? torch::ones_like(scores) : torch::zeros_like(scores);
    if (kind == AdversarialLoss::bce) return torch::binary_cross_entropy_with_logits(scores, target);
    return torch::mse_loss(scores, target);
}

json generator_arch(const GeneratorConfig& c) { return json{{"kind", "gan_generator"}, {"config", c}}; }

json discriminator_arch(const PatchDiscriminator& d, const GeneratorConfig& g) {
    return json{{"kind", "gan_discriminator"},
                {"config", d->config},
                {"condition_channels", g.in_channels()},
                {"candidate_channels", g.out_channels()}};
}

}  // namespace

GanTrainResult train_gan(GanPair& gan, const data::DatasetManifest& train, const GanTrainConfig& config) {
    config.validate();
    if (train.empty()) throw Error("train_gan: training manifest is empty");
    const auto start = std::chrono::steady_clock::now();
    auto& G = gan.generator;
    auto& D = gan.discriminator;
    const Variant variant = G->config.variant;
    const auto data = resized(train, config.image_size);
    const auto m = int64_t{1} << G->config.depth;
    if (config.image_size % m != 0)
        throw ConfigError("train_gan: image_size must be divisible by 2^depth = " + std::to_string(m));
    segnet::BatchStream stream(data, config.batch_size, derive_seed(config.seed, "gan-batches"), std::nullopt);

    const auto adam = torch::optim::AdamOptions(config.lr).betas({config.beta1, config.beta2});
    torch::optim::Adam opt_g(G->parameters(), adam);
    torch::optim::Adam opt_d(D->parameters(), adam);

    GanTrainResult result;
    std::vector<TrainLogRecord> g_log;
    int step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        G->train();
        D->train();
        double epoch_g = 0;
        const auto batches = stream.epoch(epoch);
        for (const auto& b : batches) {
            const auto t = batch_tensors(b, variant);
            const auto fake = G->forward(t.input);

            opt_d.zero_grad();
            const auto d_loss = 0.5 * (adversarial(D->forward(t.input, t.target), true, config.adversarial_loss) +
                                       adversarial(D->forward(t.input, fake.detach()), false, config.adversarial_loss));
            d_loss.backward();
            opt_d.step();

            opt_g.zero_grad();
            const auto g_adv = adversarial(D->forward(t.input, fake), true, config.adversarial_loss);
            const auto g_l1 = torch::l1_loss(fake, t.target);
            const auto g_loss = g_adv + config.l1_weight * g_l1;
            const double dv = d_loss.item<double>();
            const double gv = g_loss.item<double>();
            if (!std::isfinite(dv) || !std::isfinite(gv)) {
                std::ostringstream os;
                os << "train_gan: non-finite loss at epoch " << epoch << ", step " << step << " (D " << dv << ", G "
                   << gv << "; samples:";
                for (const auto& id : b.ids) os << ' ' << id;
                os << ')';
                throw Error(os.str());
            }
            g_loss.backward();
            opt_g.step();

            result.trace.push_back({step, dv, g_adv.item<double>(), g_l1.item<double>()});
            epoch_g += gv;
            ++step;
        }
        TrainLogRecord rec;
        rec.epoch = epoch;
        rec.train_loss = epoch_g / static_cast<double>(batches.size());
        rec.val_metric = std::nan("");
        rec.lr = config.lr;
        g_log.push_back(rec);

        if (config.checkpoint_dir) {
            ModelCheckpoint g{CheckpointProvenance::gan_generator, generator_arch(G->config), capture_weights(*G), g_log};
            ModelCheckpoint d{CheckpointProvenance::gan_discriminator, discriminator_arch(D, G->config),
                              capture_weights(*D), {}};
            save_checkpoint(g, *config.checkpoint_dir / "generator.ckpt");
            save_checkpoint(d, *config.checkpoint_dir / "discriminator.ckpt");
        }
    }
    G->eval();
    D->eval();
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.generator = {CheckpointProvenance::gan_generator, generator_arch(G->config), capture_weights(*G), g_log, seconds};
    result.discriminator = {CheckpointProvenance::gan_discriminator, discriminator_arch(D, G->config),
                            capture_weights(*D), {}, seconds};
    return result;
}

double generator_l1(UnetGenerator& generator, const data::DatasetManifest& manifest, int image_size) {
    torch::NoGradGuard guard;
    generator->eval();
    const auto data = resized(manifest, image_size);
    double sum = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto t = batch_tensors(make_batch({data.load(i)}), generator->config.variant);
        sum += torch::l1_loss(generator->forward(t.input), t.target).item<double>();
    }
    return sum / static_cast<double>(data.size());
}

UnetGenerator load_generator(const ModelCheckpoint& ckpt) {
    if (ckpt.provenance != CheckpointProvenance::gan_generator)
        throw Error("expected a gan_generator checkpoint, got " + to_string(ckpt.provenance));
    UnetGenerator g(ckpt.arch_config.at("config").get<GeneratorConfig>());
    restore_weights(*g, ckpt.weights);
    g->eval();
    return g;
}

PatchDiscriminator load_discriminator(const ModelCheckpoint& ckpt) {
    if (ckpt.provenance != CheckpointProvenance::gan_discriminator)
        throw Error("expected a gan_discriminator checkpoint, got " + to_string(ckpt.provenance));
    PatchDiscriminator d(ckpt.arch_config.at("condition_channels").get<int>(),
                         ckpt.arch_config.at("candidate_channels").get<int>(),
                         ckpt.arch_config.at("config").get<DiscriminatorConfig>());
    restore_weights(*d, ckpt.weights);
    d->eval();
    return d;
}

data::TileSample synthesize(UnetGenerator& generator, const Image& pre_image, const DamageMask& desired_mask,
                            const std::string& id) {
    if (pre_image.height() != desired_mask.height() || pre_image.width() != desired_mask.width())
        throw Error("synthesize: image and mask sizes differ");
    torch::NoGradGuard guard;
    generator->eval();
    const auto out = generator->forward(generator_input(pre_image, desired_mask))[0];

    data::TileSample s;
    s.id = id;
    s.pre_image = pre_image;
    s.post_image = tensor_to_image(out.slice(0, 0, 3));
    s.pre_mask = DamageMask(desired_mask.size(), 0);
    for (std::size_t i = 0; i < desired_mask.cells().size(); ++i)
        s.pre_mask.cells()[i] = desired_mask.cells()[i] != label::background ? 1 : 0;
    if (generator->config.variant == Variant::gan1) {
        s.post_mask = desired_mask;
        s.provenance = data::Provenance::gan1_synthetic;
    } else {
        s.post_mask = decode_mask(out[3]);
        s.provenance = data::Provenance::gan2_synthetic;
    }
    return s;
}

data::DatasetManifest augment_dataset(const data::DatasetManifest& base, UnetGenerator& generator, int count,
                                      const MaskEditSpec& edit_spec, Rng& rng) {
    if (count <= 0) throw ConfigError("augment_dataset: count must be > 0");
    if (base.empty()) throw Error("augment_dataset: base manifest is empty");
    edit_spec.validate();
    data::DatasetManifest out;
    out.split_tag = base.split_tag;
    out.source_note = base.source_note;
    out.base_dir = base.base_dir;
    for (const auto& e : base.entries()) out.add(e);
    const std::string tag = to_string(generator->config.variant);
    for (int k = 0; k < count; ++k) {
        const auto src = base.load(static_cast<std::size_t>(k) % base.size());
        DamageMask footprints(src->pre_mask.size(), 0);
        for (std::size_t i = 0; i < footprints.cells().size(); ++i)
            footprints.cells()[i] = src->pre_mask.cells()[i] == 1 ? 1 : 0;
        const auto desired = edit_mask(src->post_mask, footprints, edit_spec, rng);
        char suffix[32];
        std::snprintf(suffix, sizeof suffix, "_%s_%05d", tag.c_str(), k);
        out.add(synthesize(generator, src->pre_image, desired, src->id + suffix));
    }
    out.note("appended " + std::to_string(count) + " " + tag + " synthetic samples");
    return out;
}

}  // namespace clifgan::gan
