#include "clifgan/cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "clifgan/ensemble.hpp"
#include "clifgan/image_io.hpp"
#include "clifgan/log.hpp"
#include "clifgan/overlay.hpp"

namespace clifgan::cli {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

void PipelineConfig::validate() const {
    if (!(data_fraction > 0 && data_fraction <= 1)) throw ConfigError("data_fraction must be in (0, 1]");
    if (use_gan != "none" && use_gan != "gan1" && use_gan != "gan2")
        throw ConfigError("gan must be one of none, gan1, gan2 (got '" + use_gan + "')");
    synthetic.validate();
    if (synthetic_count < 2) throw ConfigError("data.count must be >= 2");
    if (!(train_fraction > 0 && train_fraction < 1)) throw ConfigError("data.train_fraction must be in (0, 1)");
    segnet.validate();
    train_seg.validate();
    contrastive.validate();
    pretrain.validate();
    finetune.validate();
    generator.validate();
    discriminator.validate();
    gan_train.validate();
    edit.validate();
    if (head_channels < 1) throw ConfigError("classify.head_channels must be >= 1");
    train_cls.validate();
    morphology.validate();
}

void to_json(json& j, const PipelineConfig& c) {
    j = json{{"seed", c.seed},
             {"out", c.out.string()},
             {"data_fraction", c.data_fraction},
             {"use_gan", c.use_gan},
             {"data",
              {{"synthetic", c.synthetic},
               {"count", c.synthetic_count},
               {"train_fraction", c.train_fraction},
               {"ingest", c.ingest}}},
             {"segnet", c.segnet},
             {"train_seg", c.train_seg},
             {"contrastive", c.contrastive},
             {"pretrain", c.pretrain},
             {"finetune", c.finetune},
             {"gan",
              {{"generator", c.generator},
               {"discriminator", c.discriminator},
               {"train", c.gan_train},
               {"edit", c.edit}}},
             {"classify",
              {{"head_channels", c.head_channels}, {"freeze_extractor", c.freeze_extractor}, {"schedule", c.train_cls}}},
             {"fuse", c.morphology},
             {"metrics", {{"aggregation", metrics::to_string(c.aggregation)}}}};
}

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [k, v] : j.items()) {
        bool known = false;
        for (const char* a : allowed) known |= k == a;
        if (!known) throw ConfigError(where + ": unknown key '" + k + "'");
    }
}

segnet::SegModelConfig parse_segnet(const json& j) {
    if (j.is_string()) {
        if (j.get<std::string>() != "desk") throw ConfigError("segnet: the only named preset is 'desk'");
        return segnet::SegModelConfig::desk();
    }
    if (j.contains("desk_width")) {
        auto c = segnet::SegModelConfig::desk(j.at("desk_width").get<double>());
        if (j.contains("task")) {
            json patch = c;
            patch["task"] = j.at("task");
            patch.erase("num_classes");
            return patch.get<segnet::SegModelConfig>();
        }
        return c;
    }
    return j.get<segnet::SegModelConfig>();
}

}  // namespace

void from_json(const json& j, PipelineConfig& c) {
    try {
        check_keys(j, "config", {"seed", "out", "data_fraction", "use_gan", "data", "segnet", "train_seg", "contrastive",
                                 "pretrain", "finetune", "gan", "classify", "fuse", "metrics"});
        c.seed = j.value("seed", c.seed);
        if (j.contains("out")) c.out = j.at("out").get<std::string>();
        c.data_fraction = j.value("data_fraction", c.data_fraction);
        c.use_gan = j.value("use_gan", c.use_gan);
        if (j.contains("data")) {
            const auto& d = j.at("data");
            check_keys(d, "data", {"synthetic", "count", "train_fraction", "ingest"});
            if (d.contains("synthetic")) c.synthetic = d.at("synthetic").get<data::SyntheticSceneSpec>();
            c.synthetic_count = d.value("count", c.synthetic_count);
            c.train_fraction = d.value("train_fraction", c.train_fraction);
            if (d.contains("ingest")) c.ingest = d.at("ingest").get<data::IngestConfig>();
        }
        if (j.contains("segnet")) c.segnet = parse_segnet(j.at("segnet"));
        if (j.contains("train_seg")) c.train_seg = j.at("train_seg").get<segnet::TrainSchedule>();
        if (j.contains("contrastive")) c.contrastive = j.at("contrastive").get<contrastive::ContrastiveConfig>();
        if (j.contains("pretrain")) c.pretrain = j.at("pretrain").get<segnet::TrainSchedule>();
        if (j.contains("finetune")) c.finetune = j.at("finetune").get<segnet::TrainSchedule>();
        if (j.contains("gan")) {
            const auto& g = j.at("gan");
            check_keys(g, "gan", {"generator", "discriminator", "train", "edit"});
            if (g.contains("generator")) c.generator = g.at("generator").get<gan::GeneratorConfig>();
            if (g.contains("discriminator")) c.discriminator = g.at("discriminator").get<gan::DiscriminatorConfig>();
            if (g.contains("train")) c.gan_train = g.at("train").get<gan::GanTrainConfig>();
            if (g.contains("edit")) c.edit = g.at("edit").get<gan::MaskEditSpec>();
        }
        if (j.contains("classify")) {
            const auto& k = j.at("classify");
            check_keys(k, "classify", {"head_channels", "freeze_extractor", "schedule"});
            c.head_channels = k.value("head_channels", c.head_channels);
            c.freeze_extractor = k.value("freeze_extractor", c.freeze_extractor);
            if (k.contains("schedule")) c.train_cls = k.at("schedule").get<segnet::TrainSchedule>();
        }
        if (j.contains("fuse")) c.morphology = j.at("fuse").get<fuse::MorphologyConfig>();
        if (j.contains("metrics")) {
            check_keys(j.at("metrics"), "metrics", {"aggregation"});
            c.aggregation = metrics::aggregation_from_string(j.at("metrics").value("aggregation", "micro"));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
}

PipelineConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json j;
    try {
        j = json::parse(in, nullptr, true, true);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return j.get<PipelineConfig>();
}

std::uint64_t stage_seed(const PipelineConfig& c, const std::string& stage) { return derive_seed(c.seed, stage); }

// ---------------------------------------------------------------------------
// Run manifest

namespace {

std::string iso_time(std::chrono::system_clock::time_point t) {
    const std::time_t tt = std::chrono::system_clock::to_time_t(t);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string file_hash(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return "missing";
    std::ostringstream ss;
    ss << in.rdbuf();
    char buf[32];
    std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(fnv1a(ss.str())));
    return buf;
}

class RunRecorder {
public:
    RunRecorder(std::string command, std::vector<std::string> args)
        : command_(std::move(command)), args_(std::move(args)), start_(std::chrono::system_clock::now()),
          steady_start_(std::chrono::steady_clock::now()) {}

    void config(const PipelineConfig& c) {
        config_ = c;
        seed_ = c.seed;
    }
    void input(const fs::path& p) { inputs_[p.string()] = file_hash(p); }
    void output(const fs::path& p) { outputs_.push_back(p.string()); }

    fs::path write(const fs::path& out_dir, int exit_code, const std::string& error) const {
        const auto end = std::chrono::system_clock::now();
        json j{{"command", command_},
               {"argv", args_},
               {"config", config_},
               {"seed", seed_},
               {"inputs", inputs_},
               {"outputs", outputs_},
               {"start", iso_time(start_)},
               {"end", iso_time(end)},
               {"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - steady_start_).count()},
               {"exit_code", exit_code}};
        if (!error.empty()) j["error"] = error;
        const fs::path dir = out_dir / "runs";
        fs::create_directories(dir);
        char stamp[32];
        const std::time_t tt = std::chrono::system_clock::to_time_t(start_);
        std::tm tm{};
        gmtime_r(&tt, &tm);
        std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%S", &tm);
        fs::path path;
        for (int k = 0;; ++k) {
            path = dir / (std::string(stamp) + "_" + command_ + (k ? "_" + std::to_string(k) : "") + ".json");
            if (!fs::exists(path)) break;
        }
        std::ofstream(path) << j.dump(2) << '\n';
        return path;
    }

private:
    std::string command_;
    std::vector<std::string> args_;
    json config_ = nullptr;
    std::uint64_t seed_ = 0;
    std::map<std::string, std::string> inputs_;
    std::vector<std::string> outputs_;
    std::chrono::system_clock::time_point start_;
    std::chrono::steady_clock::time_point steady_start_;
};

// ---------------------------------------------------------------------------
// Commands

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<double> data_fraction;
    std::optional<std::string> gan;

    std::optional<int> count;
    std::string labels_dir, images_dir;
    std::string train, val, test, base;
    std::string name;
    std::string generator, pretrained, seg;
    bool freeze = false;
    std::vector<std::string> members;
    std::string ensemble, model;
    std::string stage = "fused";
    std::string method, dataset;
    int table = 0;
    std::vector<std::string> reports;
    std::string image, mask;
    int limit = 4;
    std::string on = "post";
    double alpha = overlay::default_alpha;
};

struct Context {
    PipelineConfig cfg;
    Options opt;
    RunRecorder& rec;
    std::ostream& out;

    fs::path under_out(const fs::path& p) const { return cfg.out / p; }
    fs::path or_default(const std::string& given, const fs::path& fallback) const {
        return given.empty() ? under_out(fallback) : fs::path(given);
    }
};

data::DatasetManifest read_manifest(Context& ctx, const fs::path& p) {
    ctx.rec.input(p);
    return data::load_manifest(p);
}

void write_checkpoint(Context& ctx, ModelCheckpoint& ckpt, const fs::path& path) {
    const auto bytes = save_checkpoint(ckpt, path);
    ctx.rec.output(path);
    if (!ckpt.train_log.empty()) {
        const fs::path log_path = path.parent_path() / (path.stem().string() + "_log.jsonl");
        write_train_log(ckpt.train_log, log_path);
        ctx.rec.output(log_path);
    }
    ctx.out << "wrote " << path.string() << " (" << bytes << " bytes, " << ckpt.train_time_seconds << " s)\n";
}

ModelCheckpoint read_checkpoint(Context& ctx, const fs::path& p) {
    ctx.rec.input(p);
    return load_checkpoint(p);
}

fs::path generator_path(const Context& ctx, const std::string& variant) {
    return ctx.or_default(ctx.opt.generator, fs::path("gan") / variant / "generator.ckpt");
}

data::DatasetManifest with_synthetic(Context& ctx, const data::DatasetManifest& base, const std::string& variant,
                                     int count) {
    auto g_ckpt = read_checkpoint(ctx, generator_path(ctx, variant));
    auto generator = gan::load_generator(g_ckpt);
    if (gan::to_string(generator->config.variant) != variant)
        throw Error("generator checkpoint is " + gan::to_string(generator->config.variant) + ", expected " + variant);
    Rng rng(stage_seed(ctx.cfg, "augment:" + variant));
    return gan::augment_dataset(base, generator, count, ctx.cfg.edit, rng);
}

/// Training manifest after --data-fraction subsampling and --gan augmentation.
data::DatasetManifest training_set(Context& ctx, const fs::path& path) {
    auto m = read_manifest(ctx, path);
    if (ctx.cfg.data_fraction < 1.0) {
        m = data::subsample(m, ctx.cfg.data_fraction, stage_seed(ctx.cfg, "data-fraction"));
        ctx.out << "subsampled training set to " << m.size() << " tiles\n";
    }
    if (ctx.cfg.use_gan != "none") {
        const int n = static_cast<int>(m.size());
        m = with_synthetic(ctx, m, ctx.cfg.use_gan, n);
        ctx.out << "added " << n << " " << ctx.cfg.use_gan << " samples\n";
    }
    return m;
}

fs::path train_manifest(const Context& ctx) { return ctx.or_default(ctx.opt.train, "data/train/manifest.json"); }
fs::path val_manifest(const Context& ctx) { return ctx.or_default(ctx.opt.val, "data/val/manifest.json"); }
fs::path test_manifest(const Context& ctx) { return ctx.or_default(ctx.opt.test, "data/val/manifest.json"); }

segnet::TrainSchedule seeded(segnet::TrainSchedule s, const Context& ctx, const std::string& stage) {
    s.seed = stage_seed(ctx.cfg, stage + ":batches");
    return s;
}

void save_splits(Context& ctx, const data::DatasetManifest& all) {
    auto [train, val] = data::split_train_val(all, ctx.cfg.train_fraction, stage_seed(ctx.cfg, "split"));
    train.split_tag = data::SplitTag::train;
    val.split_tag = data::SplitTag::val;
    for (auto [m, sub] : {std::pair{&train, "train"}, std::pair{&val, "val"}}) {
        const auto path = data::save_manifest(*m, ctx.under_out(fs::path("data") / sub));
        ctx.rec.output(path);
        ctx.out << "wrote " << path.string() << " (" << m->size() << " tiles)\n";
    }
}

void cmd_synth_data(Context& ctx) {
    const int count = ctx.opt.count.value_or(ctx.cfg.synthetic_count);
    if (count < 2) throw ConfigError("--count must be >= 2");
    auto all = data::generate_synthetic_dataset(ctx.cfg.synthetic, count, stage_seed(ctx.cfg, "synth-data"));
    save_splits(ctx, all);
}

void cmd_ingest(Context& ctx) {
    auto all = data::ingest_xbd(ctx.opt.labels_dir, ctx.opt.images_dir, ctx.cfg.ingest);
    ctx.out << "ingested " << all.size() << " tiles\n";
    save_splits(ctx, all);
}

fs::path model_dir(const Context& ctx, const std::string& fallback) {
    return ctx.under_out(fs::path("models") / (ctx.opt.name.empty() ? fallback : ctx.opt.name));
}

void cmd_train_seg(Context& ctx) {
    const auto train = training_set(ctx, train_manifest(ctx));
    const auto val = read_manifest(ctx, val_manifest(ctx));
    const auto dir = model_dir(ctx, "seg");
    const std::string stage = "train-seg:" + dir.filename().string();
    seed_torch(stage_seed(ctx.cfg, stage + ":init"));
    auto model = segnet::build_segmodel(ctx.cfg.segnet);
    auto ckpt = segnet::train_vanilla(model, train, val, seeded(ctx.cfg.train_seg, ctx, stage), CheckpointProvenance::vanilla);
    write_checkpoint(ctx, ckpt, dir / "model.ckpt");
}

void cmd_pretrain_cl(Context& ctx) {
    const auto train = training_set(ctx, train_manifest(ctx));
    const auto dir = model_dir(ctx, "cl");
    const std::string stage = "pretrain-cl:" + dir.filename().string();
    seed_torch(stage_seed(ctx.cfg, stage + ":init"));
    auto cfg = ctx.cfg.contrastive;
    cfg.seed = stage_seed(ctx.cfg, stage + ":sampling");
    auto model = contrastive::attach_projection_head(segnet::build_segmodel(ctx.cfg.segnet), cfg);
    auto ckpt = contrastive::pretrain(model, train, cfg, seeded(ctx.cfg.pretrain, ctx, stage));
    write_checkpoint(ctx, ckpt, dir / "pretrained.ckpt");
}

void cmd_finetune_cl(Context& ctx) {
    const auto dir = model_dir(ctx, "cl");
    const std::string stage = "finetune-cl:" + dir.filename().string();
    const auto pretrained = read_checkpoint(ctx, ctx.opt.pretrained.empty() ? dir / "pretrained.ckpt" : fs::path(ctx.opt.pretrained));
    const auto train = training_set(ctx, train_manifest(ctx));
    const auto val = read_manifest(ctx, val_manifest(ctx));
    seed_torch(stage_seed(ctx.cfg, stage + ":init"));
    auto ckpt = contrastive::finetune(pretrained, train, val, seeded(ctx.cfg.finetune, ctx, stage));
    write_checkpoint(ctx, ckpt, dir / "model.ckpt");
}

std::string gan_variant(const Context& ctx) { return ctx.cfg.use_gan == "none" ? "gan1" : ctx.cfg.use_gan; }

void cmd_train_gan(Context& ctx) {
    const std::string variant = gan_variant(ctx);
    auto train = read_manifest(ctx, train_manifest(ctx));
    if (ctx.cfg.data_fraction < 1.0) train = data::subsample(train, ctx.cfg.data_fraction, stage_seed(ctx.cfg, "data-fraction"));
    const fs::path dir = ctx.under_out(fs::path("gan") / variant);
    fs::create_directories(dir);
    seed_torch(stage_seed(ctx.cfg, "train-gan:" + variant + ":init"));
    auto pair = gan::build_gan(gan::variant_from_string(variant), ctx.cfg.generator, ctx.cfg.discriminator);
    auto tc = ctx.cfg.gan_train;
    tc.seed = stage_seed(ctx.cfg, "train-gan:" + variant);
    tc.checkpoint_dir = tc.checkpoint_dir ? ctx.under_out(*tc.checkpoint_dir) : dir;
    auto result = gan::train_gan(pair, train, tc);
    write_checkpoint(ctx, result.generator, dir / "generator.ckpt");
    write_checkpoint(ctx, result.discriminator, dir / "discriminator.ckpt");
    const auto trace_path = dir / "trace.jsonl";
    std::ofstream trace(trace_path);
    for (const auto& r : result.trace)
        trace << json{{"step", r.step}, {"d_loss", r.d_loss}, {"g_adversarial", r.g_adversarial}, {"g_l1", r.g_l1}}.dump()
              << '\n';
    ctx.rec.output(trace_path);
}

void cmd_augment(Context& ctx) {
    const std::string variant = gan_variant(ctx);
    const auto base = read_manifest(ctx, ctx.or_default(ctx.opt.base, "data/train/manifest.json"));
    const int count = ctx.opt.count.value_or(static_cast<int>(base.size()));
    auto out = with_synthetic(ctx, base, variant, count);
    const auto path = data::save_manifest(out, ctx.under_out(fs::path("augment") / variant));
    ctx.rec.output(path);
    ctx.out << "wrote " << path.string() << " (" << out.size() << " tiles, " << count << " synthetic)\n";
}

void cmd_train_cls(Context& ctx) {
    const auto seg = read_checkpoint(ctx, ctx.or_default(ctx.opt.seg, "models/seg/model.ckpt"));
    const auto train = training_set(ctx, train_manifest(ctx));
    const auto val = read_manifest(ctx, val_manifest(ctx));
    const auto dir = model_dir(ctx, "cls");
    const std::string stage = "train-cls:" + dir.filename().string();
    seed_torch(stage_seed(ctx.cfg, stage + ":init"));
    auto classifier = classify::build_siamese(seg, ctx.cfg.head_channels);
    auto ckpt = classify::train_classifier(classifier, train, val, seeded(ctx.cfg.train_cls, ctx, stage),
                                           ctx.opt.freeze || ctx.cfg.freeze_extractor);
    ckpt.train_time_seconds += seg.train_time_seconds;
    write_checkpoint(ctx, ckpt, dir / "model.ckpt");
}

ensemble::Ensemble resolve_ensemble(Context& ctx) {
    if (!ctx.opt.ensemble.empty()) {
        ctx.rec.input(ctx.opt.ensemble);
        return ensemble::load_descriptor(ctx.opt.ensemble);
    }
    if (ctx.opt.members.size() != 3) throw ConfigError("fusion needs --ensemble or exactly three --members");
    ensemble::Ensemble e;
    for (int i = 0; i < 3; ++i) e.members[i] = fs::absolute(ctx.opt.members[i]);
    return e;
}

ensemble::LoadedEnsemble load_members(Context& ctx, const ensemble::Ensemble& e) {
    for (const auto& p : e.members) ctx.rec.input(p);
    return ensemble::load_ensemble(e);
}

metrics::DamagePredictor vote_only(const ensemble::LoadedEnsemble& le) {
    return [&le](const data::TileSample& s) {
        return fuse::majority_vote(le.members[0](s), le.members[1](s), le.members[2](s));
    };
}

void cmd_fuse(Context& ctx) {
    const auto e = resolve_ensemble(ctx);
    const auto le = load_members(ctx, e);
    const auto test = read_manifest(ctx, test_manifest(ctx));
    const fs::path dir = ctx.under_out(fs::path("fuse") / (ctx.opt.name.empty() ? "fusion" : ctx.opt.name));
    fs::create_directories(dir);
    ensemble::save_descriptor(e, dir / "ensemble.json");
    ctx.rec.output(dir / "ensemble.json");

    metrics::ConfusionMatrix cm_vote, cm_fused;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto s = test.load(i);
        const auto voted = fuse::majority_vote(le.members[0](*s), le.members[1](*s), le.members[2](*s));
        const auto fused = fuse::morph_filter(voted, ctx.cfg.morphology);
        io::write_png_mask(voted, dir / "vote" / (s->id + ".png"));
        io::write_png_mask(fused, dir / "fused" / (s->id + ".png"));
        cm_vote.add(voted, s->post_mask);
        cm_fused.add(fused, s->post_mask);
    }
    ctx.rec.output(dir / "vote");
    ctx.rec.output(dir / "fused");
    json summary{{"tiles", test.size()},
                 {"vote", {{"segmentation_f1", metrics::seg_f1(cm_vote)}}},
                 {"fused", {{"segmentation_f1", metrics::seg_f1(cm_fused)}}},
                 {"morphology", ctx.cfg.morphology}};
    const auto cv = metrics::cls_f1(cm_vote).overall, cf = metrics::cls_f1(cm_fused).overall;
    summary["vote"]["classification_f1"] = cv ? json(*cv) : json(nullptr);
    summary["fused"]["classification_f1"] = cf ? json(*cf) : json(nullptr);
    std::ofstream(dir / "summary.json") << summary.dump(2) << '\n';
    ctx.rec.output(dir / "summary.json");
    ctx.out << "fused " << test.size() << " tiles into " << dir.string() << "\n";
}

void cmd_eval(Context& ctx) {
    const auto test = read_manifest(ctx, test_manifest(ctx));
    metrics::DamagePredictor predict;
    std::uint64_t size = 0;
    double seconds = 0;
    std::string method = ctx.opt.method;
    std::optional<ensemble::LoadedEnsemble> le;
    if (!ctx.opt.model.empty()) {
        auto m = ensemble::load_model(ctx.opt.model);
        ctx.rec.input(ctx.opt.model);
        predict = m.predict;
        size = m.checkpoint.size_bytes;
        seconds = m.checkpoint.train_time_seconds;
        if (method.empty()) method = fs::path(ctx.opt.model).parent_path().filename().string();
    } else {
        le = load_members(ctx, resolve_ensemble(ctx));
        size = le->size_bytes;
        seconds = le->train_time_seconds;
        if (ctx.opt.stage == "vote") {
            predict = vote_only(*le);
        } else if (ctx.opt.stage == "fused") {
            predict = [&](const data::TileSample& s) { return ensemble::fuse_pipeline(*le, s, ctx.cfg.morphology); };
        } else {
            throw ConfigError("--stage must be vote or fused");
        }
        if (method.empty()) method = ctx.opt.stage == "vote" ? "fusion (vote)" : "fusion";
    }
    const std::string dataset = ctx.opt.dataset.empty() ? test.source_note : ctx.opt.dataset;
    auto report = metrics::evaluate(predict, test, size, seconds, method, dataset, ctx.cfg.aggregation);
    std::string file = method;
    for (auto& ch : file)
        if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
    const fs::path path = ctx.under_out(fs::path("reports") / (file + ".json"));
    fs::create_directories(path.parent_path());
    std::ofstream(path) << json(report).dump(2) << '\n';
    ctx.rec.output(path);
    ctx.out << "segmentation F1 " << report.segmentation_f1 << ", classification F1 ";
    if (report.classification_f1) ctx.out << *report.classification_f1;
    else ctx.out << "undefined";
    ctx.out << ", size " << metrics::format_size(report.model_size_bytes) << "\nwrote " << path.string() << "\n";
}

void cmd_render(Context& ctx) {
    const fs::path dir = ctx.under_out("render");
    if (ctx.opt.table != 0) {
        if (ctx.opt.table != 1 && ctx.opt.table != 2) throw ConfigError("--table must be 1 or 2");
        if (ctx.opt.reports.empty()) throw ConfigError("--table needs --reports");
        std::vector<metrics::EvalReport> reports;
        for (const auto& r : ctx.opt.reports) {
            ctx.rec.input(r);
            std::ifstream in(r);
            if (!in) throw Error("cannot open report " + r);
            reports.push_back(json::parse(in).get<metrics::EvalReport>());
        }
        const auto text = ctx.opt.table == 1 ? metrics::render_table1(reports) : metrics::render_table2(reports);
        const fs::path path = dir / ("table" + std::to_string(ctx.opt.table) + ".txt");
        fs::create_directories(dir);
        std::ofstream(path) << text;
        ctx.rec.output(path);
        ctx.out << text;
        return;
    }
    if (!ctx.opt.image.empty() || !ctx.opt.mask.empty()) {
        if (ctx.opt.image.empty() || ctx.opt.mask.empty()) throw ConfigError("--image and --mask go together");
        ctx.rec.input(ctx.opt.image);
        ctx.rec.input(ctx.opt.mask);
        const auto img = io::read_png_rgb(ctx.opt.image);
        const auto mask = io::read_png_mask(ctx.opt.mask);
        const fs::path path = dir / (fs::path(ctx.opt.image).stem().string() + "_overlay.png");
        overlay::write_overlay(img, mask, path, ctx.opt.alpha);
        ctx.rec.output(path);
        ctx.out << "wrote " << path.string() << "\n";
        return;
    }
    if (ctx.opt.on != "pre" && ctx.opt.on != "post") throw ConfigError("--on must be pre or post");
    const auto test = read_manifest(ctx, test_manifest(ctx));
    metrics::DamagePredictor predict;
    std::optional<ensemble::LoadedEnsemble> le;
    if (!ctx.opt.model.empty()) {
        ctx.rec.input(ctx.opt.model);
        predict = ensemble::load_model(ctx.opt.model).predict;
    } else if (!ctx.opt.ensemble.empty() || !ctx.opt.members.empty()) {
        le = load_members(ctx, resolve_ensemble(ctx));
        predict = [&](const data::TileSample& s) { return ensemble::fuse_pipeline(*le, s, ctx.cfg.morphology); };
    } else {
        throw ConfigError("render needs --table, --image/--mask, --model, or --ensemble");
    }
    const std::size_t n = std::min<std::size_t>(test.size(), static_cast<std::size_t>(std::max(ctx.opt.limit, 1)));
    for (std::size_t i = 0; i < n; ++i) {
        const auto s = test.load(i);
        const auto mask = predict(*s);
        const fs::path path = dir / "overlays" / (s->id + ".png");
        overlay::write_overlay(ctx.opt.on == "pre" ? s->pre_image : s->post_image, mask, path, ctx.opt.alpha);
        ctx.rec.output(path);
    }
    ctx.out << "wrote " << n << " overlays to " << (dir / "overlays").string() << "\n";
}

fs::path default_out() {
    if (const char* env = std::getenv("CLIFGAN_OUT"); env && *env) return env;
    return "clifgan_out";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Building damage assessment pipeline: synthetic data, segmentation, contrastive pre-training, "
                 "GAN augmentation, siamese classification, fusion and evaluation.",
                 "clifgan"};
    app.require_subcommand(1);
    app.fallthrough();
    Options opt;
    app.add_option("--config", opt.config_path, "JSON pipeline configuration")->check(CLI::ExistingFile);
    app.add_option("--seed", opt.seed, "global seed (per-stage seeds derive from it)");
    app.add_option("--out", opt.out, "output directory (default $CLIFGAN_OUT or ./clifgan_out)");
    app.add_option("--data-fraction", opt.data_fraction, "fraction of the training set to use")
        ->check(CLI::Range(0.0, 1.0));
    app.add_option("--gan", opt.gan, "synthetic samples added to training")->check(CLI::IsMember({"none", "gan1", "gan2"}));

    using Handler = void (*)(Context&);
    std::vector<std::pair<CLI::App*, Handler>> commands;
    auto add = [&](const char* name, const char* help, Handler h) {
        auto* sub = app.add_subcommand(name, help);
        commands.emplace_back(sub, h);
        return sub;
    };
    auto add_name = [&](CLI::App* s) { s->add_option("--name", opt.name, "artifact name under models/ or fuse/"); };
    auto add_data = [&](CLI::App* s, bool val) {
        s->add_option("--train", opt.train, "training manifest");
        if (val) s->add_option("--val", opt.val, "validation manifest");
    };
    auto add_predictor = [&](CLI::App* s) {
        s->add_option("--model", opt.model, "checkpoint to evaluate");
        s->add_option("--ensemble", opt.ensemble, "ensemble descriptor");
        s->add_option("--members", opt.members, "three member checkpoints")->expected(3);
        s->add_option("--test", opt.test, "test manifest (default: validation split)");
    };

    auto* synth = add("synth-data", "generate the synthetic dataset and its train/val split", cmd_synth_data);
    synth->add_option("--count", opt.count, "number of tiles");

    auto* ingest = add("ingest", "ingest xBD-style labels and images", cmd_ingest);
    ingest->add_option("--labels", opt.labels_dir, "label directory")->required()->check(CLI::ExistingDirectory);
    ingest->add_option("--images", opt.images_dir, "image directory")->required()->check(CLI::ExistingDirectory);

    auto* tseg = add("train-seg", "train a segmentation network", cmd_train_seg);
    add_data(tseg, true);
    add_name(tseg);
    tseg->add_option("--generator", opt.generator, "generator checkpoint for --gan");

    auto* pcl = add("pretrain-cl", "contrastive pre-training with a projection head", cmd_pretrain_cl);
    add_data(pcl, false);
    add_name(pcl);
    pcl->add_option("--generator", opt.generator, "generator checkpoint for --gan");

    auto* fcl = add("finetune-cl", "fine-tune a contrastively pre-trained network", cmd_finetune_cl);
    add_data(fcl, true);
    add_name(fcl);
    fcl->add_option("--pretrained", opt.pretrained, "pre-trained checkpoint");
    fcl->add_option("--generator", opt.generator, "generator checkpoint for --gan");

    auto* tgan = add("train-gan", "train GAN-1 or GAN-2 (variant from --gan, default gan1)", cmd_train_gan);
    add_data(tgan, false);

    auto* aug = add("augment", "append GAN-synthesized samples to a manifest", cmd_augment);
    aug->add_option("--base", opt.base, "base manifest");
    aug->add_option("--generator", opt.generator, "generator checkpoint");
    aug->add_option("--count", opt.count, "synthetic samples to add (default: base size)");

    auto* tcls = add("train-cls", "train the siamese damage classifier", cmd_train_cls);
    add_data(tcls, true);
    add_name(tcls);
    tcls->add_option("--seg", opt.seg, "segmentation checkpoint for the shared extractor");
    tcls->add_flag("--freeze", opt.freeze, "train only the fusion head");
    tcls->add_option("--generator", opt.generator, "generator checkpoint for --gan");

    auto* fz = add("fuse", "majority vote and morphological filtering over three models", cmd_fuse);
    add_predictor(fz);
    add_name(fz);

    auto* ev = add("eval", "evaluate a model or ensemble and write a report", cmd_eval);
    add_predictor(ev);
    ev->add_option("--stage", opt.stage, "ensemble stage: vote or fused");
    ev->add_option("--method", opt.method, "method tag");
    ev->add_option("--dataset", opt.dataset, "dataset tag");

    auto* rd = add("render", "render overlays or result tables", cmd_render);
    add_predictor(rd);
    rd->add_option("--table", opt.table, "render table 1 or 2 from --reports");
    rd->add_option("--reports", opt.reports, "report files");
    rd->add_option("--image", opt.image, "image PNG for a single overlay");
    rd->add_option("--mask", opt.mask, "mask PNG for a single overlay");
    rd->add_option("--limit", opt.limit, "number of test tiles to render");
    rd->add_option("--on", opt.on, "overlay on the pre or post image");
    rd->add_option("--alpha", opt.alpha, "overlay opacity")->check(CLI::Range(0.0, 1.0));

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return usage_error;
    }

    const auto it = std::find_if(commands.begin(), commands.end(), [](const auto& c) { return c.first->parsed(); });
    RunRecorder rec(it->first->get_name(), args);
    fs::path out_dir = opt.out ? fs::path(*opt.out) : default_out();
    int code = ok;
    std::string error;
    try {
        PipelineConfig cfg;
        if (!opt.config_path.empty()) {
            cfg = load_config(opt.config_path);
            rec.input(opt.config_path);
            if (!opt.out && std::getenv("CLIFGAN_OUT") == nullptr) out_dir = cfg.out;
        }
        if (opt.seed) cfg.seed = *opt.seed;
        if (opt.data_fraction) cfg.data_fraction = *opt.data_fraction;
        if (opt.gan) cfg.use_gan = *opt.gan;
        cfg.out = out_dir;
        cfg.validate();
        rec.config(cfg);
        Context ctx{cfg, opt, rec, out};
        it->second(ctx);
    } catch (const ConfigError& e) {
        code = usage_error;
        error = e.what();
    } catch (const std::exception& e) {
        code = runtime_failure;
        error = e.what();
    }
    if (!error.empty()) err << "error: " << error << "\n";
    try {
        const auto path = rec.write(out_dir, code, error);
        out << "run manifest " << path.string() << "\n";
    } catch (const std::exception& e) {
        err << "error: cannot write run manifest: " << e.what() << "\n";
        if (code == ok) code = runtime_failure;
    }
    return code;
}

int run(const std::vector<std::string>& args) { return run(args, std::cout, std::cerr); }

}  // namespace clifgan::cli
