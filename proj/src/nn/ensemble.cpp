#include "clifgan/ensemble.hpp"

#include <fstream>

#include "clifgan/classify.hpp"
#include "clifgan/segnet.hpp"

namespace clifgan::ensemble {

using nlohmann::json;
namespace fs = std::filesystem;

metrics::DamagePredictor make_predictor(const ModelCheckpoint& ckpt) {
    const std::string kind = ckpt.arch_config.value("kind", "");
    if (kind == "siamese") {
        auto c = classify::load_classifier(ckpt);
        return [c](const data::TileSample& s) mutable {
            return classify::predict_damage(c, s.pre_image, s.post_image);
        };
    }
    if (kind == "segnet") {
        auto m = segnet::load_segmodel(ckpt);
        return [m](const data::TileSample& s) mutable {
            return segnet::predict_mask(m, segnet::task_image(s, m->config().task));
        };
    }
    throw Error("checkpoint kind '" + kind + "' cannot predict damage masks");
}

LoadedModel load_model(const fs::path& path) {
    LoadedModel m;
    m.checkpoint = load_checkpoint(path);
    m.predict = make_predictor(m.checkpoint);
    return m;
}

Ensemble load_descriptor(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open ensemble descriptor " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("ensemble descriptor " + path.string() + ": " + e.what());
    }
    const auto& members = j.at("members");
    if (!members.is_array() || members.size() != 3)
        throw ConfigError("ensemble descriptor " + path.string() + ": exactly 3 members required");
    Ensemble e;
    for (std::size_t i = 0; i < 3; ++i) {
        fs::path p = members[i].get<std::string>();
        e.members[i] = p.is_absolute() ? p : path.parent_path() / p;
    }
    return e;
}

void save_descriptor(const Ensemble& e, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    json members = json::array();
    for (const auto& p : e.members) members.push_back(p.string());
    std::ofstream(path) << json{{"members", members}}.dump(2) << '\n';
}

LoadedEnsemble load_ensemble(const Ensemble& e) {
    LoadedEnsemble out;
    json arch;
    for (std::size_t i = 0; i < 3; ++i) {
        auto m = load_model(e.members[i]);
        if (i == 0) arch = m.checkpoint.arch_config;
        else if (m.checkpoint.arch_config != arch)
            throw Error("ensemble members have different architectures: " + e.members[i].string());
        out.members[i] = std::move(m.predict);
        out.size_bytes += m.checkpoint.size_bytes;
        out.train_time_seconds += m.checkpoint.train_time_seconds;
    }
    return out;
}

DamageMask fuse_pipeline(const LoadedEnsemble& e, const data::TileSample& sample, const fuse::MorphologyConfig& config) {
    return fuse::fuse_predictions(e.members, sample, config);
}

}  // namespace clifgan::ensemble
