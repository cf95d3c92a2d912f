#include "clifgan/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "clifgan/grid.hpp"

namespace clifgan {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'C', 'L', 'F', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

std::string dtype_name(torch::ScalarType t) {
    switch (t) {
        case torch::kFloat32: return "f32";
        case torch::kFloat64: return "f64";
        case torch::kInt64: return "i64";
        default: throw Error("checkpoint: unsupported tensor dtype");
    }
}

torch::ScalarType dtype_from_name(const std::string& s) {
    if (s == "f32") return torch::kFloat32;
    if (s == "f64") return torch::kFloat64;
    if (s == "i64") return torch::kInt64;
    throw Error("checkpoint: unknown dtype '" + s + "'");
}
}  // namespace

std::string to_string(CheckpointProvenance p) {
    switch (p) {
        case CheckpointProvenance::vanilla: return "vanilla";
        case CheckpointProvenance::contrastive_pretrained: return "contrastive_pretrained";
        case CheckpointProvenance::contrastive_finetuned: return "contrastive_finetuned";
        case CheckpointProvenance::gan_generator: return "gan_generator";
        case CheckpointProvenance::gan_discriminator: return "gan_discriminator";
        case CheckpointProvenance::siamese: return "siamese";
    }
    return "vanilla";
}

CheckpointProvenance checkpoint_provenance_from_string(const std::string& s) {
    for (auto p : {CheckpointProvenance::vanilla, CheckpointProvenance::contrastive_pretrained,
                   CheckpointProvenance::contrastive_finetuned, CheckpointProvenance::gan_generator,
                   CheckpointProvenance::gan_discriminator, CheckpointProvenance::siamese})
        if (to_string(p) == s) return p;
    throw Error("unknown checkpoint provenance '" + s + "'");
}

void to_json(json& j, const TrainLogRecord& r) {
    j = json{{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"lr", r.lr}};
    j["val_metric"] = std::isfinite(r.val_metric) ? json(r.val_metric) : json(nullptr);
}

void from_json(const json& j, TrainLogRecord& r) {
    r.epoch = j.at("epoch").get<int>();
    r.train_loss = j.at("train_loss").get<double>();
    r.lr = j.at("lr").get<double>();
    r.val_metric = j.at("val_metric").is_null() ? std::nan("") : j.at("val_metric").get<double>();
}

const torch::Tensor* ModelCheckpoint::find(const std::string& name) const {
    for (const auto& [n, t] : weights)
        if (n == name) return &t;
    return nullptr;
}

NamedTensors capture_weights(const torch::nn::Module& module, const std::string& prefix) {
    NamedTensors out;
    for (const auto& item : module.named_parameters(true))
        out.emplace_back(prefix + item.key(), item.value().detach().clone().contiguous());
    for (const auto& item : module.named_buffers(true))
        out.emplace_back(prefix + item.key(), item.value().detach().clone().contiguous());
    return out;
}

void restore_weights(torch::nn::Module& module, const NamedTensors& weights, const std::string& prefix,
                     bool allow_missing) {
    std::map<std::string, const torch::Tensor*> by_name;
    for (const auto& [n, t] : weights)
        if (n.rfind(prefix, 0) == 0) by_name[n.substr(prefix.size())] = &t;
    torch::NoGradGuard guard;
    auto assign = [&](const std::string& name, torch::Tensor& dst) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            if (allow_missing) return;
            throw Error("checkpoint is missing tensor '" + prefix + name + "'");
        }
        if (!dst.sizes().equals(it->second->sizes()))
            throw Error("checkpoint tensor '" + prefix + name + "' has mismatched shape");
        dst.copy_(*it->second);
    };
    for (auto& item : module.named_parameters(true)) assign(item.key(), item.value());
    for (auto& item : module.named_buffers(true)) assign(item.key(), item.value());
}

std::uint64_t save_checkpoint(ModelCheckpoint& ckpt, const fs::path& path) {
    json header;
    header["provenance"] = to_string(ckpt.provenance);
    header["arch_config"] = ckpt.arch_config;
    header["train_log"] = ckpt.train_log;
    header["train_time_seconds"] = ckpt.train_time_seconds;
    header["tensors"] = json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.weights) {
        const auto nbytes = static_cast<std::uint64_t>(t.numel() * t.element_size());
        header["tensors"].push_back(
            {{"name", name}, {"dtype", dtype_name(t.scalar_type())}, {"shape", t.sizes().vec()},
             {"offset", offset}, {"nbytes", nbytes}});
        offset += nbytes;
    }
    const std::string text = header.dump();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    const std::uint64_t header_len = text.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
    out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : ckpt.weights) {
        auto c = t.detach().cpu().contiguous();
        out.write(static_cast<const char*>(c.data_ptr()), static_cast<std::streamsize>(c.numel() * c.element_size()));
    }
    out.close();
    if (!out) throw Error("failed writing checkpoint " + path.string());
    ckpt.size_bytes = fs::file_size(path);
    return ckpt.size_bytes;
}

ModelCheckpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t header_len = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw Error("not a checkpoint file: " + path.string());
    if (version != kVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
    std::string text(header_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(header_len));
    const auto blob_start = static_cast<std::uint64_t>(in.tellg());

    ModelCheckpoint ckpt;
    try {
        const json header = json::parse(text);
        ckpt.provenance = checkpoint_provenance_from_string(header.at("provenance").get<std::string>());
        ckpt.arch_config = header.at("arch_config");
        ckpt.train_log = header.at("train_log").get<std::vector<TrainLogRecord>>();
        ckpt.train_time_seconds = header.value("train_time_seconds", 0.0);
        for (const auto& jt : header.at("tensors")) {
            const auto shape = jt.at("shape").get<std::vector<std::int64_t>>();
            auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype_from_name(jt.at("dtype"))));
            const auto nbytes = jt.at("nbytes").get<std::uint64_t>();
            if (nbytes != static_cast<std::uint64_t>(t.numel() * t.element_size()))
                throw Error("tensor size mismatch for " + jt.at("name").get<std::string>());
            in.seekg(static_cast<std::streamoff>(blob_start + jt.at("offset").get<std::uint64_t>()));
            in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
            if (!in) throw Error("truncated checkpoint blob");
            ckpt.weights.emplace_back(jt.at("name").get<std::string>(), std::move(t));
        }
    } catch (const json::exception& ex) {
        throw Error("corrupt checkpoint header in " + path.string() + ": " + ex.what());
    }
    ckpt.size_bytes = fs::file_size(path);
    return ckpt;
}

void write_train_log(const std::vector<TrainLogRecord>& log, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write train log " + path.string());
    for (const auto& r : log) out << json(r).dump() << '\n';
}

}  // namespace clifgan
