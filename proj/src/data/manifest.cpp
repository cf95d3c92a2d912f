#include <fstream>
#include <stdexcept>

#include "clifgan/data.hpp"
#include "clifgan/image_io.hpp"

namespace clifgan::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::real: return "real";
        case Provenance::gan1_synthetic: return "gan1_synthetic";
        case Provenance::gan2_synthetic: return "gan2_synthetic";
        case Provenance::toy_synthetic: return "toy_synthetic";
    }
    return "real";
}

Provenance provenance_from_string(const std::string& s) {
    if (s == "real") return Provenance::real;
    if (s == "gan1_synthetic") return Provenance::gan1_synthetic;
    if (s == "gan2_synthetic") return Provenance::gan2_synthetic;
    if (s == "toy_synthetic") return Provenance::toy_synthetic;
    throw Error("unknown provenance '" + s + "'");
}

std::string to_string(SplitTag t) {
    switch (t) {
        case SplitTag::train: return "train";
        case SplitTag::val: return "val";
        case SplitTag::test: return "test";
        case SplitTag::unsplit: return "unsplit";
    }
    return "unsplit";
}

SplitTag split_tag_from_string(const std::string& s) {
    if (s == "train") return SplitTag::train;
    if (s == "val") return SplitTag::val;
    if (s == "test") return SplitTag::test;
    if (s == "unsplit") return SplitTag::unsplit;
    throw Error("unknown split tag '" + s + "'");
}

void validate(const TileSample& s) {
    const Size2 sz = s.post_mask.size();
    auto check_image = [&](const Image& img, const char* name) {
        if (img.channels() != 3) throw Error(s.id + ": " + name + " must have 3 channels");
        if (img.size() != sz) throw Error(s.id + ": " + name + " size differs from post_mask");
    };
    check_image(s.pre_image, "pre_image");
    check_image(s.post_image, "post_image");
    if (s.pre_mask.size() != sz) throw Error(s.id + ": pre_mask size differs from post_mask");
    if (!mask_is_valid(s.post_mask)) throw Error(s.id + ": post_mask has values outside the legend");
    for (auto v : s.pre_mask.cells())
        if (v > 1) throw Error(s.id + ": pre_mask must be binary");
    if (s.provenance == Provenance::real || s.provenance == Provenance::toy_synthetic) {
        for (std::size_t i = 0; i < s.post_mask.area(); ++i)
            if (s.post_mask.cells()[i] != label::background && s.pre_mask.cells()[i] == 0)
                throw Error(s.id + ": labeled post pixel outside pre footprint");
    }
}

void DatasetManifest::add(ManifestEntry entry) {
    if (ids_.count(entry.id)) throw Error("duplicate manifest id '" + entry.id + "'");
    ids_[entry.id] = entries_.size();
    entries_.push_back(std::move(entry));
}

void DatasetManifest::add(TileSample sample) {
    ManifestEntry e;
    e.id = sample.id;
    e.provenance = sample.provenance;
    e.sample = std::make_shared<const TileSample>(std::move(sample));
    add(std::move(e));
}

std::shared_ptr<const TileSample> DatasetManifest::load(std::size_t i) const {
    const auto& e = entries_.at(i);
    if (e.sample) return e.sample;
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };
    TileSample s;
    s.id = e.id;
    s.provenance = e.provenance;
    s.pre_image = io::read_png_rgb(resolve(e.pre_image_path));
    s.post_image = io::read_png_rgb(resolve(e.post_image_path));
    s.post_mask = io::read_png_mask(resolve(e.post_mask_path));
    if (!e.pre_mask_path.empty()) {
        s.pre_mask = io::read_png_mask(resolve(e.pre_mask_path));
    } else {
        s.pre_mask = DamageMask(s.post_mask.size());
        for (std::size_t k = 0; k < s.post_mask.area(); ++k)
            s.pre_mask.cells()[k] = s.post_mask.cells()[k] != 0 ? 1 : 0;
    }
    return std::make_shared<const TileSample>(std::move(s));
}

void DatasetManifest::materialize() {
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (!entries_[i].sample) entries_[i].sample = load(i);
}

void DatasetManifest::note(const std::string& line) {
    if (!source_note.empty()) source_note += '\n';
    source_note += line;
}

void write_manifest_json(const DatasetManifest& m, const fs::path& path) {
    json j;
    j["split_tag"] = to_string(m.split_tag);
    j["source_note"] = m.source_note;
    j["entries"] = json::array();
    for (const auto& e : m.entries()) {
        j["entries"].push_back({{"id", e.id},
                                {"provenance", to_string(e.provenance)},
                                {"pre_image", e.pre_image_path},
                                {"post_image", e.post_image_path},
                                {"pre_mask", e.pre_mask_path},
                                {"post_mask", e.post_mask_path}});
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write manifest " + path.string());
    out << j.dump(2) << '\n';
}

fs::path save_manifest(const DatasetManifest& m, const fs::path& dir, const std::string& name) {
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    DatasetManifest written;
    written.split_tag = m.split_tag;
    written.source_note = m.source_note;
    written.base_dir = dir;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const auto& src = m.entries()[i];
        ManifestEntry e = src;
        e.pre_image_path = "images/" + e.id + "_pre.png";
        e.post_image_path = "images/" + e.id + "_post.png";
        e.pre_mask_path = "masks/" + e.id + "_pre.png";
        e.post_mask_path = "masks/" + e.id + "_post.png";
        // Skip rewriting files that already live at the target location.
        const bool same_place = !src.sample && fs::weakly_canonical(m.base_dir) == fs::weakly_canonical(dir) &&
                                src.post_mask_path == e.post_mask_path;
        if (!same_place) {
            auto s = m.load(i);
            io::write_png_rgb(s->pre_image, dir / e.pre_image_path);
            io::write_png_rgb(s->post_image, dir / e.post_image_path);
            io::write_png_mask(s->pre_mask, dir / e.pre_mask_path);
            io::write_png_mask(s->post_mask, dir / e.post_mask_path);
        }
        written.add(std::move(e));
    }
    const fs::path path = dir / name;
    write_manifest_json(written, path);
    return path;
}

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open manifest " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& ex) {
        throw Error("malformed manifest " + path.string() + ": " + ex.what());
    }
    DatasetManifest m;
    m.base_dir = path.parent_path();
    m.split_tag = split_tag_from_string(j.value("split_tag", "unsplit"));
    m.source_note = j.value("source_note", "");
    for (const auto& je : j.at("entries")) {
        ManifestEntry e;
        e.id = je.at("id").get<std::string>();
        e.provenance = provenance_from_string(je.value("provenance", "real"));
        e.pre_image_path = je.at("pre_image").get<std::string>();
        e.post_image_path = je.at("post_image").get<std::string>();
        e.pre_mask_path = je.value("pre_mask", "");
        e.post_mask_path = je.at("post_mask").get<std::string>();
        m.add(std::move(e));
    }
    return m;
}

}  // namespace clifgan::data
