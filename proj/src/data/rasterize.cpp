#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "clifgan/data.hpp"
#include "clifgan/image_io.hpp"
#include "clifgan/log.hpp"

namespace clifgan::data {

namespace fs = std::filesystem;
using nlohmann::json;

bool point_in_ring(const std::vector<Point>& ring, double x, double y) {
    bool inside = false;
    const std::size_t n = ring.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Point& a = ring[i];
        const Point& b = ring[j];
        if ((a.y > y) != (b.y > y)) {
            const double cross_x = (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x;
            if (x < cross_x) inside = !inside;
        }
    }
    return inside;
}

namespace {

std::vector<Point> open_ring(const std::vector<Point>& ring) {
    std::vector<Point> r = ring;
    if (r.size() >= 2 && r.front().x == r.back().x && r.front().y == r.back().y) r.pop_back();
    return r;
}

}  // namespace

DamageMask rasterize_polygons(const std::vector<LabeledPolygon>& polygons, Size2 size, int* rejected) {
    DamageMask mask(size);
    int bad = 0;
    for (std::size_t p = 0; p < polygons.size(); ++p) {
        const auto ring = open_ring(polygons[p].ring);
        if (ring.size() < 3) {
            ++bad;
            log::warn("rasterize_polygons: polygon " + std::to_string(p) + " has fewer than 3 vertices; skipped");
            continue;
        }
        double min_x = ring[0].x, max_x = ring[0].x, min_y = ring[0].y, max_y = ring[0].y;
        for (const auto& v : ring) {
            min_x = std::min(min_x, v.x);
            max_x = std::max(max_x, v.x);
            min_y = std::min(min_y, v.y);
            max_y = std::max(max_y, v.y);
        }
        // Pixel centers x+0.5 within [min_x, max_x].
        const int x0 = std::max(0, static_cast<int>(std::floor(min_x - 0.5)));
        const int x1 = std::min(size.width - 1, static_cast<int>(std::ceil(max_x - 0.5)));
        const int y0 = std::max(0, static_cast<int>(std::floor(min_y - 0.5)));
        const int y1 = std::min(size.height - 1, static_cast<int>(std::ceil(max_y - 0.5)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                if (point_in_ring(ring, x + 0.5, y + 0.5)) mask(y, x) = polygons[p].damage_class;
    }
    if (rejected) *rejected = bad;
    return mask;
}

std::vector<Point> parse_wkt_polygon(const std::string& wkt) {
    const auto open = wkt.find("((");
    const auto close = wkt.find(')', open == std::string::npos ? 0 : open);
    if (wkt.rfind("POLYGON", 0) != 0 || open == std::string::npos || close == std::string::npos)
        throw Error("not a WKT POLYGON: '" + wkt.substr(0, 40) + "'");
    std::vector<Point> ring;
    std::stringstream ss(wkt.substr(open + 2, close - open - 2));
    std::string pair;
    while (std::getline(ss, pair, ',')) {
        std::istringstream ps(pair);
        Point pt;
        if (!(ps >> pt.x >> pt.y)) throw Error("bad WKT vertex '" + pair + "'");
        ring.push_back(pt);
    }
    return ring;
}

std::optional<std::uint8_t> subtype_to_label(const std::string& subtype) {
    if (subtype == "no-damage") return label::no_damage;
    if (subtype == "minor-damage") return label::minor_damage;
    if (subtype == "major-damage") return label::major_damage;
    if (subtype == "destroyed") return label::destroyed;
    if (subtype == "un-classified") return label::ignore;
    return std::nullopt;
}

void to_json(json& j, const IngestConfig& c) {
    j = json{{"features_pointer", c.features_pointer}, {"geometry_key", c.geometry_key},
             {"subtype_pointer", c.subtype_pointer},   {"pre_suffix", c.pre_suffix},
             {"post_suffix", c.post_suffix},           {"image_extension", c.image_extension}};
    if (c.target_size) j["target_size"] = {c.target_size->height, c.target_size->width};
}

void from_json(const json& j, IngestConfig& c) {
    IngestConfig d;
    c.features_pointer = j.value("features_pointer", d.features_pointer);
    c.geometry_key = j.value("geometry_key", d.geometry_key);
    c.subtype_pointer = j.value("subtype_pointer", d.subtype_pointer);
    c.pre_suffix = j.value("pre_suffix", d.pre_suffix);
    c.post_suffix = j.value("post_suffix", d.post_suffix);
    c.image_extension = j.value("image_extension", d.image_extension);
    if (j.contains("target_size")) {
        auto t = j.at("target_size");
        c.target_size = Size2{t.at(0).get<int>(), t.at(1).get<int>()};
    }
}

namespace {

struct ParsedLabel {
    std::vector<LabeledPolygon> polygons;
};

ParsedLabel parse_label_file(const fs::path& file, const IngestConfig& cfg, bool with_subtype) {
    std::ifstream in(file);
    if (!in) throw Error("cannot open label file " + file.string());
    ParsedLabel out;
    try {
        json j;
        in >> j;
        const auto& feats = j.at(json::json_pointer(cfg.features_pointer));
        for (const auto& f : feats) {
            LabeledPolygon poly;
            poly.ring = parse_wkt_polygon(f.at(cfg.geometry_key).get<std::string>());
            if (with_subtype) {
                const json::json_pointer sp(cfg.subtype_pointer);
                const std::string subtype = f.contains(sp) ? f.at(sp).get<std::string>() : "un-classified";
                auto lbl = subtype_to_label(subtype);
                if (!lbl) throw Error("unknown damage subtype '" + subtype + "'");
                poly.damage_class = *lbl;
            } else {
                poly.damage_class = 1;
            }
            out.polygons.push_back(std::move(poly));
        }
    } catch (const std::exception& ex) {
        throw Error("unparseable label file " + file.string() + ": " + ex.what());
    }
    return out;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

DatasetManifest ingest_xbd(const fs::path& labels_dir, const fs::path& images_dir, const IngestConfig& cfg) {
    if (!fs::is_directory(labels_dir)) throw Error("labels directory does not exist: " + labels_dir.string());
    if (!fs::is_directory(images_dir)) throw Error("images directory does not exist: " + images_dir.string());

    std::vector<fs::path> post_labels;
    const std::string post_tail = cfg.post_suffix + ".json";
    for (const auto& de : fs::directory_iterator(labels_dir))
        if (de.is_regular_file() && ends_with(de.path().filename().string(), post_tail))
            post_labels.push_back(de.path());
    std::sort(post_labels.begin(), post_labels.end());

    DatasetManifest manifest;
    manifest.source_note = "ingested from " + labels_dir.string();
    for (const auto& post_label : post_labels) {
        const std::string fname = post_label.filename().string();
        const std::string base = fname.substr(0, fname.size() - post_tail.size());
        const fs::path pre_img = images_dir / (base + cfg.pre_suffix + cfg.image_extension);
        const fs::path post_img = images_dir / (base + cfg.post_suffix + cfg.image_extension);
        if (!fs::exists(pre_img) || !fs::exists(post_img)) {
            manifest.note("skipped " + base + ": missing " + (fs::exists(pre_img) ? post_img : pre_img).string());
            continue;
        }
        const auto post = parse_label_file(post_label, cfg, true);
        TileSample s;
        s.id = base;
        s.provenance = Provenance::real;
        s.pre_image = io::read_png_rgb(pre_img);
        s.post_image = io::read_png_rgb(post_img);
        if (s.pre_image.size() != s.post_image.size())
            throw Error("pre/post image sizes differ for " + base);
        const Size2 size = s.post_image.size();
        s.post_mask = rasterize_polygons(post.polygons, size);

        // Footprints: pre-disaster polygons when present, always including
        // every labeled post pixel.
        s.pre_mask = DamageMask(size);
        const fs::path pre_label = labels_dir / (base + cfg.pre_suffix + ".json");
        if (fs::exists(pre_label)) {
            const auto pre = parse_label_file(pre_label, cfg, false);
            s.pre_mask = rasterize_polygons(pre.polygons, size);
        }
        for (std::size_t k = 0; k < s.post_mask.area(); ++k)
            if (s.post_mask.cells()[k] != 0) s.pre_mask.cells()[k] = 1;

        if (cfg.target_size && *cfg.target_size != size) s = resize_tile(s, *cfg.target_size);
        manifest.add(std::move(s));
    }
    return manifest;
}

}  // namespace clifgan::data
