#include <algorithm>
#include <cmath>
#include <cstdio>

#include "clifgan/data.hpp"

namespace clifgan::data {

using nlohmann::json;

void SyntheticSceneSpec::validate() const {
    if (canvas_size < 8) throw ConfigError("synthetic scene: canvas_size must be >= 8");
    if (building_count_range.first < 0 || building_count_range.first > building_count_range.second)
        throw ConfigError("synthetic scene: bad building_count_range");
    if (building_size_range.first < 1 || building_size_range.first > building_size_range.second ||
        building_size_range.second > canvas_size)
        throw ConfigError("synthetic scene: bad building_size_range");
    double total = 0;
    for (double p : damage_distribution) {
        if (p < 0) throw ConfigError("synthetic scene: negative damage probability");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("synthetic scene: damage_distribution must sum to 1");
}

void to_json(json& j, const SyntheticSceneSpec& s) {
    j = json{{"canvas_size", s.canvas_size},
             {"building_count_range", {s.building_count_range.first, s.building_count_range.second}},
             {"building_size_range", {s.building_size_range.first, s.building_size_range.second}},
             {"damage_distribution", s.damage_distribution},
             {"texture_seed", s.texture_seed}};
}

void from_json(const json& j, SyntheticSceneSpec& s) {
    SyntheticSceneSpec d;
    s.canvas_size = j.value("canvas_size", d.canvas_size);
    if (j.contains("building_count_range"))
        s.building_count_range = {j["building_count_range"].at(0).get<int>(), j["building_count_range"].at(1).get<int>()};
    else
        s.building_count_range = d.building_count_range;
    if (j.contains("building_size_range"))
        s.building_size_range = {j["building_size_range"].at(0).get<int>(), j["building_size_range"].at(1).get<int>()};
    else
        s.building_size_range = d.building_size_range;
    s.damage_distribution = j.value("damage_distribution", d.damage_distribution);
    s.texture_seed = j.value("texture_seed", d.texture_seed);
    s.validate();
}

namespace {

struct Rect {
    int x0, y0, x1, y1;  // inclusive-exclusive
    bool overlaps_with_margin(const Rect& o, int margin) const {
        return x0 < o.x1 + margin && o.x0 < x1 + margin && y0 < o.y1 + margin && o.y0 < y1 + margin;
    }
};

/// Smooth value noise in [0,1] on an n×n canvas with the given cell size.
Grid<float> value_noise(int n, int cell, Rng& rng) {
    const int lattice = n / cell + 2;
    Grid<float> knots(lattice, lattice);
    for (auto& v : knots.cells()) v = static_cast<float>(uniform01(rng));
    Grid<float> out(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double gx = static_cast<double>(x) / cell, gy = static_cast<double>(y) / cell;
            const int ix = static_cast<int>(gx), iy = static_cast<int>(gy);
            double ax = gx - ix, ay = gy - iy;
            ax = ax * ax * (3 - 2 * ax);
            ay = ay * ay * (3 - 2 * ay);
            const double top = knots(iy, ix) * (1 - ax) + knots(iy, ix + 1) * ax;
            const double bot = knots(iy + 1, ix) * (1 - ax) + knots(iy + 1, ix + 1) * ax;
            out(y, x) = static_cast<float>(top * (1 - ay) + bot * ay);
        }
    return out;
}

std::uint8_t draw_level(const std::array<double, 4>& dist, Rng& rng) {
    const double u = uniform01(rng);
    double acc = 0;
    for (int k = 0; k < 4; ++k) {
        acc += dist[k];
        if (u < acc && dist[k] > 0) return static_cast<std::uint8_t>(k + 1);
    }
    for (int k = 3; k >= 0; --k)
        if (dist[k] > 0) return static_cast<std::uint8_t>(k + 1);
    return label::no_damage;
}

}  // namespace

TileSample generate_synthetic_scene(const SyntheticSceneSpec& spec, Rng& rng, const std::string& id) {
    spec.validate();
    const int n = spec.canvas_size;
    Rng tex(derive_seed(spec.texture_seed, rng()));

    // Ground: two octaves of value noise tinted green/brown.
    const auto coarse = value_noise(n, std::max(4, n / 4), tex);
    const auto fine = value_noise(n, 2, tex);
    TileSample s;
    s.id = id;
    s.provenance = Provenance::toy_synthetic;
    s.pre_image = Image(3, n, n);
    s.pre_mask = DamageMask(n, n);
    s.post_mask = DamageMask(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const float g = 0.7f * coarse(y, x) + 0.3f * fine(y, x);
            s.pre_image(0, y, x) = 0.25f + 0.20f * g;
            s.pre_image(1, y, x) = 0.40f + 0.25f * g;
            s.pre_image(2, y, x) = 0.18f + 0.12f * g;
        }

    // Buildings, separated by at least one background pixel.
    const int wanted = uniform_int(rng, spec.building_count_range.first, spec.building_count_range.second);
    std::vector<Rect> rects;
    constexpr int max_tries = 200;
    for (int b = 0; b < wanted; ++b) {
        bool placed = false;
        for (int t = 0; t < max_tries && !placed; ++t) {
            const int bw = uniform_int(rng, spec.building_size_range.first, spec.building_size_range.second);
            const int bh = uniform_int(rng, spec.building_size_range.first, spec.building_size_range.second);
            const int x0 = uniform_int(rng, 0, n - bw);
            const int y0 = uniform_int(rng, 0, n - bh);
            const Rect r{x0, y0, x0 + bw, y0 + bh};
            if (std::none_of(rects.begin(), rects.end(), [&](const Rect& o) { return r.overlaps_with_margin(o, 1); })) {
                rects.push_back(r);
                placed = true;
            }
        }
        if (!placed) break;
    }
    if (static_cast<int>(rects.size()) < wanted)
        s.id += "-placed" + std::to_string(rects.size()) + "of" + std::to_string(wanted);

    std::vector<std::uint8_t> levels;
    for (std::size_t b = 0; b < rects.size(); ++b) levels.push_back(draw_level(spec.damage_distribution, rng));

    // Roofs in the pre image.
    for (const auto& r : rects) {
        const float base = static_cast<float>(uniform(tex, 0.55, 0.8));
        const std::array<float, 3> col{base + static_cast<float>(uniform(tex, -0.05, 0.08)),
                                       base + static_cast<float>(uniform(tex, -0.05, 0.05)),
                                       base + static_cast<float>(uniform(tex, -0.08, 0.05))};
        for (int y = r.y0; y < r.y1; ++y)
            for (int x = r.x0; x < r.x1; ++x) {
                const bool edge = y == r.y0 || x == r.x0 || y == r.y1 - 1 || x == r.x1 - 1;
                const float shade = (edge ? 0.8f : 1.0f) + static_cast<float>(uniform(tex, -0.03, 0.03));
                for (int c = 0; c < 3; ++c) s.pre_image(c, y, x) = col[c] * shade;
                s.pre_mask(y, x) = 1;
            }
    }

    // Post image: the same ground under slightly different light, with each
    // roof rendered according to its damage level.
    s.post_image = s.pre_image;
    for (auto& v : s.post_image.data()) v = v * 0.97f + static_cast<float>(uniform(tex, -0.02, 0.02));
    for (std::size_t b = 0; b < rects.size(); ++b) {
        const Rect& r = rects[b];
        const auto lvl = levels[b];
        for (int y = r.y0; y < r.y1; ++y)
            for (int x = r.x0; x < r.x1; ++x) {
                s.post_mask(y, x) = lvl;
                const double u = uniform01(tex);
                std::array<float, 3> px{s.post_image(0, y, x), s.post_image(1, y, x), s.post_image(2, y, x)};
                const std::array<float, 3> rubble{static_cast<float>(0.42 + uniform(tex, -0.12, 0.12)),
                                                  static_cast<float>(0.33 + uniform(tex, -0.10, 0.10)),
                                                  static_cast<float>(0.24 + uniform(tex, -0.08, 0.08))};
                switch (lvl) {
                    case label::minor_damage:
                        for (auto& v : px) v *= 0.88f;
                        if (u < 0.15) px = {0.2f, 0.18f, 0.16f};
                        break;
                    case label::major_damage:
                        for (auto& v : px) v *= 0.7f;
                        if (u < 0.45) px = rubble;
                        break;
                    case label::destroyed:
                        px = rubble;
                        for (auto& v : px) v *= 0.8f;
                        break;
                    default:
                        break;
                }
                for (int c = 0; c < 3; ++c) s.post_image(c, y, x) = std::clamp(px[c], 0.f, 1.f);
            }
    }
    for (auto& v : s.pre_image.data()) v = std::clamp(v, 0.f, 1.f);
    return s;
}

DatasetManifest generate_synthetic_dataset(const SyntheticSceneSpec& spec, int count, std::uint64_t seed) {
    if (count <= 0) throw ConfigError("synthetic dataset: count must be > 0");
    DatasetManifest m;
    m.source_note = "toy synthetic scenes, seed " + std::to_string(seed);
    for (int i = 0; i < count; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "toy_%05d", i);
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        m.add(generate_synthetic_scene(spec, rng, id));
    }
    return m;
}

}  // namespace clifgan::data
