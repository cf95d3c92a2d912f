#include "clifgan/fuse.hpp"

#include <algorithm>
#include <deque>

namespace clifgan::fuse {

using nlohmann::json;

std::uint8_t vote(std::uint8_t a, std::uint8_t b, std::uint8_t c) {
    if (a == b || a == c) return a;
    if (b == c) return b;
    // Three distinct labels: most severe damage, never 255.
    std::uint8_t best = 0;
    for (auto v : {a, b, c})
        if (v != label::ignore) best = std::max(best, v);
    return best;
}

DamageMask majority_vote(const DamageMask& a, const DamageMask& b, const DamageMask& c) {
    if (a.size() != b.size() || a.size() != c.size()) throw Error("majority_vote: mask shapes differ");
    DamageMask out(a.size());
    for (std::size_t i = 0; i < a.area(); ++i) out.cells()[i] = vote(a.cells()[i], b.cells()[i], c.cells()[i]);
    return out;
}

void MorphologyConfig::validate() const {
    if (side < 1 || side % 2 == 0) throw ConfigError("morphology: side must be odd and >= 1");
    if (min_region_area < 0) throw ConfigError("morphology: min_region_area must be >= 0");
}

void to_json(json& j, const MorphologyConfig& c) {
    j = json{{"side", c.side}, {"min_region_area", c.min_region_area}};
}

void from_json(const json& j, MorphologyConfig& c) {
    MorphologyConfig d;
    c.side = j.value("side", d.side);
    c.min_region_area = j.value("min_region_area", d.min_region_area);
    c.validate();
}

namespace {

// Separable square filter: `all` = erosion (min), otherwise dilation (max).
// Outside-grid pixels read as 0.
BinaryGrid square_filter(const BinaryGrid& g, int side, bool all) {
    const int r = side / 2, h = g.height(), w = g.width();
    BinaryGrid tmp(h, w), out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::uint8_t acc = all ? 1 : 0;
            for (int dx = -r; dx <= r; ++dx) {
                const int xx = x + dx;
                const std::uint8_t v = (xx >= 0 && xx < w) ? g(y, xx) : 0;
                acc = all ? (acc & (v != 0)) : (acc | (v != 0));
            }
            tmp(y, x) = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::uint8_t acc = all ? 1 : 0;
            for (int dy = -r; dy <= r; ++dy) {
                const int yy = y + dy;
                const std::uint8_t v = (yy >= 0 && yy < h) ? tmp(yy, x) : 0;
                acc = all ? (acc & (v != 0)) : (acc | (v != 0));
            }
            out(y, x) = acc;
        }
    return out;
}

BinaryGrid pad(const BinaryGrid& g, int p) {
    BinaryGrid out(g.height() + 2 * p, g.width() + 2 * p);
    for (int y = 0; y < g.height(); ++y)
        for (int x = 0; x < g.width(); ++x) out(y + p, x + p) = g(y, x);
    return out;
}

BinaryGrid crop(const BinaryGrid& g, int p, Size2 size) {
    BinaryGrid out(size);
    for (int y = 0; y < size.height; ++y)
        for (int x = 0; x < size.width; ++x) out(y, x) = g(y + p, x + p);
    return out;
}

}  // namespace

BinaryGrid erode(const BinaryGrid& g, int side) { return square_filter(g, side, true); }

BinaryGrid dilate(const BinaryGrid& g, int side) { return square_filter(g, side, false); }

BinaryGrid open(const BinaryGrid& g, int side) { return dilate(erode(g, side), side); }

BinaryGrid close(const BinaryGrid& g, int side) {
    // The dilation may spill past the border; keep it on a padded canvas so
    // the erosion sees it.
    const int p = side / 2;
    return crop(erode(dilate(pad(g, p), side), side), p, g.size());
}

std::pair<Grid<int>, int> connected_components(const DamageMask& mask, std::uint8_t value) {
    Grid<int> ids(mask.size(), 0);
    int next = 0;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x) {
            if (mask(y, x) != value || ids(y, x) != 0) continue;
            ids(y, x) = ++next;
            queue.emplace_back(y, x);
            while (!queue.empty()) {
                auto [cy, cx] = queue.front();
                queue.pop_front();
                constexpr int dy[4] = {-1, 1, 0, 0};
                constexpr int dx[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int ny = cy + dy[k], nx = cx + dx[k];
                    if (mask.contains(ny, nx) && mask(ny, nx) == value && ids(ny, nx) == 0) {
                        ids(ny, nx) = next;
                        queue.emplace_back(ny, nx);
                    }
                }
            }
        }
    return {std::move(ids), next};
}

DamageMask open_close_pass(const DamageMask& mask, int side) {
    // Each pixel takes the highest c whose filtered level set {label >= c}
    // contains it; ignore pixels count as background, then are restored.
    DamageMask out(mask.size(), label::background);
    for (std::uint8_t c = label::no_damage; c <= label::destroyed; ++c) {
        BinaryGrid at_least(mask.size());
        bool any = false;
        for (std::size_t i = 0; i < mask.area(); ++i) {
            const auto v = mask.cells()[i];
            if (v != label::ignore && v >= c) at_least.cells()[i] = 1, any = true;
        }
        if (!any) break;
        const BinaryGrid filtered = close(open(at_least, side), side);
        for (std::size_t i = 0; i < out.area(); ++i)
            if (filtered.cells()[i]) out.cells()[i] = c;
    }
    for (std::size_t i = 0; i < out.area(); ++i)
        if (mask.cells()[i] == label::ignore) out.cells()[i] = label::ignore;
    return out;
}

DamageMask prune_small_regions(const DamageMask& mask, int min_area) {
    DamageMask out = mask;
    if (min_area <= 1) return out;
    for (std::uint8_t c = label::no_damage; c <= label::destroyed; ++c) {
        auto [ids, n] = connected_components(mask, c);
        if (n == 0) continue;
        std::vector<int> area(static_cast<std::size_t>(n) + 1, 0);
        for (int id : ids.cells()) ++area[id];
        for (std::size_t i = 0; i < out.area(); ++i) {
            const int id = ids.cells()[i];
            if (id != 0 && area[id] < min_area) out.cells()[i] = label::background;
        }
    }
    return out;
}

DamageMask morph_filter(const DamageMask& mask, const MorphologyConfig& config) {
    config.validate();
    return prune_small_regions(open_close_pass(mask, config.side), config.min_region_area);
}

DamageMask fuse_masks(const DamageMask& a, const DamageMask& b, const DamageMask& c, const MorphologyConfig& config) {
    return morph_filter(majority_vote(a, b, c), config);
}

DamageMask fuse_predictions(const std::array<metrics::DamagePredictor, 3>& members, const data::TileSample& sample,
                            const MorphologyConfig& config) {
    return fuse_masks(members[0](sample), members[1](sample), members[2](sample), config);
}

}  // namespace clifgan::fuse
