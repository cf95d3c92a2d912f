#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "clifgan/data.hpp"

namespace clifgan::data {

using nlohmann::json;

namespace {

// Reflection without repeating the edge pixel (…2 1 | 0 1 2 … n-1 | n-2 …).
int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

float sample_bilinear_reflect(const Image& img, int c, double sx, double sy) {
    const double fx0 = std::floor(sx), fy0 = std::floor(sy);
    const double ax = sx - fx0, ay = sy - fy0;
    const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
    const int w = img.width(), h = img.height();
    const float v00 = img(c, reflect_index(y0, h), reflect_index(x0, w));
    if (ax == 0.0 && ay == 0.0) return v00;
    const float v01 = img(c, reflect_index(y0, h), reflect_index(x0 + 1, w));
    const float v10 = img(c, reflect_index(y0 + 1, h), reflect_index(x0, w));
    const float v11 = img(c, reflect_index(y0 + 1, h), reflect_index(x0 + 1, w));
    const double top = v00 * (1 - ax) + v01 * ax;
    const double bottom = v10 * (1 - ax) + v11 * ax;
    return static_cast<float>(top * (1 - ay) + bottom * ay);
}

}  // namespace

Image resize_image(const Image& img, Size2 target) {
    if (img.size() == target) return img;
    Image out(img.channels(), target);
    const double rx = static_cast<double>(img.width()) / target.width;
    const double ry = static_cast<double>(img.height()) / target.height;
    for (int y = 0; y < target.height; ++y) {
        const double sy = std::clamp((y + 0.5) * ry - 0.5, 0.0, img.height() - 1.0);
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, img.height() - 1);
        const double ay = sy - y0;
        for (int x = 0; x < target.width; ++x) {
            const double sx = std::clamp((x + 0.5) * rx - 0.5, 0.0, img.width() - 1.0);
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, img.width() - 1);
            const double ax = sx - x0;
            for (int c = 0; c < img.channels(); ++c) {
                const double top = img(c, y0, x0) * (1 - ax) + img(c, y0, x1) * ax;
                const double bottom = img(c, y1, x0) * (1 - ax) + img(c, y1, x1) * ax;
                out(c, y, x) = static_cast<float>(top * (1 - ay) + bottom * ay);
            }
        }
    }
    return out;
}

DamageMask resize_mask(const DamageMask& mask, Size2 target) {
    if (mask.size() == target) return mask;
    DamageMask out(target);
    const double rx = static_cast<double>(mask.width()) / target.width;
    const double ry = static_cast<double>(mask.height()) / target.height;
    for (int y = 0; y < target.height; ++y) {
        const int sy = std::min(static_cast<int>(std::floor((y + 0.5) * ry)), mask.height() - 1);
        for (int x = 0; x < target.width; ++x) {
            const int sx = std::min(static_cast<int>(std::floor((x + 0.5) * rx)), mask.width() - 1);
            out(y, x) = mask(sy, sx);
        }
    }
    return out;
}

TileSample resize_tile(const TileSample& sample, Size2 target) {
    if (target.height < 8 || target.width < 8) throw Error("resize_tile: target dims must be >= 8");
    if (sample.size() == target) return sample;
    TileSample out;
    out.id = sample.id;
    out.provenance = sample.provenance;
    out.pre_image = resize_image(sample.pre_image, target);
    out.post_image = resize_image(sample.post_image, target);
    out.pre_mask = resize_mask(sample.pre_mask, target);
    out.post_mask = resize_mask(sample.post_mask, target);
    return out;
}

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng() % i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

DatasetManifest empty_like(const DatasetManifest& m) {
    DatasetManifest out;
    out.base_dir = m.base_dir;
    out.source_note = m.source_note;
    out.split_tag = m.split_tag;
    return out;
}

}  // namespace

std::pair<DatasetManifest, DatasetManifest> split_train_val(const DatasetManifest& manifest, double train_fraction,
                                                           std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ConfigError("split_train_val: train_fraction must be in (0,1)");
    const std::size_t n = manifest.size();
    if (n < 2) throw Error("split_train_val: need at least 2 entries to form both splits");
    const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction));
    if (n_train == 0 || n_train == n)
        throw Error("split_train_val: fraction " + std::to_string(train_fraction) + " leaves an empty split for " +
                    std::to_string(n) + " entries");
    const auto order = shuffled_indices(n, seed);
    DatasetManifest train = empty_like(manifest), val = empty_like(manifest);
    train.split_tag = SplitTag::train;
    val.split_tag = SplitTag::val;
    for (std::size_t k = 0; k < n; ++k)
        (k < n_train ? train : val).add(manifest.entries()[order[k]]);
    return {std::move(train), std::move(val)};
}

DatasetManifest subsample(const DatasetManifest& manifest, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("subsample: fraction must be in (0,1]");
    const std::size_t n = manifest.size();
    const auto keep = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction));
    if (keep == 0) throw Error("subsample: selection would be empty");
    auto order = shuffled_indices(n, seed);
    order.resize(keep);
    std::sort(order.begin(), order.end());
    DatasetManifest out = empty_like(manifest);
    for (auto i : order) out.add(manifest.entries()[i]);
    if (keep != n) out.note("subsampled " + std::to_string(keep) + "/" + std::to_string(n));
    return out;
}

// ---------------------------------------------------------------------------

AugmentationConfig AugmentationConfig::identity() {
    AugmentationConfig c;
    c.scale_range = {1.0, 1.0};
    c.flip_horizontal = c.flip_vertical = false;
    c.rotations = c.shearing = false;
    return c;
}

void AugmentationConfig::validate() const {
    if (!(scale_range.first > 0 && scale_range.second > 0)) throw ConfigError("augmentation: scales must be > 0");
    if (scale_range.first > scale_range.second) throw ConfigError("augmentation: scale_range low > high");
    if (crop_size < 0) throw ConfigError("augmentation: crop_size must be >= 0");
}

void to_json(json& j, const AugmentationConfig& c) {
    j = json{{"scale_range", {c.scale_range.first, c.scale_range.second}},
             {"crop_size", c.crop_size},
             {"flip_horizontal", c.flip_horizontal},
             {"flip_vertical", c.flip_vertical},
             {"rotations", c.rotations},
             {"max_rotation_degrees", c.max_rotation_degrees},
             {"shearing", c.shearing},
             {"max_shear", c.max_shear},
             {"seed", c.seed}};
}

void from_json(const json& j, AugmentationConfig& c) {
    AugmentationConfig d;
    if (j.contains("scale_range"))
        c.scale_range = {j["scale_range"].at(0).get<double>(), j["scale_range"].at(1).get<double>()};
    else
        c.scale_range = d.scale_range;
    c.crop_size = j.value("crop_size", d.crop_size);
    c.flip_horizontal = j.value("flip_horizontal", d.flip_horizontal);
    c.flip_vertical = j.value("flip_vertical", d.flip_vertical);
    c.rotations = j.value("rotations", d.rotations);
    c.max_rotation_degrees = j.value("max_rotation_degrees", d.max_rotation_degrees);
    c.shearing = j.value("shearing", d.shearing);
    c.max_shear = j.value("max_shear", d.max_shear);
    c.seed = j.value("seed", d.seed);
    c.validate();
}

TileSample augment(const TileSample& sample, const AugmentationConfig& config, Rng& rng) {
    config.validate();
    const int h = sample.size().height, w = sample.size().width;
    const int crop = config.crop_size > 0 ? config.crop_size : std::max(h, w);

    const double scale = config.scale_range.first == config.scale_range.second
                             ? config.scale_range.first
                             : uniform(rng, config.scale_range.first, config.scale_range.second);
    const bool flip_h = config.flip_horizontal && (rng() & 1u);
    const bool flip_v = config.flip_vertical && (rng() & 1u);
    const double angle = config.rotations ? uniform(rng, -config.max_rotation_degrees, config.max_rotation_degrees) *
                                                std::numbers::pi / 180.0
                                          : 0.0;
    const double shear = config.shearing ? uniform(rng, -config.max_shear, config.max_shear) : 0.0;

    // Crop window in the scaled frame; centered (i.e. padded) when the crop is
    // larger than the scaled image.
    const double scaled_w = w * scale, scaled_h = h * scale;
    auto pick_offset = [&](double extent) {
        const double slack = extent - crop;
        if (slack <= 0) return slack / 2.0;
        return std::floor(uniform01(rng) * (std::floor(slack) + 1.0));
    };
    const double off_x = pick_offset(scaled_w);
    const double off_y = pick_offset(scaled_h);

    // Forward: p_out = M (p_src - c_src) + c_scaled - offset with
    // M = scale · R(angle) · Shear · Flip; invert per output pixel.
    const double fx = flip_h ? -1.0 : 1.0, fy = flip_v ? -1.0 : 1.0;
    const double ca = std::cos(angle), sa = std::sin(angle);
    // M = s * [ca -sa; sa ca] * [1 shear; 0 1] * diag(fx, fy)
    const double m00 = scale * ca * fx, m01 = scale * (ca * shear - sa) * fy;
    const double m10 = scale * sa * fx, m11 = scale * (sa * shear + ca) * fy;
    const double det = m00 * m11 - m01 * m10;
    const double i00 = m11 / det, i01 = -m01 / det, i10 = -m10 / det, i11 = m00 / det;
    const double csx = w / 2.0, csy = h / 2.0;
    const double ctx = scaled_w / 2.0, cty = scaled_h / 2.0;

    const bool identity = crop == w && crop == h && scale == 1.0 && !flip_h && !flip_v && angle == 0.0 &&
                          shear == 0.0 && off_x == 0.0 && off_y == 0.0;
    if (identity) return sample;

    TileSample out;
    out.id = sample.id;
    out.provenance = sample.provenance;
    out.pre_image = Image(3, crop, crop);
    out.post_image = Image(3, crop, crop);
    out.pre_mask = DamageMask(crop, crop);
    out.post_mask = DamageMask(crop, crop);
    for (int y = 0; y < crop; ++y) {
        for (int x = 0; x < crop; ++x) {
            const double dx = x + 0.5 + off_x - ctx, dy = y + 0.5 + off_y - cty;
            const double px = i00 * dx + i01 * dy + csx;  // source continuous coords
            const double py = i10 * dx + i11 * dy + csy;
            for (int c = 0; c < 3; ++c) {
                out.pre_image(c, y, x) = sample_bilinear_reflect(sample.pre_image, c, px - 0.5, py - 0.5);
                out.post_image(c, y, x) = sample_bilinear_reflect(sample.post_image, c, px - 0.5, py - 0.5);
            }
            const int nx = static_cast<int>(std::floor(px)), ny = static_cast<int>(std::floor(py));
            if (nx >= 0 && nx < w && ny >= 0 && ny < h) {
                out.pre_mask(y, x) = sample.pre_mask(ny, nx);
                out.post_mask(y, x) = sample.post_mask(ny, nx);
            }
        }
    }
    return out;
}

}  // namespace clifgan::data
