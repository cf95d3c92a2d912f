#include "clifgan/overlay.hpp"

#include <fstream>

#include "clifgan/image_io.hpp"

namespace clifgan::overlay {

using nlohmann::json;

const std::array<Rgb, 5>& palette() {
    static const std::array<Rgb, 5> p{{
        {0.f, 0.f, 0.f},
        {1.f, 0.f, 0.f},
        {1.f, 1.f / 3.f, 0.f},
        {1.f, 2.f / 3.f, 0.f},
        {1.f, 1.f, 0.f},
    }};
    return p;
}

Image render_overlay(const Image& image, const DamageMask& mask, double alpha) {
    if (image.height() != mask.height() || image.width() != mask.width())
        throw Error("render_overlay: image and mask sizes differ");
    if (image.channels() != 3) throw Error("render_overlay: expected a 3-channel image");
    if (!(alpha >= 0 && alpha <= 1)) throw ConfigError("render_overlay: alpha must be in [0,1]");
    Image out = image;
    const float a = static_cast<float>(alpha);
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x) {
            const auto v = mask(y, x);
            if (!label::is_building(v)) continue;
            const auto& c = palette()[v];
            const float rgb[3] = {c.r, c.g, c.b};
            for (int ch = 0; ch < 3; ++ch) out(ch, y, x) = (1.f - a) * image(ch, y, x) + a * rgb[ch];
        }
    return out;
}

json palette_metadata(double alpha) {
    static const char* names[5] = {"background", "no-damage", "minor-damage", "major-damage", "destroyed"};
    json classes = json::object();
    for (int c = 1; c <= 4; ++c) {
        const auto& p = palette()[c];
        classes[std::to_string(c)] = json{{"name", names[c]},
                                          {"rgb", {static_cast<int>(std::lround(p.r * 255)),
                                                   static_cast<int>(std::lround(p.g * 255)),
                                                   static_cast<int>(std::lround(p.b * 255))}}};
    }
    return json{{"alpha", alpha}, {"classes", classes}, {"untouched", {"0 background", "255 ignore"}}};
}

void write_overlay(const Image& image, const DamageMask& mask, const std::filesystem::path& out_path, double alpha) {
    io::write_png_rgb(render_overlay(image, mask, alpha), out_path);
    std::ofstream(out_path.string() + ".json") << palette_metadata(alpha).dump(2) << '\n';
}

}  // namespace clifgan::overlay
