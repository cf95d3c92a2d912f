#pragma once

#include <array>
#include <filesystem>

#include <json.hpp>

#include "clifgan/grid.hpp"

namespace clifgan::overlay {

struct Rgb {
    float r, g, b;
};

/// Class 1 red, class 4 yellow, classes 2 and 3 evenly spaced orange shades.
/// Index 0 (background) is unused.
const std::array<Rgb, 5>& palette();

constexpr double default_alpha = 0.5;

/// Blends each building pixel toward its palette color; background and
/// ignore pixels keep the image value exactly.
Image render_overlay(const Image& image, const DamageMask& mask, double alpha = default_alpha);

nlohmann::json palette_metadata(double alpha = default_alpha);

/// Writes the overlay PNG and a `<out_path>.json` sidecar with the palette.
void write_overlay(const Image& image, const DamageMask& mask, const std::filesystem::path& out_path,
                   double alpha = default_alpha);

}  // namespace clifgan::overlay
