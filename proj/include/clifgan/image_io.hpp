#pragma once

#include <filesystem>

#include "clifgan/grid.hpp"

namespace clifgan::io {

/// 8-bit RGB(A/gray) PNG to a 3-channel image in [0,1].
Image read_png_rgb(const std::filesystem::path& path);
/// Values clamped to [0,1] and quantized to 8 bits.
void write_png_rgb(const Image& image, const std::filesystem::path& path);

/// Single-channel 8-bit PNG; values are taken as mask labels verbatim.
DamageMask read_png_mask(const std::filesystem::path& path);
void write_png_mask(const DamageMask& mask, const std::filesystem::path& path);

}  // namespace clifgan::io
