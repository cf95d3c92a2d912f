#include "clifgan/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace clifgan::io {
namespace {

struct PngImage {
    png_image img;
    PngImage() {
        std::memset(&img, 0, sizeof img);
        img.version = PNG_IMAGE_VERSION;
    }
    ~PngImage() { png_image_free(&img); }
    PngImage(const PngImage&) = delete;
    PngImage& operator=(const PngImage&) = delete;
};

std::vector<png_byte> read_raw(const std::filesystem::path& path, png_uint_32 format, int& h, int& w) {
    PngImage p;
    if (!png_image_begin_read_from_file(&p.img, path.c_str()))
        throw Error("cannot read PNG " + path.string() + ": " + p.img.message);
    p.img.format = format;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(p.img));
    if (!png_image_finish_read(&p.img, nullptr, buf.data(), 0, nullptr))
        throw Error("cannot decode PNG " + path.string() + ": " + p.img.message);
    h = static_cast<int>(p.img.height);
    w = static_cast<int>(p.img.width);
    return buf;
}

void write_raw(const std::filesystem::path& path, png_uint_32 format, int h, int w, const png_byte* data) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    PngImage p;
    p.img.width = static_cast<png_uint_32>(w);
    p.img.height = static_cast<png_uint_32>(h);
    p.img.format = format;
    if (!png_image_write_to_file(&p.img, path.c_str(), 0, data, 0, nullptr))
        throw Error("cannot write PNG " + path.string() + ": " + p.img.message);
}

}  // namespace

Image read_png_rgb(const std::filesystem::path& path) {
    int h = 0, w = 0;
    auto buf = read_raw(path, PNG_FORMAT_RGB, h, w);
    Image out(3, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                out(c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.f;
    return out;
}

void write_png_rgb(const Image& image, const std::filesystem::path& path) {
    if (image.channels() != 3) throw Error("write_png_rgb: expected 3 channels");
    const int h = image.height(), w = image.width();
    std::vector<png_byte> buf(static_cast<std::size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = std::clamp(image(c, y, x), 0.f, 1.f);
                buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
                    static_cast<png_byte>(std::lround(v * 255.f));
            }
    write_raw(path, PNG_FORMAT_RGB, h, w, buf.data());
}

DamageMask read_png_mask(const std::filesystem::path& path) {
    int h = 0, w = 0;
    auto buf = read_raw(path, PNG_FORMAT_GRAY, h, w);
    DamageMask out(h, w);
    std::copy(buf.begin(), buf.end(), out.cells().begin());
    return out;
}

void write_png_mask(const DamageMask& mask, const std::filesystem::path& path) {
    write_raw(path, PNG_FORMAT_GRAY, mask.height(), mask.width(), mask.cells().data());
}

}  // namespace clifgan::io
