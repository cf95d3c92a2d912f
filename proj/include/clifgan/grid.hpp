#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace clifgan {

/// Base class for every error raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments (maps to CLI exit code 2).
struct ConfigError : Error {
    using Error::Error;
};

struct Size2 {
    int height = 0;
    int width = 0;
    friend bool operator==(const Size2&, const Size2&) = default;
};

/// Dense row-major 2-D grid.
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(int height, int width, T fill = T{})
        : height_(height), width_(width), cells_(static_cast<std::size_t>(height) * width, fill) {
        if (height < 0 || width < 0) throw Error("Grid: negative dimensions");
    }
    explicit Grid(Size2 s, T fill = T{}) : Grid(s.height, s.width, fill) {}

    int height() const { return height_; }
    int width() const { return width_; }
    Size2 size() const { return {height_, width_}; }
    std::size_t area() const { return cells_.size(); }
    bool empty() const { return cells_.empty(); }

    T& operator()(int y, int x) { return cells_[static_cast<std::size_t>(y) * width_ + x]; }
    const T& operator()(int y, int x) const { return cells_[static_cast<std::size_t>(y) * width_ + x]; }

    bool contains(int y, int x) const { return y >= 0 && y < height_ && x >= 0 && x < width_; }

    std::vector<T>& cells() { return cells_; }
    const std::vector<T>& cells() const { return cells_; }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<T> cells_;
};

/// Mask legend shared by every stage.
namespace label {
inline constexpr std::uint8_t background = 0;
inline constexpr std::uint8_t no_damage = 1;
inline constexpr std::uint8_t minor_damage = 2;
inline constexpr std::uint8_t major_damage = 3;
inline constexpr std::uint8_t destroyed = 4;
inline constexpr std::uint8_t ignore = 255;
inline constexpr int num_classes = 5;  // background + four damage levels

constexpr bool is_valid(std::uint8_t v) { return v <= destroyed || v == ignore; }
constexpr bool is_building(std::uint8_t v) { return v >= no_damage && v <= destroyed; }
}  // namespace label

/// 2-D label grid using the legend in `label`.
using DamageMask = Grid<std::uint8_t>;

inline std::set<std::uint8_t> label_set(const DamageMask& m) {
    return {m.cells().begin(), m.cells().end()};
}

inline bool mask_is_valid(const DamageMask& m) {
    for (auto v : m.cells())
        if (!label::is_valid(v)) return false;
    return true;
}

/// Planar float image, channel-major (C×H×W). Values nominally in [0,1].
class Image {
public:
    Image() = default;
    Image(int channels, int height, int width, float fill = 0.f)
        : channels_(channels), height_(height), width_(width),
          data_(static_cast<std::size_t>(channels) * height * width, fill) {
        if (channels < 0 || height < 0 || width < 0) throw Error("Image: negative dimensions");
    }
    Image(int channels, Size2 s, float fill = 0.f) : Image(channels, s.height, s.width, fill) {}

    int channels() const { return channels_; }
    int height() const { return height_; }
    int width() const { return width_; }
    Size2 size() const { return {height_, width_}; }
    bool empty() const { return data_.empty(); }

    float& operator()(int c, int y, int x) {
        return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
    }
    float operator()(int c, int y, int x) const {
        return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
    }

    std::vector<float>& data() { return data_; }
    const std::vector<float>& data() const { return data_; }

    friend bool operator==(const Image&, const Image&) = default;

private:
    int channels_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<float> data_;
};

}  // namespace clifgan
