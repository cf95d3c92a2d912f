#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace clifgan {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; good avalanche for seed mixing.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Derive an independent stream seed from a parent seed and a label
/// (stage name, sample id, ...).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
    return mix64(seed ^ mix64(fnv1a(tag)));
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    return mix64(seed ^ mix64(index + 0x51ed27ULL));
}

/// Uniform real in [0,1) that does not depend on the standard library's
/// distribution implementation, so streams are portable.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Uniform integer in [lo, hi].
inline int uniform_int(Rng& rng, int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(rng() % span);
}

}  // namespace clifgan
