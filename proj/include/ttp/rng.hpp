#pragma once

#include <cstdint>
#include <cmath>
#include <random>
#include <string_view>

namespace ttp {

// SplitMix64 finalizer. Every random stream in the project is derived from one
// root seed through `derive_seed`, so results do not depend on worker count.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t hash_tag(std::string_view tag) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream, std::uint64_t counter = 0) noexcept {
    return splitmix64(splitmix64(root ^ splitmix64(stream)) + counter);
}

constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view tag, std::uint64_t counter = 0) noexcept {
    return derive_seed(root, hash_tag(tag), counter);
}

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
    // Top 53 bits -> [0, 1); avoids the implementation-defined std distributions.
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return static_cast<std::size_t>(uniform(rng, 0.0, static_cast<double>(n))) % n;
}

// Box-Muller; deterministic across standard libraries.
inline double normal(Rng& rng) {
    constexpr double two_pi = 6.283185307179586476925286766559;
    double u1 = uniform(rng, 0.0, 1.0);
    while (u1 <= 0.0) u1 = uniform(rng, 0.0, 1.0);
    const double u2 = uniform(rng, 0.0, 1.0);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

}  // namespace ttp
