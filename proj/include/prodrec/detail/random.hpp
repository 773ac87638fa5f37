#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace prodrec::detail {

using Rng = std::mt19937_64;

/// Uniform integer in [0, n). Lemire's multiply-shift; bias is below 2^-40 for the sizes used here.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

/// Uniform double in [0, 1).
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <class T>
void shuffle(std::span<T> items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        auto j = uniform_below(rng, i);
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace prodrec::detail
