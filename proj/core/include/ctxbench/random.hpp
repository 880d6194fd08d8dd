#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace ctxbench {

/// All seeded randomness goes through this engine. The standard library's
/// distributions are implementation-defined, so the helpers below are used
/// instead to keep outputs identical across toolchains.
using Rng = std::mt19937_64;

/// Uniform integer in [0, n). n must be > 0.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

/// Uniform double in [0, 1) with 53 random bits.
double uniform_unit(Rng& rng);

/// Standard normal via Box-Muller.
double standard_normal(Rng& rng);

template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        auto j = static_cast<std::size_t>(uniform_index(rng, i));
        std::swap(items[i - 1], items[j]);
    }
}

/// k distinct indices from [0, n) (Floyd's algorithm), returned ascending.
/// If k >= n every index is returned.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, Rng& rng);

} // namespace ctxbench
