#include "ctxbench/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <unordered_set>

namespace ctxbench {

std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    // Draws past the last full bucket are rejected, which removes modulo bias.
    const std::uint64_t bucket = Rng::max() / n;
    for (;;) {
        std::uint64_t q = rng() / bucket;
        if (q < n) {
            return q;
        }
    }
}

double uniform_unit(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double standard_normal(Rng& rng) {
    double u1 = 0.0;
    do {
        u1 = uniform_unit(rng);
    } while (u1 <= 0.0);
    double u2 = uniform_unit(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, Rng& rng) {
    if (k >= n) {
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), std::size_t{0});
        return all;
    }
    std::unordered_set<std::size_t> chosen;
    chosen.reserve(k * 2);
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t j = n - k; j < n; ++j) {
        auto t = static_cast<std::size_t>(uniform_index(rng, j + 1));
        if (!chosen.insert(t).second) {
            t = j;
            chosen.insert(t);
        }
        out.push_back(t);
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace ctxbench
