#pragma once

#include "mfgflow/common.hpp"

#include <cmath>
#include <cstdint>

namespace mfgflow {

/// Counter-based deterministic RNG. Every draw is a pure function of
/// (seed, counter), so sampling is reproducible bit-for-bit across runs,
/// platforms and parallel splits. Streams are derived by hashing a label
/// into the seed. std::normal_distribution is never used (its algorithm is
/// implementation-defined).
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    /// Independent substream for (label, index) pairs, e.g. per path or per round.
    CounterRng stream(std::uint64_t label) const {
        return CounterRng(mix(seed_ ^ 0x9e3779b97f4a7c15ULL, label));
    }

    std::uint64_t bits(std::uint64_t counter) const { return mix(seed_, counter); }

    /// Uniform in (0,1); never returns exactly 0 or 1.
    double uniform(std::uint64_t counter) const {
        const std::uint64_t b = bits(counter);
        return (static_cast<double>(b >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller on two counter draws.
    double normal(std::uint64_t counter) const {
        const double u1 = uniform(2 * counter);
        const double u2 = uniform(2 * counter + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    /// d x m matrix of standard normals starting at counter base.
    Mat normal_matrix(int d, int m, std::uint64_t base) const {
        Mat out(d, m);
        for (int j = 0; j < m; ++j)
            for (int i = 0; i < d; ++i)
                out(i, j) = normal(base + static_cast<std::uint64_t>(j) * d + i);
        return out;
    }

private:
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        // splitmix64 finalizer over the combined state
        std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
};

}  // namespace mfgflow
