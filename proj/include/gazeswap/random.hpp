#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace gazeswap {

/// Seeded generator with a platform-independent mapping to doubles.
/// std::uniform_real_distribution is implementation-defined, so outputs are
/// produced from the raw 64-bit stream instead.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 42) : engine_(seed) {}

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (one value per call, the pair is not cached).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    std::uint64_t next() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

}  // namespace gazeswap
