#pragma once

#include <cmath>
#include <cstdint>

namespace ptqlab {

/// Counter-based pseudo random generator (splitmix64 finalizer over a
/// strided counter). Every draw is a pure function of (seed, stream,
/// counter), so runs are reproducible bit-for-bit independent of thread
/// count or platform word order.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
        : base_(mix(seed + 0x632BE59BD9B4E019ULL * (stream + 1))) {}

    std::uint64_t next_u64() { return mix(base_ + (++counter_) * kGamma); }

    /// Uniform in [0, 1) with 53 random bits.
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller. Consumes exactly two draws.
    double next_normal() {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; // (0,1]
        double u2 = next_unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
    }

    /// Student-t with 3 degrees of freedom, rescaled to unit variance
    /// (raw t(3) variance is 3). Consumes exactly four normals.
    double next_student_t3_unit() {
        double z = next_normal();
        double c1 = next_normal();
        double c2 = next_normal();
        double c3 = next_normal();
        double chi2 = c1 * c1 + c2 * c2 + c3 * c3;
        double t = z / std::sqrt(chi2 / 3.0);
        return t / std::sqrt(3.0);
    }

    /// Unit-variance Laplace via inverse CDF (scale b = 1/sqrt(2)).
    double next_laplace_unit() {
        double u = next_unit() - 0.5;
        double b = 1.0 / std::sqrt(2.0);
        double mag = std::abs(u);
        // Guard log(0) when u == +-0.5 exactly.
        if (mag >= 0.5) mag = 0.49999999999999994;
        double x = -b * std::log(1.0 - 2.0 * mag);
        return u < 0.0 ? -x : x;
    }

private:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
    static constexpr double kTwoPi = 6.283185307179586476925286766559;

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t base_;
    std::uint64_t counter_ = 0;
};

} // namespace ptqlab
