#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "segloss/errors.hpp"

namespace segloss {

// splitmix64 finalizer. Used to spread seed material before feeding an engine.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives an independent sub-stream seed from a base seed and one or more tags.
// Chained mixing keeps (base, tag...) tuples collision-resistant in practice.
template <typename... Tags>
std::uint64_t derive_seed(std::uint64_t base, Tags... tags) {
    std::uint64_t s = mix64(base);
    ((s = mix64(s ^ static_cast<std::uint64_t>(tags))), ...);
    return s;
}

// Deterministic generator. mt19937_64 raw output is bit-specified by the C++
// standard; the standard library distributions are not, so the conversions to
// doubles and bounded integers are spelled out here. Identical seeds give
// identical streams on every conforming platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform on [lo, hi).
    double uniform_real(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // Unbiased integer in [0, n) via rejection.
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) throw ValidationError("uniform_index: n must be positive");
        const std::uint64_t bound = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= bound);
        return x % n;
    }

    // Standard normal, Box-Muller cosine branch. One engine draw pair per value;
    // no state is cached so the draw count per call is fixed.
    double normal() {
        const double u1 = 1.0 - uniform(); // (0, 1]: keeps the log finite
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

private:
    std::mt19937_64 engine_;
};

} // namespace segloss
