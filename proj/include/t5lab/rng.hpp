#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace t5lab {

// SplitMix64 (Steele/Lea/Flood; public-domain reference at prng.di.unimi.it/splitmix64.c).
// 64-bit state, one multiply-xorshift chain per draw. Uniform doubles take the top 53 bits;
// normals come from Box-Muller with the sine half cached as a spare.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n); modulo bias is < 2^-40 for the n used here
    uint64_t below(uint64_t n) { return next_u64() % n; }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 is shifted into (0, 1] so the log stays finite
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// A dedicated stream per (seed, name). Every random initialization in the project goes
// through this, so fresh parameters depend only on the seed and the parameter name.
inline Rng rng_for(uint64_t seed, std::string_view name) {
    uint64_t s = seed * 6364136223846793005ull + 1442695040888963407ull;
    return Rng(s ^ fnv1a64(name));
}

}  // namespace t5lab
