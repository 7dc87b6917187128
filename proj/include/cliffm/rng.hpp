#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "cliffm/common.hpp"

namespace cliffm {

inline u64 splitmix64(u64& state) {
    u64 z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline u64 fnv1a64(std::string_view s) {
    u64 h = 0xCBF29CE484222325ULL;
    for (char c : s) {
        h ^= static_cast<u8>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

// PCG32, implemented locally rather than via <random> so streams are
// bit-reproducible across platforms and toolchains.
class Rng {
public:
    Rng() : Rng(0x853C49E6748FEA9BULL) {}
    explicit Rng(u64 seed, u64 stream = 0xDA3E39CB94B95BDBULL) {
        state_ = 0;
        inc_ = (stream << 1u) | 1u;
        next_u32();
        state_ += seed;
        next_u32();
    }

    u32 next_u32() {
        u64 old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        u32 xorshifted = static_cast<u32>(((old >> 18u) ^ old) >> 27u);
        u32 rot = static_cast<u32>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
    }

    // Uniform in [0, 1).
    double uniform() { return next_u32() * 0x1.0p-32; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
    u64 below(u64 n) {
        if (n <= 1) return 0;
        u64 limit = ~0ULL - ~0ULL % n;
        for (;;) {
            u64 r = (static_cast<u64>(next_u32()) << 32) | next_u32();
            if (r < limit) return r % n;
        }
    }

    bool bernoulli(double p) { return uniform() < p; }

    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        // Box-Muller; u1 > 0 guaranteed by the +2^-33 nudge.
        double u1 = uniform() + 0x1.0p-33;
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(theta);
        have_cached_ = true;
        return r * std::cos(theta);
    }

    // Johnk's beta sampler; adequate for the alpha >= 0.3 range used here.
    double beta(double a, double b) {
        if (a == 1.0 && b == 1.0) return uniform();
        for (int iter = 0; iter < 10000; ++iter) {
            double u = std::pow(uniform() + 1e-300, 1.0 / a);
            double v = std::pow(uniform() + 1e-300, 1.0 / b);
            if (u + v <= 1.0 && u + v > 0.0) return u / (u + v);
        }
        return 0.5;
    }

private:
    u64 state_ = 0;
    u64 inc_ = 0;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

// Deterministic substream derivation: the run seed plus a purpose label plus
// an index fully determine the stream, so consumers can draw out of order.
inline Rng derive_rng(u64 base_seed, std::string_view label, u64 index = 0) {
    u64 h = fnv1a64(label);
    u64 s = base_seed ^ h;
    u64 mixed = splitmix64(s);
    s += index * 0x9E3779B97F4A7C15ULL;
    u64 mixed2 = splitmix64(s);
    return Rng(mixed2, mixed | 1u);
}

}  // namespace cliffm
