#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace camlmlab {

// SplitMix64 finalizer. Used both as the PRNG core and as the hash for
// deriving per-step / per-shard substream seeds.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t hash_mix(uint64_t a, uint64_t b) {
    return splitmix64(splitmix64(a) ^ (b + 0x9e3779b97f4a7c15ULL));
}

template <typename... Rest>
uint64_t hash_mix(uint64_t a, uint64_t b, Rest... rest) {
    return hash_mix(hash_mix(a, b), static_cast<uint64_t>(rest)...);
}

inline uint64_t hash_tokens(uint64_t seed, const std::vector<int>& tokens) {
    uint64_t h = splitmix64(seed);
    for (int t : tokens) h = hash_mix(h, static_cast<uint64_t>(t));
    return h;
}

// Deterministic counter-based generator. Distributions are hand-rolled so
// that streams are reproducible independent of the standard library build.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 significant bits.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Unbiased uniform in [0, n).
    uint64_t below(uint64_t n) {
        const uint64_t lim = n * ((~uint64_t{0}) / n);
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= lim);
        return x % n;
    }

    // Uniform integer in [lo, hi] inclusive.
    int range_int(int lo, int hi) {
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo) + 1));
    }

    bool bernoulli(double p) { return next_unit() < p; }

    // Standard normal, Box-Muller with cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - next_unit();
        const double u2 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    // Normal(0, sigma) resampled until within trunc_sigmas standard deviations.
    double truncated_normal(double sigma, double trunc_sigmas) {
        double z;
        do {
            z = normal();
        } while (std::abs(z) > trunc_sigmas);
        return z * sigma;
    }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace camlmlab
