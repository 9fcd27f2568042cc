#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace fairsel {

// Deterministic RNG used everywhere instead of <random> distributions, whose
// output is implementation-defined. Same seed, same stream, on any platform.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(uint64_t seed = 1) {
        uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
        spare_valid_ = false;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller; one spare is cached per stream.
    double normal() {
        if (spare_valid_) {
            spare_valid_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_ = r * std::sin(theta);
        spare_valid_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Integer in [0, n), n >= 1. Unbiased via rejection.
    uint64_t below(uint64_t n) {
        const uint64_t threshold = (0 - n) % n;
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

private:
    static constexpr uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<uint64_t, 4> state_{};
    double spare_ = 0.0;
    bool spare_valid_ = false;
};

// Independent substream keyed by (master seed, salts...). Parallel grid cells
// and per-panel generators each take their own derived stream.
inline Rng derive_stream(uint64_t master, std::initializer_list<uint64_t> salts) {
    uint64_t s = master ^ 0xa0761d6478bd642fULL;
    splitmix64(s);
    for (uint64_t salt : salts) {
        s ^= splitmix64(s) ^ (salt + 0x9e3779b97f4a7c15ULL);
        splitmix64(s);
    }
    return Rng(splitmix64(s));
}

}  // namespace fairsel
