// Copyright (c) 2026 the hass authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "hass/error.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace hass {

// splitmix64 finalizer, used to derive independent seeds from (seed, tag) pairs
inline uint64_t mix64(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t seed, uint64_t tag) {
    return mix64(seed ^ mix64(tag));
}

// pcg32 (oneill), hand-rolled so streams are bit-identical across platforms.
// std::mt19937 + std:: distributions are not portable across standard libraries.
struct Rng {
    uint64_t state = 0;
    uint64_t inc   = 0;

    explicit Rng(uint64_t seed = 0, uint64_t stream = 0) {
        state = 0;
        inc   = (stream << 1u) | 1u;
        next_u32();
        state += seed;
        next_u32();
    }

    uint32_t next_u32() {
        const uint64_t old = state;
        state = old * 6364136223846793005ULL + inc;
        const uint32_t xorshifted = (uint32_t) (((old >> 18u) ^ old) >> 27u);
        const uint32_t rot = (uint32_t) (old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
    }

    // uniform in [0, 1) with 53 random bits
    double uniform() {
        const uint64_t hi = next_u32();
        const uint64_t lo = next_u32();
        return (double) (((hi << 32) | lo) >> 11) * 0x1.0p-53;
    }

    // uniform integer in [0, n)
    uint32_t below(uint32_t n) {
        if (n == 0) {
            throw ParamError("Rng::below: n must be positive");
        }
        return (uint32_t) (((uint64_t) next_u32() * n) >> 32);
    }

    // standard normal via box-muller; consumes two uniforms per pair, caches the spare
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // inverse-cdf draw from a probability vector; tolerates small normalization slack
    // by assigning the tail mass to the last nonzero entry
    template <typename T>
    int categorical(std::span<const T> probs) {
        if (probs.empty()) {
            throw ParamError("Rng::categorical: empty distribution");
        }
        const double u = uniform();
        double cum = 0.0;
        int last_nonzero = -1;
        for (size_t i = 0; i < probs.size(); ++i) {
            const double p = (double) probs[i];
            if (p > 0.0) {
                last_nonzero = (int) i;
                cum += p;
                if (u < cum) {
                    return (int) i;
                }
            }
        }
        if (last_nonzero < 0) {
            throw NumericError("Rng::categorical: all-zero distribution");
        }
        return last_nonzero;
    }

    template <typename T>
    void shuffle(std::vector<T> & v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = below((uint32_t) i);
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace hass
