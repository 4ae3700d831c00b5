// Copyright (c) 2026 The djscc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <utility>

namespace djscc {

/// Deterministic random source. Wraps std::mt19937_64 (whose output sequence
/// is pinned by the standard) and derives gaussians with a stateless
/// Box-Muller so the full state is the engine state alone, which makes
/// serialization for checkpoint resume exact.
class rng {
  public:
    explicit rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// One standard normal pair per two uniform draws (trig Box-Muller).
    std::pair<double, double> gaussian_pair() {
        double u1 = uniform();
        // keep u1 away from 0 so log stays finite
        u1 = 1.0 - u1;
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        return {r * std::cos(a), r * std::sin(a)};
    }

    double gaussian() { return gaussian_pair().first; }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    static rng deserialize(const std::string& s) {
        rng r(0);
        std::istringstream is(s);
        is >> r.engine_;
        if (!is) throw std::invalid_argument("rng: malformed engine state");
        return r;
    }

    bool operator==(const rng& o) const { return engine_ == o.engine_; }

  private:
    std::mt19937_64 engine_;
};

/// splitmix64 finalizer; used to derive independent stream seeds from a base
/// seed plus tags without correlations between consecutive seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag_a, std::uint64_t tag_b = 0) {
    return mix_seed(mix_seed(base ^ mix_seed(tag_a)) ^ mix_seed(tag_b));
}

}  // namespace djscc
