#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string_view>

#include "mixt/common.hpp"

namespace mixt {

// splitmix64 generator. Chosen over std::mt19937 + std distributions because
// the standard leaves distribution algorithms implementation-defined; this
// keeps every sampled byte identical across platforms and toolchains. State
// is a single u64, which makes checkpoint resume trivial.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Unbiased integer in [0, n) by rejection.
    uint64_t next_below(uint64_t n) {
        require(n > 0, "Rng::next_below: n must be positive");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    int next_int(int lo, int hi) {  // inclusive bounds
        require(lo <= hi, "Rng::next_int: empty range");
        return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi - lo) + 1));
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // Box-Muller without spare caching so the draw sequence is a pure
    // function of the state.
    double next_normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(6.283185307179586 * u2);
    }

    bool next_bool() { return (next_u64() & 1) != 0; }

    uint64_t state() const { return state_; }

private:
    uint64_t state_;
};

// Folds an arbitrary tag and counters into a fresh seed. All randomness in
// training and evaluation is derived this way from (run seed, purpose,
// counters), so resuming at step k replays the exact stream without
// serializing generator state.
inline uint64_t derive_seed(uint64_t seed, std::string_view tag,
                            uint64_t a = 0, uint64_t b = 0) {
    uint64_t h = fnv1a64(tag, seed ^ 0x9e3779b97f4a7c15ull);
    h = fnv1a64(&a, sizeof a, h);
    h = fnv1a64(&b, sizeof b, h);
    // one splitmix scramble so short tags still diffuse
    Rng r(h);
    return r.next_u64();
}

inline Rng derived_rng(uint64_t seed, std::string_view tag,
                       uint64_t a = 0, uint64_t b = 0) {
    return Rng(derive_seed(seed, tag, a, b));
}

}  // namespace mixt
