#pragma once

#include <cmath>
#include <cstdint>

namespace ficd {

// Counter-based pseudo-random generator: the SplitMix64 finalizer applied to
// seed + golden-ratio-weighted draw counter. Every draw is a pure function of
// (seed, counter), so generator state serializes as two integers and streams
// can be split without sharing state.
class Rng {
public:
    explicit Rng(uint64_t seed, uint64_t counter = 0) : seed_(seed), counter_(counter) {}

    uint64_t seed() const { return seed_; }
    uint64_t counter() const { return counter_; }

    uint64_t next_u64() {
        uint64_t z = seed_ + (++counter_) * 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // uniform on [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform on (0, 1]
    double uniform_pos() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

    // integer in [lo, hi] inclusive
    int64_t uniform_int(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(uniform() * static_cast<double>(hi - lo + 1));
    }

    // Standard normal via Box-Muller. Always consumes exactly two draws and
    // discards the second variate so that (seed, counter) fully determine
    // every future value (no cached state).
    double normal() {
        const double u1 = uniform_pos();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Independent substream identified by an integer salt.
    Rng derive(uint64_t salt) const {
        uint64_t z = seed_ ^ (0xD1B54A32D192ED03ULL + salt * 0x2545F4914F6CDD1DULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return Rng(z ^ (z >> 31));
    }

private:
    uint64_t seed_;
    uint64_t counter_;
};

}  // namespace ficd
