#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace gatefusion {

// Deterministic counter-free PRNG (splitmix64 core). All randomness in the
// project flows through this type so results are reproducible across
// platforms and standard-library versions.
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

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive integer range.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
    }

    // Box-Muller; one value per call keeps the stream position predictable.
    double gaussian() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

private:
    uint64_t state_;
};

// FNV-1a over a label, folded with the parent seed. Named substreams let
// independent pipeline stages draw from one master seed without coupling.
inline uint64_t substream_seed(uint64_t master, std::string_view label) {
    uint64_t h = 1469598103934665603ULL ^ master;
    for (char c : label) {
        h ^= static_cast<uint8_t>(c);
        h *= 1099511628211ULL;
    }
    h ^= master * 0x9e3779b97f4a7c15ULL;
    return h;
}

inline uint64_t substream_seed(uint64_t master, std::string_view label, uint64_t index) {
    uint64_t h = substream_seed(master, label);
    h ^= (index + 0x9e3779b97f4a7c15ULL) * 0xbf58476d1ce4e5b9ULL;
    return h;
}

}  // namespace gatefusion
