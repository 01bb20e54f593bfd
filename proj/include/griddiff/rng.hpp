#pragma once
// Deterministic, platform-independent RNG. All randomness in the project goes
// through this so that datasets, training runs and decodes are reproducible
// bit-for-bit from a seed.

#include <cstdint>
#include <cmath>
#include <vector>

namespace griddiff {

// splitmix64: tiny, well-mixed, and trivially portable.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform double in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform integer in [0, n)
    uint64_t below(uint64_t n) {
        // modulo bias is negligible for the small n used here, but rejection
        // sampling keeps the draw exact
        uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) {
                return r % n;
            }
        }
    }

    // standard normal, Box-Muller (no cached spare: one value per two draws,
    // keeps the stream position predictable)
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 == 0.0) {
            u1 = uniform();
        }
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    uint64_t state_;
};

// Stable seed derivation for per-instance streams: instance i of a run seeded
// with s draws from Rng(derive_seed(s, i)).
inline uint64_t derive_seed(uint64_t seed, uint64_t index) {
    uint64_t z = seed ^ (0x9e3779b97f4a7c15ULL * (index + 1));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b) {
    return derive_seed(derive_seed(seed, a), b);
}

// FNV-1a over bytes; used for vocabulary/dataset fingerprints.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace griddiff
