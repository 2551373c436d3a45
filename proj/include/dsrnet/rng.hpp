#pragma once

#include <cstdint>
#include <random>

#include "dsrnet/tensor.hpp"

namespace dsrnet {

// Stateless seed derivation (splitmix64 round over base ^ tag).
inline uint64_t derive_seed(uint64_t base, uint64_t tag) {
    uint64_t z = base ^ (tag + 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Seeded RNG with a platform-independent uniform double mapping.
// std::mt19937_64 output is fully specified by the standard; we avoid
// std::uniform_real_distribution because its rounding is implementation
// defined.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    int64_t below(int64_t n) { return static_cast<int64_t>(eng_() % static_cast<uint64_t>(n)); }

    // Derive an independent stream; splitmix64 on (state-seed ^ tag).
    Rng fork(uint64_t tag) {
        uint64_t z = eng_() ^ (tag + 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return Rng(z ^ (z >> 31));
    }

    Tensor uniform_tensor(std::vector<int64_t> shape, double lo, double hi) {
        Tensor t(std::move(shape));
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(lo, hi);
        return t;
    }

    template <typename It>
    void shuffle(It first, It last) {
        auto n = last - first;
        for (auto i = n - 1; i > 0; --i) {
            auto j = below(static_cast<int64_t>(i) + 1);
            std::swap(first[i], first[j]);
        }
    }

private:
    std::mt19937_64 eng_;
};

} // namespace dsrnet
