#pragma once

#include <cstdint>
#include <random>

namespace specenc {

/// SplitMix64 finalizer. Used to derive independent stream seeds from a
/// (seed, index) pair.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

/// Portable random source.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The standard distributions are not portable across library
/// implementations, so every variate is derived here from raw 64-bit words.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform double in (0, 1].
    double uniform_open_closed() { return 1.0 - uniform(); }

    /// Uniform integer in [lo, hi], rejection sampled to avoid modulo bias.
    std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
        const std::uint64_t span = hi - lo;
        if (span == ~std::uint64_t{0}) return next_u64();
        const std::uint64_t range = span + 1;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % range);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return lo + x % range;
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Fisher-Yates shuffle.
    template <typename Container>
    void shuffle(Container& c) {
        const auto n = static_cast<std::uint64_t>(c.size());
        if (n < 2) return;
        for (std::uint64_t i = n - 1; i > 0; --i) {
            const auto j = uniform_int(0, i);
            using std::swap;
            swap(c[i], c[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace specenc
