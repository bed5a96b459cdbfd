#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace shufflebench {

/// splitmix64 finalizer; bijective on 64-bit values.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Small seedable generator with reproducible output on every platform.
/// All randomness in the project flows through this type; std distributions
/// are avoided because their algorithms are implementation-defined.
class SplitMix64 {
  public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform integer in [0, bound). Exact (Lemire multiply with rejection).
    std::uint64_t next_below(std::uint64_t bound) {
        if (bound < 2)
            return 0;
        unsigned __int128 m = static_cast<unsigned __int128>(next()) * bound;
        auto low = static_cast<std::uint64_t>(m);
        if (low < bound) {
            const std::uint64_t threshold = (0 - bound) % bound;
            while (low < threshold) {
                m = static_cast<unsigned __int128>(next()) * bound;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Standard normal via the polar method.
    double next_gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * next_unit() - 1.0;
            v = 2.0 * next_unit() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double k = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * k;
        has_spare_ = true;
        return u * k;
    }

  private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Purpose tags keep independently-seeded streams from colliding when they
/// share a user seed.
enum class RngStream : std::uint64_t {
    Plan = 1,      // per-epoch batch plans
    Split = 2,     // one-time BMF split
    Generate = 3,  // synthetic dataset generation
    Queue = 4,     // bounded shuffle queue draws
};

/// Derives an independent generator for (seed, stream, index), e.g. one per
/// training epoch. Same inputs always give the same stream.
inline SplitMix64 stream_for(std::uint64_t seed, RngStream stream, std::uint64_t index = 0) {
    const std::uint64_t tag = static_cast<std::uint64_t>(stream);
    return SplitMix64(mix64(seed) ^ mix64((tag << 56) ^ index));
}

/// In-place Fisher-Yates shuffle.
template <typename T>
void fisher_yates_shuffle(std::span<T> items, SplitMix64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.next_below(i));
        std::swap(items[i - 1], items[j]);
    }
}

/// Uniform permutation of {0..n-1}.
inline std::vector<std::uint32_t> fisher_yates(std::uint32_t n, SplitMix64& rng) {
    std::vector<std::uint32_t> perm(n);
    for (std::uint32_t i = 0; i < n; ++i)
        perm[i] = i;
    fisher_yates_shuffle(std::span<std::uint32_t>(perm), rng);
    return perm;
}

} // namespace shufflebench
