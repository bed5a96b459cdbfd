#include "doctest.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "shufflebench/rng.hpp"

using namespace shufflebench;

namespace {

// Lehmer rank of a permutation of {0..n-1}.
std::size_t permutation_rank(const std::vector<std::uint32_t>& p) {
    std::size_t rank = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        std::size_t smaller_later = 0;
        for (std::size_t j = i + 1; j < p.size(); ++j)
            if (p[j] < p[i])
                ++smaller_later;
        std::size_t weight = 1;
        for (std::size_t k = 2; k < p.size() - i; ++k)
            weight *= k;
        rank += smaller_later * weight;
    }
    return rank;
}

} // namespace

TEST_SUITE("rng") {

TEST_CASE("fisher_yates degenerate sizes") {
    SplitMix64 rng(1);
    CHECK(fisher_yates(0, rng).empty());
    CHECK(fisher_yates(1, rng) == std::vector<std::uint32_t>{0});
}

TEST_CASE("fisher_yates output is a permutation") {
    SplitMix64 rng(7);
    auto p = fisher_yates(5, rng);
    std::sort(p.begin(), p.end());
    CHECK(p == std::vector<std::uint32_t>{0, 1, 2, 3, 4});
}

TEST_CASE("fisher_yates is uniform over all 120 permutations of 5") {
    // Chi-square over permutation ranks; 99% quantile for df=119 is 157.8.
    constexpr int kTrials = 100000;
    std::array<int, 120> counts{};
    SplitMix64 rng(20240817);
    for (int t = 0; t < kTrials; ++t) {
        const auto p = fisher_yates(5, rng);
        ++counts[permutation_rank(p)];
    }
    const double expected = static_cast<double>(kTrials) / 120.0;
    double chi2 = 0;
    for (int c : counts) {
        const double d = c - expected;
        chi2 += d * d / expected;
    }
    CHECK(chi2 < 157.8);
}

TEST_CASE("generators are deterministic and streams are independent") {
    SplitMix64 a = stream_for(42, RngStream::Plan, 3);
    SplitMix64 b = stream_for(42, RngStream::Plan, 3);
    CHECK(a.next() == b.next());
    CHECK(a.next() == b.next());

    SplitMix64 c = stream_for(42, RngStream::Plan, 4);
    SplitMix64 d = stream_for(42, RngStream::Split, 3);
    SplitMix64 e = stream_for(42, RngStream::Plan, 3);
    bool differs_c = false, differs_d = false;
    for (int i = 0; i < 4; ++i) {
        const auto base = e.next();
        differs_c |= c.next() != base;
        differs_d |= d.next() != base;
    }
    CHECK(differs_c);
    CHECK(differs_d);
}

TEST_CASE("next_below stays in range and covers it") {
    SplitMix64 rng(5);
    for (std::uint64_t bound : {1ull, 2ull, 3ull, 7ull, 100ull}) {
        std::vector<bool> seen(bound, false);
        for (int i = 0; i < 5000; ++i) {
            const auto v = rng.next_below(bound);
            REQUIRE(v < bound);
            seen[v] = true;
        }
        CHECK(std::all_of(seen.begin(), seen.end(), [](bool s) { return s; }));
    }
}

TEST_CASE("gaussian draws have sane moments") {
    SplitMix64 rng(11);
    double sum = 0, sum_sq = 0;
    constexpr int kDraws = 200000;
    for (int i = 0; i < kDraws; ++i) {
        const double g = rng.next_gaussian();
        sum += g;
        sum_sq += g * g;
    }
    const double mean = sum / kDraws;
    const double var = sum_sq / kDraws - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
}

} // TEST_SUITE
