#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "maskmotion/rng.hpp"

using namespace maskmotion;

// Published Philox4x32-10 known-answer vectors.
TEST(Philox, KnownAnswerVectors) {
    using A4 = std::array<std::uint32_t, 4>;
    EXPECT_EQ(detail::philox4x32_10({0, 0, 0, 0}, {0, 0}), (A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
    EXPECT_EQ(detail::philox4x32_10({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}),
              (A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
    EXPECT_EQ(detail::philox4x32_10({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
              (A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(CounterRng, NormalsArePureFunctionsOfIndex) {
    CounterRng a(42, 7);
    auto full = a.normal<double>(101);
    auto prefix = a.normal<double>(10);
    for (std::size_t i = 0; i < prefix.size(); ++i) EXPECT_EQ(full[i], prefix[i]);
    a.next_u64();
    EXPECT_EQ(a.normal<double>(101), full);
    EXPECT_NE(CounterRng(42, 8).normal<double>(4), CounterRng(42, 7).normal<double>(4));
    EXPECT_NE(CounterRng(43, 7).normal<double>(4), CounterRng(42, 7).normal<double>(4));
}

TEST(CounterRng, NormalMomentsAreStandard) {
    auto v = CounterRng(1, 2).normal<double>(200000);
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double var = 0;
    for (double x : v) var += (x - m) * (x - m);
    var /= static_cast<double>(v.size());
    EXPECT_NEAR(m, 0.0, 0.01);
    EXPECT_NEAR(var, 1.0, 0.02);
}

TEST(CounterRng, BoundedDrawsStayInRangeAndCoverIt) {
    CounterRng r(5, 6);
    std::set<std::int64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        const auto v = r.next_int(-3, 3);
        ASSERT_GE(v, -3);
        ASSERT_LE(v, 3);
        seen.insert(v);
        const double u = r.next_unit();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
    EXPECT_EQ(seen.size(), 7u);
}

TEST(CounterRng, ShuffleIsSeededPermutation) {
    std::vector<int> a(20), b(20);
    std::iota(a.begin(), a.end(), 0);
    std::iota(b.begin(), b.end(), 0);
    CounterRng(3, 4).shuffle(a.begin(), a.end());
    CounterRng(3, 4).shuffle(b.begin(), b.end());
    EXPECT_EQ(a, b);
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> id(20);
    std::iota(id.begin(), id.end(), 0);
    EXPECT_EQ(sorted, id);
    EXPECT_NE(a, id);
}

TEST(StreamIds, DistinctInputsGiveDistinctStreams) {
    std::set<std::uint64_t> ids;
    for (std::uint64_t a = 0; a < 20; ++a)
        for (std::uint64_t b = 0; b < 20; ++b) ids.insert(stream_id("x", a, b));
    EXPECT_EQ(ids.size(), 400u);
    EXPECT_NE(stream_id("x"), stream_id("y"));
}
