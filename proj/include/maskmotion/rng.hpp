#pragma once

// Counter-based random numbers (Philox4x32-10). Every draw is a pure function
// of (seed, stream, counter), so any sampled tensor can be replayed from its
// NoiseRecord without replaying the draws that came before it.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

namespace maskmotion {

namespace detail {

inline std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t kMul0 = 0xD2511F53u, kMul1 = 0xCD9E8D57u;
    constexpr std::uint32_t kWeyl0 = 0x9E3779B9u, kWeyl1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
        const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
        const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
        const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kWeyl0;
        key[1] += kWeyl1;
    }
    return ctr;
}

}  // namespace detail

/// FNV-1a, used to turn stream names into ids and for content hashes.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 1469598103934665603ull) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

struct NoiseRecord {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
};

/// Derives a stream id from a name and up to two indices.
inline std::uint64_t stream_id(std::string_view name, std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = fnv1a64(name);
    h = (h ^ a) * 1099511628211ull;
    h = (h ^ (b + 0x9E3779B97F4A7C15ull)) * 1099511628211ull;
    return h;
}

class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

    NoiseRecord record() const { return {seed_, stream_}; }
    std::uint64_t counter() const { return counter_; }
    void set_counter(std::uint64_t c) { counter_ = c; }

    /// Raw 128 bits for block `index` of this stream.
    std::array<std::uint32_t, 4> block(std::uint64_t index) const {
        return detail::philox4x32_10(
            {static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), static_cast<std::uint32_t>(stream_),
             static_cast<std::uint32_t>(stream_ >> 32)},
            {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)});
    }

    std::uint64_t next_u64() {
        auto b = block(counter_++);
        return (std::uint64_t{b[0]} << 32) | b[1];
    }

    /// Uniform in [0, 1) with 53 random bits.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, bound) without modulo bias.
    std::uint64_t next_below(std::uint64_t bound) {
        if (bound == 0) return 0;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % bound;
    }

    /// Uniform integer in [lo, hi].
    std::int64_t next_int(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(next_below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    /// `count` standard normals. Element i depends only on (seed, stream, i),
    /// not on the rng's running counter.
    template <class T = float>
    std::vector<T> normal(std::size_t count) const {
        std::vector<T> out(count);
        for (std::size_t pair = 0; 2 * pair < count; ++pair) {
            auto b = block(pair);
            const std::uint64_t w0 = (std::uint64_t{b[0]} << 32) | b[1];
            const std::uint64_t w1 = (std::uint64_t{b[2]} << 32) | b[3];
            const double u1 = (static_cast<double>(w0 >> 11) + 0.5) * 0x1.0p-53;
            const double u2 = static_cast<double>(w1 >> 11) * 0x1.0p-53;
            const double radius = std::sqrt(-2.0 * std::log(u1));
            const double angle = 2.0 * std::numbers::pi * u2;
            out[2 * pair] = static_cast<T>(radius * std::cos(angle));
            if (2 * pair + 1 < count) out[2 * pair + 1] = static_cast<T>(radius * std::sin(angle));
        }
        return out;
    }

    template <class It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const auto j = next_below(i);
            std::swap(first[static_cast<std::ptrdiff_t>(i - 1)], first[static_cast<std::ptrdiff_t>(j)]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
};

}  // namespace maskmotion
