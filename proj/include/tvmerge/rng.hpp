#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace tvmerge {

inline constexpr std::uint64_t kGolden64 = 0x9E3779B97F4A7C15ull;

// Stafford mix13 finalizer (the splitmix64 output function). Bijective, so
// mix64(key + i * kGolden64) is a counter-based stream: any element can be
// generated independently of the others.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    return h;
}

// Top 24 bits mapped to [0, 1).
constexpr float u01_from_bits(std::uint64_t bits) noexcept {
    return static_cast<float>(bits >> 40) * 0x1.0p-24f;
}

// Stream key for per-tensor counter-based draws.
constexpr std::uint64_t stream_key(std::uint64_t seed, std::string_view name) noexcept {
    return mix64(mix64(seed) ^ fnv1a64(name));
}

constexpr float counter_u01(std::uint64_t key, std::uint64_t index) noexcept {
    return u01_from_bits(mix64(key + index * kGolden64));
}

// Sequential splitmix64 for shuffles and synthetic fixtures.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        state_ += kGolden64;
        return mix64(state_);
    }

    // Unbiased draw from [0, n) by rejection.
    std::uint64_t bounded(std::uint64_t n) {
        const std::uint64_t limit = n * ((~std::uint64_t{0}) / n);
        std::uint64_t x;
        do {
            x = next();
        } while (x >= limit);
        return x % n;
    }

    double next_double() {  // [0, 1)
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    // Box-Muller; u1 shifted into (0, 1] so the log never sees zero.
    double next_gaussian() {
        const double u1 = (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

private:
    std::uint64_t state_;
};

}  // namespace tvmerge
