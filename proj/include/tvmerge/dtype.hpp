#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace tvmerge {

// Storage dtypes. Arithmetic runs in F32: F16/BF16 are widened on read and
// narrowed with round-to-nearest-even on write. I64 and everything unknown
// are carried as raw bytes and never take part in arithmetic.
enum class Dtype { F32, F16, BF16, I64, Other };

Dtype dtype_from_string(std::string_view s);

// Byte width of the known container dtype strings, 0 if unrecognized.
std::size_t dtype_width(std::string_view s);

inline bool dtype_is_arithmetic(Dtype d) {
    return d == Dtype::F32 || d == Dtype::F16 || d == Dtype::BF16;
}

// Bit-level half/bfloat conversions. Inf and NaN payloads pass through
// without being quieted, so widen-then-narrow reproduces the original bits
// for every 16-bit pattern.
std::uint32_t f16_bits_to_f32_bits(std::uint16_t h) noexcept;
std::uint16_t f32_bits_to_f16_bits(std::uint32_t f) noexcept;

inline std::uint32_t bf16_bits_to_f32_bits(std::uint16_t b) noexcept {
    return static_cast<std::uint32_t>(b) << 16;
}
std::uint16_t f32_bits_to_bf16_bits(std::uint32_t f) noexcept;

float f16_to_f32(std::uint16_t h) noexcept;
std::uint16_t f32_to_f16(float x) noexcept;
float bf16_to_f32(std::uint16_t b) noexcept;
std::uint16_t f32_to_bf16(float x) noexcept;

}  // namespace tvmerge
