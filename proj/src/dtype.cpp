#include "tvmerge/dtype.hpp"

#include <bit>

namespace tvmerge {

Dtype dtype_from_string(std::string_view s) {
    if (s == "F32") return Dtype::F32;
    if (s == "F16") return Dtype::F16;
    if (s == "BF16") return Dtype::BF16;
    if (s == "I64") return Dtype::I64;
    return Dtype::Other;
}

std::size_t dtype_width(std::string_view s) {
    if (s == "F64" || s == "I64" || s == "U64") return 8;
    if (s == "F32" || s == "I32" || s == "U32") return 4;
    if (s == "F16" || s == "BF16" || s == "I16" || s == "U16") return 2;
    if (s == "I8" || s == "U8" || s == "BOOL") return 1;
    return 0;
}

std::uint32_t f16_bits_to_f32_bits(std::uint16_t h) noexcept {
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
    std::uint32_t exp = (h >> 10) & 0x1Fu;
    std::uint32_t man = h & 0x3FFu;
    if (exp == 0) {
        if (man == 0) return sign;  // signed zero
        // subnormal: renormalize; value is man * 2^-24
        int shift = 0;
        while (!(man & 0x400u)) {
            man <<= 1;
            ++shift;
        }
        man &= 0x3FFu;
        return sign | (static_cast<std::uint32_t>(113 - shift) << 23) | (man << 13);
    }
    if (exp == 31) return sign | 0x7F800000u | (man << 13);  // inf / nan
    return sign | ((exp + 112) << 23) | (man << 13);
}

std::uint16_t f32_bits_to_f16_bits(std::uint32_t f) noexcept {
    const std::uint32_t sign = (f >> 16) & 0x8000u;
    const std::uint32_t exp = (f >> 23) & 0xFFu;
    const std::uint32_t man = f & 0x7FFFFFu;
    if (exp == 0xFF) {
        // inf / nan: shift payload down, keep the NaN a NaN
        std::uint32_t payload = man >> 13;
        if (man != 0 && payload == 0) payload = 1;
        return static_cast<std::uint16_t>(sign | 0x7C00u | payload);
    }
    const int e = static_cast<int>(exp) - 127;
    if (e >= 16) return static_cast<std::uint16_t>(sign | 0x7C00u);  // overflow
    if (e >= -14) {
        // normal target; round half to even, letting the carry walk into the
        // exponent (so values just under 2^16 round up to inf correctly)
        std::uint32_t half = sign | (static_cast<std::uint32_t>(e + 15) << 10) | (man >> 13);
        const std::uint32_t rest = man & 0x1FFFu;
        if (rest > 0x1000u || (rest == 0x1000u && (half & 1u))) half += 1;
        return static_cast<std::uint16_t>(half);
    }
    if (e < -25) return static_cast<std::uint16_t>(sign);  // underflow to zero
    // subnormal target: align the 24-bit significand to the 2^-24 grid
    const std::uint32_t sig = man | 0x800000u;
    const int shift = -e - 1;  // in [14, 24]
    const std::uint32_t bias = (1u << (shift - 1)) - 1 + ((sig >> shift) & 1u);
    const std::uint32_t t = (sig + bias) >> shift;
    return static_cast<std::uint16_t>(sign | t);
}

std::uint16_t f32_bits_to_bf16_bits(std::uint32_t f) noexcept {
    if (((f >> 23) & 0xFFu) == 0xFFu) {
        // inf / nan: truncate, but never let a NaN payload collapse to inf
        std::uint16_t b = static_cast<std::uint16_t>(f >> 16);
        if ((f & 0x7FFFFFu) != 0 && (b & 0x7Fu) == 0) b |= 1;
        return b;
    }
    const std::uint32_t lsb = (f >> 16) & 1u;
    return static_cast<std::uint16_t>((f + 0x7FFFu + lsb) >> 16);
}

float f16_to_f32(std::uint16_t h) noexcept {
    return std::bit_cast<float>(f16_bits_to_f32_bits(h));
}

std::uint16_t f32_to_f16(float x) noexcept {
    return f32_bits_to_f16_bits(std::bit_cast<std::uint32_t>(x));
}

float bf16_to_f32(std::uint16_t b) noexcept {
    return std::bit_cast<float>(bf16_bits_to_f32_bits(b));
}

std::uint16_t f32_to_bf16(float x) noexcept {
    return f32_bits_to_bf16_bits(std::bit_cast<std::uint32_t>(x));
}

}  // namespace tvmerge
