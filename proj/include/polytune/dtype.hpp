// Copyright (c) 2026 The Polytune Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string_view>

namespace polytune {

enum class DType { f32, f16, bf16 };

constexpr std::size_t dtype_width(DType d) {
    switch (d) {
        case DType::f32: return 4;
        case DType::f16: return 2;
        case DType::bf16: return 2;
    }
    return 0;
}

constexpr std::string_view dtype_tag(DType d) {
    switch (d) {
        case DType::f32: return "F32";
        case DType::f16: return "F16";
        case DType::bf16: return "BF16";
    }
    return "";
}

constexpr std::optional<DType> parse_dtype_tag(std::string_view tag) {
    if (tag == "F32") return DType::f32;
    if (tag == "F16") return DType::f16;
    if (tag == "BF16") return DType::bf16;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// IEEE 754 binary16 <-> binary32.
//
// Decoding is exact (every half value is representable in float). Encoding
// rounds to nearest, ties to even. decode(encode(x)) == x bitwise for every
// 16-bit pattern, including NaN payloads; the test suite checks all 65536.
// ---------------------------------------------------------------------------

inline float f16_to_f32(std::uint16_t h) {
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
    const std::uint32_t exp = (h >> 10) & 0x1Fu;
    const std::uint32_t man = h & 0x3FFu;
    std::uint32_t bits;
    if (exp == 0) {
        if (man == 0) {
            bits = sign;  // +-0
        } else {
            // subnormal half: value = man * 2^-24, exact in float
            const float v = static_cast<float>(man) * 0x1.0p-24f;
            bits = sign | std::bit_cast<std::uint32_t>(v);
        }
    } else if (exp == 31) {
        bits = sign | 0x7F800000u | (man << 13);  // inf / nan, payload kept
    } else {
        bits = sign | ((exp + 112) << 23) | (man << 13);
    }
    return std::bit_cast<float>(bits);
}

inline std::uint16_t f32_to_f16(float f) {
    const std::uint32_t b = std::bit_cast<std::uint32_t>(f);
    const std::uint16_t sign = static_cast<std::uint16_t>((b >> 16) & 0x8000u);
    const std::uint32_t abs = b & 0x7FFFFFFFu;
    if (abs >= 0x7F800000u) {  // inf or nan
        if (abs == 0x7F800000u) return sign | 0x7C00u;
        std::uint16_t payload = static_cast<std::uint16_t>((abs >> 13) & 0x3FFu);
        if (payload == 0) payload = 0x200u;  // keep it a NaN
        return sign | 0x7C00u | payload;
    }
    if (abs < 0x38800000u) {  // below 2^-14: subnormal half or zero
        // Scale into integer ulps of 2^-24; the product is exact, and
        // nearbyint applies the current (to-nearest-even) rounding.
        const float v = std::bit_cast<float>(abs);
        const auto q = static_cast<std::uint32_t>(std::nearbyintf(v * 0x1.0p24f));
        return sign | static_cast<std::uint16_t>(q);  // q == 1024 promotes to normal
    }
    // Round mantissa from 23 to 10 bits in float32 bit space; a carry out of
    // the mantissa correctly bumps the exponent.
    const std::uint32_t r = abs + 0xFFFu + ((abs >> 13) & 1u);
    if (r >= 0x47800000u) return sign | 0x7C00u;  // overflow -> inf
    return sign | static_cast<std::uint16_t>((r - 0x38000000u) >> 13);
}

// ---------------------------------------------------------------------------
// bfloat16 <-> binary32. bfloat16 is the top half of a float32, so decoding
// is a shift and encoding is round-to-nearest-even in bit space.
// ---------------------------------------------------------------------------

inline float bf16_to_f32(std::uint16_t h) {
    return std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16);
}

inline std::uint16_t bf16_from_f32(float f) {
    const std::uint32_t b = std::bit_cast<std::uint32_t>(f);
    if ((b & 0x7FFFFFFFu) > 0x7F800000u) {  // nan: truncate, keep it a nan
        auto r = static_cast<std::uint16_t>(b >> 16);
        if ((r & 0x7Fu) == 0) r |= 0x40u;
        return r;
    }
    const std::uint32_t r = b + 0x7FFFu + ((b >> 16) & 1u);
    return static_cast<std::uint16_t>(r >> 16);
}

}  // namespace polytune
