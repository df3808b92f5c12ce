// Copyright (c) 2026 The Polytune Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>

namespace polytune {

// splitmix64 finalizer (Steele, Lea, Flood). Used as a stateless mixing
// function so that every derived random value is a pure function of its
// inputs, independent of evaluation order and thread count.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Per-element draw for stochastic masks: a pure function of
// (seed, tensor name, flat index).
inline std::uint64_t element_hash(std::uint64_t seed, std::string_view name,
                                  std::uint64_t index) {
    return splitmix64(splitmix64(seed ^ fnv1a64(name)) ^ index);
}

// Maps a 64-bit hash to [0, 1) with 53 uniform bits.
inline double uniform01(std::uint64_t h) {
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Fans a global seed out to per-stage / per-task seeds by stable derivation.
inline std::uint64_t derive_seed(std::uint64_t global, std::string_view label,
                                 std::uint64_t index) {
    return splitmix64(splitmix64(global ^ fnv1a64(label)) ^ index);
}

}  // namespace polytune
