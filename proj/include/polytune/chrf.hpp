// Copyright (c) 2026 The Polytune Authors
// SPDX-License-Identifier: Apache-2.0
//
// chrF++ sentence score: the mean, over character n-gram orders
// 1..char_order and word n-gram orders 1..word_order, of the F_beta score of
// clipped n-gram matches, scaled to [0, 100]. Character n-grams are taken
// over the text with whitespace removed; word n-grams over whitespace
// tokens. Orders where neither side has any n-grams do not enter the mean.

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "polytune/error.hpp"

namespace polytune {
namespace detail {

// Decodes UTF-8 to code points; each invalid byte maps to one symbol in a
// private range so malformed input still has well-defined n-grams.
inline std::vector<char32_t> decode_utf8(std::string_view s) {
    std::vector<char32_t> out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        const auto b0 = static_cast<unsigned char>(s[i]);
        std::size_t len;
        char32_t cp;
        if (b0 < 0x80) {
            len = 1;
            cp = b0;
        } else if ((b0 & 0xE0) == 0xC0) {
            len = 2;
            cp = b0 & 0x1Fu;
        } else if ((b0 & 0xF0) == 0xE0) {
            len = 3;
            cp = b0 & 0x0Fu;
        } else if ((b0 & 0xF8) == 0xF0) {
            len = 4;
            cp = b0 & 0x07u;
        } else {
            out.push_back(0xDC00 + b0);
            ++i;
            continue;
        }
        if (i + len > s.size()) {
            out.push_back(0xDC00 + b0);
            ++i;
            continue;
        }
        bool ok = true;
        for (std::size_t k = 1; k < len; ++k) {
            const auto bk = static_cast<unsigned char>(s[i + k]);
            if ((bk & 0xC0) != 0x80) {
                ok = false;
                break;
            }
            cp = (cp << 6) | (bk & 0x3Fu);
        }
        if (!ok) {
            out.push_back(0xDC00 + b0);
            ++i;
            continue;
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

inline bool is_space_cp(char32_t c) {
    return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\v' || c == U'\f';
}

struct NgramStats {
    std::uint64_t matches = 0;  // clipped
    std::uint64_t hyp_total = 0;
    std::uint64_t ref_total = 0;
};

// Clipped n-gram match statistics over symbol sequences (symbols are code
// points for character n-grams and word ids for word n-grams).
inline NgramStats ngram_stats(const std::vector<char32_t>& hyp,
                              const std::vector<char32_t>& ref, std::size_t n) {
    NgramStats st;
    std::map<std::u32string, std::uint64_t> ref_counts;
    if (ref.size() >= n)
        for (std::size_t i = 0; i + n <= ref.size(); ++i)
            ++ref_counts[std::u32string(ref.begin() + i, ref.begin() + i + n)];
    for (const auto& [g, c] : ref_counts) st.ref_total += c;

    std::map<std::u32string, std::uint64_t> hyp_counts;
    if (hyp.size() >= n)
        for (std::size_t i = 0; i + n <= hyp.size(); ++i)
            ++hyp_counts[std::u32string(hyp.begin() + i, hyp.begin() + i + n)];
    for (const auto& [g, c] : hyp_counts) {
        st.hyp_total += c;
        const auto it = ref_counts.find(g);
        if (it != ref_counts.end()) st.matches += std::min(c, it->second);
    }
    return st;
}

// F_beta of one order from integer counts, computed as
// (beta^2*m + m) / (beta^2*r + h); equal hyp/ref/match counts give exactly 1.
inline double fbeta_from_counts(const NgramStats& st, double beta_sq) {
    if (st.matches == 0) return 0.0;
    const double m = static_cast<double>(st.matches);
    const double num = beta_sq * m + m;
    const double den = beta_sq * static_cast<double>(st.ref_total) +
                       static_cast<double>(st.hyp_total);
    return num / den;
}

// Replaces each word with a single synthetic symbol so word n-grams reuse
// the code-point n-gram counter. 0x110000+ is outside the decoder's range.
inline std::vector<char32_t> words_as_symbols(const std::vector<char32_t>& text,
                                              std::map<std::u32string, char32_t>& ids) {
    std::vector<char32_t> out;
    std::u32string word;
    auto flush = [&] {
        if (word.empty()) return;
        auto [it, inserted] = ids.emplace(word, static_cast<char32_t>(0x110000 + ids.size()));
        out.push_back(it->second);
        word.clear();
    };
    for (char32_t c : text) {
        if (is_space_cp(c))
            flush();
        else
            word.push_back(c);
    }
    flush();
    return out;
}

}  // namespace detail

inline double chrf_pp(std::string_view hypothesis, std::string_view reference,
                      int char_order = 6, int word_order = 2, double beta = 2.0) {
    if (reference.empty()) throw ValidationError("chrf: reference must be non-empty");
    if (char_order < 1) throw ValidationError("chrf: char_order must be >= 1");
    if (word_order < 0) throw ValidationError("chrf: word_order must be >= 0");
    if (!(beta > 0.0) || !std::isfinite(beta))
        throw ValidationError("chrf: beta must be positive and finite");

    const auto hyp_cp = detail::decode_utf8(hypothesis);
    const auto ref_cp = detail::decode_utf8(reference);

    std::vector<char32_t> hyp_chars, ref_chars;
    for (char32_t c : hyp_cp)
        if (!detail::is_space_cp(c)) hyp_chars.push_back(c);
    for (char32_t c : ref_cp)
        if (!detail::is_space_cp(c)) ref_chars.push_back(c);

    std::map<std::u32string, char32_t> word_ids;
    const auto hyp_words = detail::words_as_symbols(hyp_cp, word_ids);
    const auto ref_words = detail::words_as_symbols(ref_cp, word_ids);

    const double beta_sq = beta * beta;
    double f_sum = 0.0;
    int active = 0;
    for (int n = 1; n <= char_order; ++n) {
        const auto st = detail::ngram_stats(hyp_chars, ref_chars, static_cast<std::size_t>(n));
        if (st.hyp_total == 0 && st.ref_total == 0) continue;
        f_sum += detail::fbeta_from_counts(st, beta_sq);
        ++active;
    }
    for (int n = 1; n <= word_order; ++n) {
        const auto st = detail::ngram_stats(hyp_words, ref_words, static_cast<std::size_t>(n));
        if (st.hyp_total == 0 && st.ref_total == 0) continue;
        f_sum += detail::fbeta_from_counts(st, beta_sq);
        ++active;
    }
    if (active == 0) return 0.0;  // e.g. whitespace-only reference
    return 100.0 * (f_sum / static_cast<double>(active));
}

}  // namespace polytune
