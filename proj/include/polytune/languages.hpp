// Copyright (c) 2026 The Polytune Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "polytune/error.hpp"

namespace polytune {

// The 23 supported languages, as ISO 639-1 codes. "zh" covers both
// simplified and traditional Chinese.
inline constexpr std::array<std::string_view, 23> kSupportedLanguages = {
    "ar", "cs", "de", "el", "en", "es", "fa", "fr", "he", "hi", "id", "it",
    "ja", "ko", "nl", "pl", "pt", "ro", "ru", "tr", "uk", "vi", "zh"};

inline bool is_supported_language(std::string_view code) {
    return std::find(kSupportedLanguages.begin(), kSupportedLanguages.end(), code) !=
           kSupportedLanguages.end();
}

// Language clusters for per-cluster training and merging. Every cluster must
// contain every shared language (default: English, Spanish, French).
struct ClusterConfig {
    struct Cluster {
        std::string name;
        std::vector<std::string> languages;
    };
    std::vector<Cluster> clusters;
    std::vector<std::string> shared_languages = {"en", "es", "fr"};
};

inline void validate_clusters(const ClusterConfig& cfg) {
    for (const auto& lang : cfg.shared_languages)
        if (!is_supported_language(lang))
            throw ValidationError("shared language \"" + lang + "\" is not supported");
    std::set<std::string> names;
    for (const auto& cluster : cfg.clusters) {
        if (cluster.name.empty()) throw ValidationError("cluster with empty name");
        if (!names.insert(cluster.name).second)
            throw ValidationError("duplicate cluster name \"" + cluster.name + "\"");
        for (const auto& lang : cluster.languages)
            if (!is_supported_language(lang))
                throw ValidationError("cluster \"" + cluster.name +
                                      "\" contains unsupported language \"" + lang + "\"");
        for (const auto& shared : cfg.shared_languages) {
            if (std::find(cluster.languages.begin(), cluster.languages.end(), shared) ==
                cluster.languages.end())
                throw ValidationError("cluster \"" + cluster.name +
                                      "\" is missing shared language \"" + shared + "\"");
        }
    }
}

}  // namespace polytune
