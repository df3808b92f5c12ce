// Copyright (c) 2026 The Polytune Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "polytune/error.hpp"

namespace polytune {

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeFailure("cannot open file: " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw RuntimeFailure("read error on file: " + path.string());
    return text;
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot open for writing: " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) throw RuntimeFailure("write failed: " + path.string());
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    auto parsed = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded())
        throw ValidationError("not valid JSON: " + path.string());
    return parsed;
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
    write_text_file(path, j.dump() + "\n");
}

// Line-delimited JSON. One row per line, minified.
inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeFailure("cannot open file: " + path.string());
    std::vector<nlohmann::json> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto row = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
        if (row.is_discarded())
            throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                                  ": not valid JSON");
        rows.push_back(std::move(row));
    }
    if (in.bad()) throw RuntimeFailure("read error on file: " + path.string());
    return rows;
}

inline void write_jsonl(const std::filesystem::path& path,
                        const std::vector<nlohmann::json>& rows) {
    std::string text;
    for (const auto& row : rows) {
        text += row.dump();
        text += '\n';
    }
    write_text_file(path, text);
}

}  // namespace polytune
