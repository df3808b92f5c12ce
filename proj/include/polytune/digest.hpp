// Copyright (c) 2026 The Polytune Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#include "polytune/error.hpp"

namespace polytune {

// Incremental SHA-256 over OpenSSL's EVP interface.
class Sha256 {
  public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
            throw RuntimeFailure("sha256: failed to initialise digest context");
    }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;
    ~Sha256() { EVP_MD_CTX_free(ctx_); }

    void update(std::string_view bytes) {
        if (EVP_DigestUpdate(ctx_, bytes.data(), bytes.size()) != 1)
            throw RuntimeFailure("sha256: digest update failed");
    }

    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> out{};
        unsigned int n = 0;
        if (EVP_DigestFinal_ex(ctx_, out.data(), &n) != 1)
            throw RuntimeFailure("sha256: digest finalisation failed");
        static constexpr char digits[] = "0123456789abcdef";
        std::string hex;
        hex.reserve(2 * n);
        for (unsigned int i = 0; i < n; ++i) {
            hex.push_back(digits[out[i] >> 4]);
            hex.push_back(digits[out[i] & 0xF]);
        }
        return hex;
    }

  private:
    EVP_MD_CTX* ctx_;
};

inline std::string sha256_hex(std::string_view bytes) {
    Sha256 d;
    d.update(bytes);
    return d.hex();
}

inline std::string sha256_file_hex(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeFailure("sha256: cannot open file: " + path.string());
    Sha256 d;
    std::array<char, 1 << 16> buf;
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        const auto got = in.gcount();
        if (got > 0) d.update(std::string_view(buf.data(), static_cast<std::size_t>(got)));
    }
    if (in.bad()) throw RuntimeFailure("sha256: read error on file: " + path.string());
    return d.hex();
}

}  // namespace polytune
