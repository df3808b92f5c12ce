// Copyright (c) 2026 The Polytune Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint files hold named dense tensors:
//
//   bytes 0..7   unsigned 64-bit little-endian header length H
//   bytes 8..8+H minified JSON: { name: {"dtype": "F32"|"F16"|"BF16",
//                "shape": [...], "offsets": [begin, end]}, ...,
//                "__meta__": {string: string} }   ("__meta__" optional)
//   payload      tensor data, little-endian, row-major; offsets are
//                relative to the payload start (byte 8+H)
//
// Written files are canonical: tensors serialized in ascending name order,
// offsets contiguous from 0, header minified. Two equal Checkpoint values
// always produce byte-identical files.

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "polytune/dtype.hpp"
#include "polytune/error.hpp"

namespace polytune {

inline constexpr std::string_view kCheckpointMetaKey = "__meta__";

inline std::uint64_t element_count(std::span<const std::uint64_t> shape) {
    std::uint64_t n = 1;
    for (std::uint64_t d : shape) {
        if (d != 0 && n > UINT64_MAX / d)
            throw ValidationError("tensor shape overflows 64-bit element count");
        n *= d;
    }
    return n;
}

struct Tensor {
    DType dtype = DType::f32;
    std::vector<std::uint64_t> shape;
    std::vector<std::uint8_t> data;  // raw little-endian bytes

    std::uint64_t elements() const { return element_count(shape); }
    std::uint64_t nbytes() const { return elements() * dtype_width(dtype); }

    bool operator==(const Tensor&) const = default;
};

// Decodes tensor data to float32 regardless of storage dtype.
inline std::vector<float> tensor_to_f32(const Tensor& t) {
    const std::uint64_t n = t.elements();
    std::vector<float> out(n);
    switch (t.dtype) {
        case DType::f32:
            std::memcpy(out.data(), t.data.data(), n * 4);
            break;
        case DType::f16:
            for (std::uint64_t i = 0; i < n; ++i) {
                std::uint16_t h;
                std::memcpy(&h, t.data.data() + 2 * i, 2);
                out[i] = f16_to_f32(h);
            }
            break;
        case DType::bf16:
            for (std::uint64_t i = 0; i < n; ++i) {
                std::uint16_t h;
                std::memcpy(&h, t.data.data() + 2 * i, 2);
                out[i] = bf16_to_f32(h);
            }
            break;
    }
    return out;
}

// Encodes float32 values into a tensor of the given storage dtype
// (round-to-nearest-even for the 16-bit formats).
inline Tensor tensor_from_f32(DType dtype, std::vector<std::uint64_t> shape,
                              std::span<const float> values) {
    Tensor t;
    t.dtype = dtype;
    t.shape = std::move(shape);
    const std::uint64_t n = t.elements();
    if (values.size() != n)
        throw ValidationError("tensor_from_f32: value count does not match shape");
    t.data.resize(n * dtype_width(dtype));
    switch (dtype) {
        case DType::f32:
            std::memcpy(t.data.data(), values.data(), n * 4);
            break;
        case DType::f16:
            for (std::uint64_t i = 0; i < n; ++i) {
                const std::uint16_t h = f32_to_f16(values[i]);
                std::memcpy(t.data.data() + 2 * i, &h, 2);
            }
            break;
        case DType::bf16:
            for (std::uint64_t i = 0; i < n; ++i) {
                const std::uint16_t h = bf16_from_f32(values[i]);
                std::memcpy(t.data.data() + 2 * i, &h, 2);
            }
            break;
    }
    return t;
}

struct Checkpoint {
    std::map<std::string, Tensor> tensors;           // name-sorted by map order
    std::map<std::string, std::string> provenance;   // serialized as "__meta__"

    void set(std::string name, Tensor t) {
        if (name.empty()) throw ValidationError("tensor name must be non-empty");
        if (name == kCheckpointMetaKey)
            throw ValidationError("tensor name \"__meta__\" is reserved");
        if (t.data.size() != t.nbytes())
            throw ValidationError("tensor \"" + name + "\": data length " +
                                  std::to_string(t.data.size()) +
                                  " does not match shape x dtype size " +
                                  std::to_string(t.nbytes()));
        tensors[std::move(name)] = std::move(t);
    }

    const Tensor& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end())
            throw ValidationError("no tensor named \"" + name + "\" in checkpoint");
        return it->second;
    }

    bool operator==(const Checkpoint&) const = default;
};

namespace detail {

inline void put_u64_le(std::uint64_t v, std::uint8_t out[8]) {
    for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

inline std::uint64_t get_u64_le(const std::uint8_t in[8]) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[i]) << (8 * i);
    return v;
}

}  // namespace detail

inline void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    nlohmann::json header = nlohmann::json::object();
    std::uint64_t cursor = 0;
    for (const auto& [name, t] : ckpt.tensors) {  // std::map: ascending name order
        if (name.empty()) throw ValidationError("tensor name must be non-empty");
        if (name == kCheckpointMetaKey)
            throw ValidationError("tensor name \"__meta__\" is reserved");
        if (t.data.size() != t.nbytes())
            throw ValidationError("tensor \"" + name + "\": data length does not match shape");
        const std::uint64_t begin = cursor;
        cursor += t.data.size();
        header[name] = {{"dtype", dtype_tag(t.dtype)},
                        {"shape", t.shape},
                        {"offsets", {begin, cursor}}};
    }
    if (!ckpt.provenance.empty()) header[std::string(kCheckpointMetaKey)] = ckpt.provenance;

    const std::string header_text = header.dump();  // minified; keys already sorted

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot open for writing: " + path.string());
    std::uint8_t len_le[8];
    detail::put_u64_le(header_text.size(), len_le);
    out.write(reinterpret_cast<const char*>(len_le), 8);
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [name, t] : ckpt.tensors)
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size()));
    out.flush();
    if (!out) throw RuntimeFailure("write failed: " + path.string());
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeFailure("cannot open checkpoint: " + path.string());
    in.seekg(0, std::ios::end);
    const std::uint64_t file_size = static_cast<std::uint64_t>(in.tellg());
    in.seekg(0);

    if (file_size < 8)
        throw ValidationError("malformed header length: file is " +
                              std::to_string(file_size) + " bytes, need 8 (at byte 0)");
    std::uint8_t len_le[8];
    in.read(reinterpret_cast<char*>(len_le), 8);
    const std::uint64_t header_len = detail::get_u64_le(len_le);
    if (header_len > file_size - 8)
        throw ValidationError("header overruns file: header length " +
                              std::to_string(header_len) + " + 8 exceeds file size " +
                              std::to_string(file_size) + " (at byte 8)");

    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw RuntimeFailure("read failed: " + path.string());

    // Parse with a callback so duplicate tensor names are detected; the DOM
    // would silently keep only the last occurrence.
    std::set<std::string> seen;
    std::string duplicate;
    auto dup_cb = [&](int depth, nlohmann::json::parse_event_t event,
                      nlohmann::json& parsed) {
        if (depth == 1 && event == nlohmann::json::parse_event_t::key) {
            const auto key = parsed.get<std::string>();
            if (!seen.insert(key).second && duplicate.empty()) duplicate = key;
        }
        return true;
    };
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_text, dup_cb);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("header not valid JSON (at byte " +
                              std::to_string(8 + (e.byte > 0 ? e.byte - 1 : 0)) +
                              "): " + e.what());
    }
    if (!duplicate.empty())
        throw ValidationError("duplicate tensor name \"" + duplicate +
                              "\" in header (at byte 8)");
    if (!header.is_object())
        throw ValidationError("header must be a JSON object (at byte 8)");

    const std::uint64_t payload_base = 8 + header_len;
    const std::uint64_t payload_size = file_size - payload_base;

    Checkpoint ckpt;
    struct Entry {
        std::string name;
        DType dtype;
        std::vector<std::uint64_t> shape;
        std::uint64_t begin, end;
    };
    std::vector<Entry> entries;  // header object iterates in name-sorted order

    for (const auto& [name, item] : header.items()) {
        if (name == kCheckpointMetaKey) {
            if (!item.is_object())
                throw ValidationError("\"__meta__\" must be an object of strings (at byte 8)");
            for (const auto& [k, v] : item.items()) {
                if (!v.is_string())
                    throw ValidationError("\"__meta__\" value for \"" + k +
                                          "\" is not a string (at byte 8)");
                ckpt.provenance[k] = v.get<std::string>();
            }
            continue;
        }
        if (name.empty())
            throw ValidationError("empty tensor name in header (at byte 8)");
        if (!item.is_object() || !item.contains("dtype") || !item.contains("shape") ||
            !item.contains("offsets"))
            throw ValidationError("tensor \"" + name +
                                  "\": entry needs dtype/shape/offsets (at byte 8)");
        if (!item["dtype"].is_string())
            throw ValidationError("tensor \"" + name + "\": dtype must be a string (at byte 8)");
        const auto tag = item["dtype"].get<std::string>();
        const auto dtype = parse_dtype_tag(tag);
        if (!dtype)
            throw ValidationError("unknown dtype tag \"" + tag + "\" for tensor \"" + name +
                                  "\" (header at byte 8)");
        if (!item["shape"].is_array())
            throw ValidationError("tensor \"" + name + "\": shape must be an array (at byte 8)");
        std::vector<std::uint64_t> shape;
        for (const auto& d : item["shape"]) {
            if (!d.is_number_integer() || d.get<std::int64_t>() < 0)
                throw ValidationError("tensor \"" + name +
                                      "\": shape entries must be non-negative integers (at byte 8)");
            shape.push_back(d.get<std::uint64_t>());
        }
        const auto& off = item["offsets"];
        if (!off.is_array() || off.size() != 2 || !off[0].is_number_integer() ||
            !off[1].is_number_integer() || off[0].get<std::int64_t>() < 0 ||
            off[1].get<std::int64_t>() < 0)
            throw ValidationError("tensor \"" + name +
                                  "\": offsets must be [begin, end] non-negative integers (at byte 8)");
        const auto begin = off[0].get<std::uint64_t>();
        const auto end = off[1].get<std::uint64_t>();
        if (begin > end)
            throw ValidationError("tensor \"" + name + "\": offsets begin > end (at byte 8)");
        if (end > payload_size)
            throw ValidationError("truncated payload: tensor \"" + name + "\" ends at payload byte " +
                                  std::to_string(end) + " but payload has " +
                                  std::to_string(payload_size) + " bytes (file byte " +
                                  std::to_string(payload_base + end) + ")");
        const std::uint64_t expect = element_count(shape) * dtype_width(*dtype);
        if (end - begin != expect)
            throw ValidationError("tensor \"" + name + "\": byte range length " +
                                  std::to_string(end - begin) + " does not match shape x dtype size " +
                                  std::to_string(expect) + " (file byte " +
                                  std::to_string(payload_base + begin) + ")");
        entries.push_back({name, *dtype, std::move(shape), begin, end});
    }

    // Ranges must tile the payload exactly, in name-sorted order.
    std::uint64_t cursor = 0;
    for (const auto& e : entries) {
        if (e.begin < cursor)
            throw ValidationError("overlapping byte ranges at tensor \"" + e.name +
                                  "\" (payload byte " + std::to_string(e.begin) + ", file byte " +
                                  std::to_string(payload_base + e.begin) + ")");
        if (e.begin > cursor)
            throw ValidationError("gap in payload before tensor \"" + e.name +
                                  "\" (payload byte " + std::to_string(cursor) + ", file byte " +
                                  std::to_string(payload_base + cursor) + ")");
        cursor = e.end;
    }
    if (cursor != payload_size)
        throw ValidationError("trailing payload bytes after last tensor (at byte " +
                              std::to_string(payload_base + cursor) + ")");

    std::vector<std::uint8_t> payload(payload_size);
    in.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload_size));
    if (!in && payload_size > 0) throw RuntimeFailure("read failed: " + path.string());

    for (auto& e : entries) {
        Tensor t;
        t.dtype = e.dtype;
        t.shape = std::move(e.shape);
        t.data.assign(payload.begin() + static_cast<std::ptrdiff_t>(e.begin),
                      payload.begin() + static_cast<std::ptrdiff_t>(e.end));
        ckpt.set(e.name, std::move(t));
    }
    return ckpt;
}

// Succeeds iff all checkpoints have identical tensor name sets, shapes and
// dtypes. Reports the first mismatching tensor (name-sorted) and attribute.
inline void validate_compatible(std::span<const Checkpoint* const> ckpts) {
    if (ckpts.empty()) throw ValidationError("validate_compatible: empty checkpoint list");
    std::set<std::string> all_names;
    for (const auto* c : ckpts)
        for (const auto& [name, t] : c->tensors) all_names.insert(name);
    for (const auto& name : all_names) {
        for (std::size_t i = 0; i < ckpts.size(); ++i) {
            if (!ckpts[i]->tensors.contains(name))
                throw ValidationError("missing in checkpoint " + std::to_string(i) + ": " + name);
        }
        const Tensor& ref = ckpts[0]->tensors.at(name);
        for (std::size_t i = 1; i < ckpts.size(); ++i) {
            const Tensor& t = ckpts[i]->tensors.at(name);
            if (t.dtype != ref.dtype)
                throw ValidationError("tensor \"" + name + "\": dtype mismatch between checkpoint 0 (" +
                                      std::string(dtype_tag(ref.dtype)) + ") and checkpoint " +
                                      std::to_string(i) + " (" + std::string(dtype_tag(t.dtype)) + ")");
            if (t.shape != ref.shape)
                throw ValidationError("tensor \"" + name + "\": shape mismatch between checkpoint 0 and checkpoint " +
                                      std::to_string(i));
        }
    }
}

inline void validate_compatible(std::span<const Checkpoint> ckpts) {
    std::vector<const Checkpoint*> ptrs;
    ptrs.reserve(ckpts.size());
    for (const auto& c : ckpts) ptrs.push_back(&c);
    validate_compatible(std::span<const Checkpoint* const>(ptrs));
}

inline void validate_compatible(const Checkpoint& a, const Checkpoint& b) {
    const Checkpoint* ptrs[2] = {&a, &b};
    validate_compatible(std::span<const Checkpoint* const>(ptrs, 2));
}

}  // namespace polytune
