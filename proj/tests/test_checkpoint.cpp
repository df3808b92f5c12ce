// Copyright (c) 2026 The Polytune Authors
// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "polytune/checkpoint.hpp"
#include "test_util.hpp"

using namespace polytune;
using testutil::TempDir;

namespace {

Checkpoint small_checkpoint() {
    Checkpoint c;
    c.set("w", tensor_from_f32(DType::f32, {2, 2}, std::vector<float>{1, 2, 3, 4}));
    c.set("b", tensor_from_f32(DType::f16, {3}, std::vector<float>{0.5f, -1.0f, 2.0f}));
    c.provenance["stage"] = "test";
    return c;
}

}  // namespace

TEST_CASE("write then read is the identity", "[checkpoint]") {
    TempDir dir("ckpt_rt");
    const Checkpoint c = small_checkpoint();
    write_checkpoint(c, dir / "a.ckpt");
    CHECK(read_checkpoint(dir / "a.ckpt") == c);
}

TEST_CASE("round-trip preserves NaN payloads in 16-bit dtypes", "[checkpoint]") {
    TempDir dir("ckpt_nan");
    Checkpoint c;
    Tensor f16t;
    f16t.dtype = DType::f16;
    f16t.shape = {4};
    f16t.data = {0x01, 0x7E, 0xFF, 0x7F, 0x00, 0x7C, 0x01, 0xFC};  // NaNs and infs
    c.set("h", f16t);
    Tensor bf16t;
    bf16t.dtype = DType::bf16;
    bf16t.shape = {2};
    bf16t.data = {0x81, 0x7F, 0xC0, 0xFF};  // bf16 NaNs
    c.set("g", bf16t);
    Tensor f32t;
    f32t.dtype = DType::f32;
    f32t.shape = {1};
    f32t.data = {0x01, 0x00, 0xC0, 0x7F};  // f32 NaN with payload
    c.set("f", f32t);
    write_checkpoint(c, dir / "nan.ckpt");
    CHECK(read_checkpoint(dir / "nan.ckpt") == c);
}

TEST_CASE("writing is canonical", "[checkpoint]") {
    TempDir dir("ckpt_canon");
    const Checkpoint c = small_checkpoint();
    write_checkpoint(c, dir / "one.ckpt");
    write_checkpoint(c, dir / "two.ckpt");
    CHECK(testutil::read_bytes(dir / "one.ckpt") == testutil::read_bytes(dir / "two.ckpt"));

    // Insertion order does not matter.
    Checkpoint reordered;
    reordered.provenance = c.provenance;
    reordered.set("b", c.at("b"));
    reordered.set("w", c.at("w"));
    write_checkpoint(reordered, dir / "three.ckpt");
    CHECK(testutil::read_bytes(dir / "one.ckpt") == testutil::read_bytes(dir / "three.ckpt"));
}

TEST_CASE("tensors are stored in ascending name order", "[checkpoint]") {
    TempDir dir("ckpt_order");
    Checkpoint c;
    c.set("b", tensor_from_f32(DType::f32, {1}, std::vector<float>{1}));
    c.set("a", tensor_from_f32(DType::f32, {1}, std::vector<float>{2}));
    write_checkpoint(c, dir / "ab.ckpt");
    const std::string bytes = testutil::read_bytes(dir / "ab.ckpt");
    const std::string header = bytes.substr(8);
    CHECK(header.find("\"a\"") < header.find("\"b\""));
    // "a" owns the first payload range.
    CHECK(header.find("\"a\":{\"dtype\":\"F32\",\"offsets\":[0,4]") != std::string::npos);
}

TEST_CASE("empty checkpoint round-trips", "[checkpoint]") {
    TempDir dir("ckpt_empty");
    Checkpoint c;
    write_checkpoint(c, dir / "empty.ckpt");
    const Checkpoint back = read_checkpoint(dir / "empty.ckpt");
    CHECK(back.tensors.empty());
    CHECK(back == c);
}

TEST_CASE("zero-sized tensors are legal", "[checkpoint]") {
    TempDir dir("ckpt_zero");
    Checkpoint c;
    c.set("z", tensor_from_f32(DType::f32, {0, 5}, {}));
    c.set("w", tensor_from_f32(DType::f32, {2}, std::vector<float>{1, 2}));
    write_checkpoint(c, dir / "zero.ckpt");
    const Checkpoint back = read_checkpoint(dir / "zero.ckpt");
    CHECK(back == c);
    CHECK(back.at("z").elements() == 0);
}

TEST_CASE("independently written file parses to expected metadata", "[checkpoint]") {
    TempDir dir("ckpt_raw");
    // Built byte-by-byte without write_checkpoint.
    const std::string header = R"({"w":{"dtype":"F32","shape":[2,2],"offsets":[0,16]}})";
    const std::string payload = testutil::f32_bytes({1.5f, -2.0f, 0.0f, 4.0f});
    REQUIRE(payload.size() == 16);
    testutil::write_bytes(dir / "raw.ckpt", testutil::raw_checkpoint_bytes(header, payload));

    const Checkpoint c = read_checkpoint(dir / "raw.ckpt");
    REQUIRE(c.tensors.size() == 1);
    const Tensor& w = c.at("w");
    CHECK(w.dtype == DType::f32);
    CHECK(w.shape == std::vector<std::uint64_t>{2, 2});
    CHECK(w.elements() == 4);
    CHECK(tensor_to_f32(w) == std::vector<float>{1.5f, -2.0f, 0.0f, 4.0f});
}

TEST_CASE("malformed files are rejected with located errors", "[checkpoint]") {
    TempDir dir("ckpt_bad");
    auto expect_reject = [&](const std::string& name, const std::string& bytes,
                             const std::string& needle) {
        testutil::write_bytes(dir / name, bytes);
        REQUIRE_THROWS_MATCHES(read_checkpoint(dir / name), ValidationError,
                               Catch::Matchers::MessageMatches(
                                   Catch::Matchers::ContainsSubstring(needle)));
    };

    SECTION("file shorter than the length field") {
        expect_reject("tiny.ckpt", "abc", "malformed header length");
    }
    SECTION("declared header length overruns the file") {
        std::string bytes = testutil::raw_checkpoint_bytes("{}", "");
        bytes[0] = 100;  // claims a 100-byte header in a 10-byte file
        expect_reject("overrun.ckpt", bytes, "header overruns file");
    }
    SECTION("header is not JSON") {
        expect_reject("notjson.ckpt", testutil::raw_checkpoint_bytes("{oops", ""),
                      "not valid JSON");
    }
    SECTION("unknown dtype tag") {
        expect_reject("dtype.ckpt",
                      testutil::raw_checkpoint_bytes(
                          R"({"w":{"dtype":"Q4","shape":[1],"offsets":[0,4]}})", "xxxx"),
                      "unknown dtype tag \"Q4\"");
    }
    SECTION("duplicate tensor names") {
        expect_reject("dup.ckpt",
                      testutil::raw_checkpoint_bytes(
                          R"({"w":{"dtype":"F32","shape":[1],"offsets":[0,4]},)"
                          R"("w":{"dtype":"F32","shape":[1],"offsets":[0,4]}})",
                          "xxxx"),
                      "duplicate tensor name");
    }
    SECTION("overlapping byte ranges") {
        expect_reject("overlap.ckpt",
                      testutil::raw_checkpoint_bytes(
                          R"({"a":{"dtype":"F32","shape":[1],"offsets":[0,4]},)"
                          R"("b":{"dtype":"F32","shape":[1],"offsets":[2,6]}})",
                          "xxxxxx"),
                      "overlapping byte ranges");
    }
    SECTION("truncated payload") {
        expect_reject("trunc.ckpt",
                      testutil::raw_checkpoint_bytes(
                          R"({"w":{"dtype":"F32","shape":[2,2],"offsets":[0,16]}})", "xxxx"),
                      "truncated payload");
    }
    SECTION("range length does not match shape") {
        expect_reject("len.ckpt",
                      testutil::raw_checkpoint_bytes(
                          R"({"w":{"dtype":"F32","shape":[2,2],"offsets":[0,12]}})",
                          std::string(12, 'x')),
                      "does not match shape");
    }
    SECTION("negative shape entry") {
        expect_reject("negshape.ckpt",
                      testutil::raw_checkpoint_bytes(
                          R"({"w":{"dtype":"F32","shape":[-1],"offsets":[0,4]}})", "xxxx"),
                      "non-negative");
    }
    SECTION("gap between ranges") {
        expect_reject("gap.ckpt",
                      testutil::raw_checkpoint_bytes(
                          R"({"a":{"dtype":"F32","shape":[1],"offsets":[0,4]},)"
                          R"("b":{"dtype":"F32","shape":[1],"offsets":[8,12]}})",
                          std::string(12, 'x')),
                      "gap in payload");
    }
    SECTION("trailing payload bytes") {
        expect_reject("trail.ckpt",
                      testutil::raw_checkpoint_bytes(
                          R"({"w":{"dtype":"F32","shape":[1],"offsets":[0,4]}})",
                          std::string(8, 'x')),
                      "trailing payload");
    }
    SECTION("errors carry a byte offset") {
        testutil::write_bytes(dir / "off.ckpt",
                              testutil::raw_checkpoint_bytes(
                                  R"({"w":{"dtype":"F32","shape":[2,2],"offsets":[0,16]}})",
                                  "xxxx"));
        REQUIRE_THROWS_MATCHES(read_checkpoint(dir / "off.ckpt"), ValidationError,
                               Catch::Matchers::MessageMatches(
                                   Catch::Matchers::ContainsSubstring("byte")));
    }
}

TEST_CASE("random checkpoints survive write-read bit-exactly", "[checkpoint]") {
    TempDir dir("ckpt_prop");
    std::mt19937_64 rng(7);
    for (int i = 0; i < 40; ++i) {
        const Checkpoint c = testutil::random_checkpoint(rng);
        const auto path = dir / ("p" + std::to_string(i) + ".ckpt");
        write_checkpoint(c, path);
        REQUIRE(read_checkpoint(path) == c);
    }
}

TEST_CASE("validate_compatible accepts identical structure", "[checkpoint]") {
    const Checkpoint c = small_checkpoint();
    CHECK_NOTHROW(validate_compatible(c, c));
}

TEST_CASE("validate_compatible reports first mismatch", "[checkpoint]") {
    Checkpoint c1, c2;
    c1.set("w", tensor_from_f32(DType::f32, {2, 2}, std::vector<float>(4, 0.f)));
    c2.set("w", tensor_from_f32(DType::f32, {2, 3}, std::vector<float>(6, 0.f)));
    REQUIRE_THROWS_MATCHES(validate_compatible(c1, c2), ValidationError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("\"w\"") &&
                               Catch::Matchers::ContainsSubstring("shape")));

    Checkpoint c3 = c1;
    c3.set("bias", tensor_from_f32(DType::f32, {1}, std::vector<float>{0.f}));
    // c3 has an extra tensor; it is missing from checkpoint index 1.
    REQUIRE_THROWS_MATCHES(validate_compatible(c3, c1), ValidationError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("missing in checkpoint 1: bias")));

    Checkpoint c4 = c1;
    c4.set("w", tensor_from_f32(DType::f16, {2, 2}, std::vector<float>(4, 0.f)));
    REQUIRE_THROWS_MATCHES(validate_compatible(c1, c4), ValidationError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("dtype")));
}

TEST_CASE("reserved and invalid tensor names are rejected", "[checkpoint]") {
    Checkpoint c;
    CHECK_THROWS_AS(c.set("", tensor_from_f32(DType::f32, {1}, std::vector<float>{0.f})),
                    ValidationError);
    CHECK_THROWS_AS(c.set("__meta__", tensor_from_f32(DType::f32, {1}, std::vector<float>{0.f})),
                    ValidationError);
}

TEST_CASE("writing to an unwritable path is a runtime failure", "[checkpoint]") {
    CHECK_THROWS_AS(write_checkpoint(small_checkpoint(), "/nonexistent-dir/x/y.ckpt"),
                    RuntimeFailure);
}
