// Copyright (c) 2026 The Polytune Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: runs every release criterion at its stated tolerance
// and prints one pass/fail line per criterion. Mock endpoints only; no
// network. Exit code = number of failed criteria.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "polytune/arbitrage.hpp"
#include "polytune/chrf.hpp"
#include "polytune/config.hpp"
#include "polytune/dpo.hpp"
#include "polytune/judge.hpp"
#include "polytune/merge.hpp"
#include "polytune/mock_endpoints.hpp"
#include "polytune/pipeline.hpp"
#include "polytune/prefs.hpp"
#include "test_util.hpp"

using namespace polytune;
using nlohmann::json;

namespace {

struct CheckFailure {
    std::string message;
};

void require(bool condition, const std::string& message) {
    if (!condition) throw CheckFailure{message};
}

int g_failures = 0;

void criterion(int number, const std::string& title, const std::function<void()>& body) {
    try {
        body();
        std::printf("PASS  %2d. %s\n", number, title.c_str());
    } catch (const CheckFailure& f) {
        ++g_failures;
        std::printf("FAIL  %2d. %s\n      -> %s\n", number, title.c_str(), f.message.c_str());
    } catch (const std::exception& e) {
        ++g_failures;
        std::printf("FAIL  %2d. %s\n      -> unexpected exception: %s\n", number, title.c_str(),
                    e.what());
    }
    std::fflush(stdout);
}

RetryPolicy fast_retry() {
    RetryPolicy r;
    r.initial_backoff = std::chrono::milliseconds(1);
    return r;
}

// Random checkpoint with up to ~1 MB of random payload bytes (random bytes
// cover NaN payloads and every other bit pattern).
Checkpoint random_big_checkpoint(std::mt19937_64& rng) {
    Checkpoint c;
    const int n_tensors = 1 + static_cast<int>(rng() % 5);
    for (int t = 0; t < n_tensors; ++t) {
        Tensor tensor;
        const int pick = static_cast<int>(rng() % 3);
        tensor.dtype = pick == 0 ? DType::f32 : pick == 1 ? DType::f16 : DType::bf16;
        const std::uint64_t elems = rng() % 50000;
        tensor.shape = rng() % 2 == 0 ? std::vector<std::uint64_t>{elems}
                                      : std::vector<std::uint64_t>{elems, 1};
        tensor.data.resize(elems * dtype_width(tensor.dtype));
        for (auto& b : tensor.data) b = static_cast<std::uint8_t>(rng());
        c.set("tensor_" + std::to_string(t), std::move(tensor));
    }
    if (rng() % 2 == 0) c.provenance["stage"] = "acceptance";
    return c;
}

// --- criterion bodies ---

void checkpoint_roundtrip_and_rejection() {
    testutil::TempDir dir("acc_ckpt");
    std::mt19937_64 rng(1001);
    for (int i = 0; i < 100; ++i) {
        const Checkpoint c = random_big_checkpoint(rng);
        const auto path = dir / ("rt" + std::to_string(i) + ".ckpt");
        write_checkpoint(c, path);
        require(read_checkpoint(path) == c,
                "round-trip " + std::to_string(i) + " not bit-exact");
    }

    // 20 corrupted variants, cycling through ten defect kinds.
    const std::string tensor_header =
        R"({"a":{"dtype":"F32","shape":[2],"offsets":[0,8]},)"
        R"("b":{"dtype":"F32","shape":[1],"offsets":[8,12]}})";
    int rejected = 0;
    for (int i = 0; i < 20; ++i) {
        std::string bytes;
        switch (i % 10) {
            case 0: bytes = "abc"; break;  // shorter than the length field
            case 1: {                      // header overruns file
                bytes = testutil::raw_checkpoint_bytes("{}", "");
                bytes[0] = 120;
                break;
            }
            case 2: bytes = testutil::raw_checkpoint_bytes("{not json", "xx"); break;
            case 3:
                bytes = testutil::raw_checkpoint_bytes(
                    R"({"w":{"dtype":"Q4","shape":[1],"offsets":[0,4]}})", "xxxx");
                break;
            case 4:
                bytes = testutil::raw_checkpoint_bytes(
                    R"({"w":{"dtype":"F32","shape":[1],"offsets":[0,4]},)"
                    R"("w":{"dtype":"F32","shape":[1],"offsets":[4,8]}})",
                    std::string(8, 'x'));
                break;
            case 5:
                bytes = testutil::raw_checkpoint_bytes(
                    R"({"a":{"dtype":"F32","shape":[1],"offsets":[0,4]},)"
                    R"("b":{"dtype":"F32","shape":[1],"offsets":[2,6]}})",
                    std::string(6, 'x'));
                break;
            case 6:  // truncated payload
                bytes = testutil::raw_checkpoint_bytes(tensor_header, std::string(6, 'x'));
                break;
            case 7:  // gap between ranges
                bytes = testutil::raw_checkpoint_bytes(
                    R"({"a":{"dtype":"F32","shape":[1],"offsets":[0,4]},)"
                    R"("b":{"dtype":"F32","shape":[1],"offsets":[8,12]}})",
                    std::string(12, 'x'));
                break;
            case 8:  // trailing payload bytes
                bytes = testutil::raw_checkpoint_bytes(
                    R"({"a":{"dtype":"F32","shape":[1],"offsets":[0,4]}})",
                    std::string(9, 'x'));
                break;
            case 9:  // range length vs shape mismatch
                bytes = testutil::raw_checkpoint_bytes(
                    R"({"a":{"dtype":"F16","shape":[3],"offsets":[0,4]}})",
                    std::string(4, 'x'));
                break;
        }
        const auto path = dir / ("bad" + std::to_string(i) + ".ckpt");
        testutil::write_bytes(path, bytes);
        try {
            read_checkpoint(path);
            throw CheckFailure{"corrupt variant " + std::to_string(i) + " was accepted"};
        } catch (const ValidationError& e) {
            require(std::string(e.what()).find("byte") != std::string::npos,
                    "error for variant " + std::to_string(i) +
                        " lacks a byte offset: " + e.what());
            ++rejected;
        }
    }
    require(rejected == 20, "expected 20 rejections");
}

void merge_oracles() {
    std::mt19937_64 rng(1002);
    for (int round = 0; round < 50; ++round) {
        const Checkpoint base = testutil::random_checkpoint(rng);

        // linear: exact match with the reference (fixed reduction order)
        std::vector<Checkpoint> inputs{base};
        const int extra = 1 + static_cast<int>(rng() % 3);
        for (int i = 0; i < extra; ++i) inputs.push_back(testutil::random_like(base, rng));
        std::vector<double> weights;
        for (std::size_t i = 0; i < inputs.size(); ++i)
            weights.push_back(0.05 + 3.0 * uniform01(rng()));
        require(linear_merge(inputs, weights).tensors ==
                    oracle::linear_ref(inputs, weights).tensors,
                "linear merge differs from reference");

        // slerp: within 1e-6 absolute of the reference
        const Checkpoint b2 = testutil::random_like(base, rng);
        const double t = uniform01(rng());
        const auto slerp_got = slerp_merge(base, b2, t);
        const auto slerp_want = oracle::slerp_ref(base, b2, t);
        for (const auto& [name, tensor] : slerp_got.tensors) {
            const auto got = tensor_to_f32(tensor);
            const auto want = tensor_to_f32(slerp_want.at(name));
            for (std::size_t j = 0; j < got.size(); ++j)
                require(std::fabs(static_cast<double>(got[j]) - want[j]) <= 1e-6,
                        "slerp differs from reference by more than 1e-6");
        }

        // ties and dare-ties: exact
        std::vector<Checkpoint> models;
        const int n_models = 1 + static_cast<int>(rng() % 3);
        for (int i = 0; i < n_models; ++i) models.push_back(testutil::random_like(base, rng));
        const double density = 0.05 + 0.95 * uniform01(rng());
        const double lambda = 0.25 + 1.5 * uniform01(rng());
        require(ties_merge(base, models, density, lambda).tensors ==
                    oracle::ties_ref(base, models, density, lambda).tensors,
                "ties merge differs from reference");
        const double drop_p = 0.8 * uniform01(rng());
        const std::uint64_t seed = rng();
        require(dare_ties_merge(base, models, drop_p, density, 1.0, seed).tensors ==
                    oracle::ties_ref(base, models, density, 1.0, drop_p, seed).tensors,
                "dare-ties merge differs from reference");
    }
}

void merge_identities() {
    std::mt19937_64 rng(1003);

    // linear single-input identity
    const Checkpoint single = testutil::random_checkpoint(rng);
    require(linear_merge(std::vector<Checkpoint>{single}, std::vector<double>{7.0}).tensors ==
                single.tensors,
            "linear single-input identity violated");

    // slerp endpoints exact
    const Checkpoint a = testutil::random_checkpoint(rng);
    const Checkpoint b = testutil::random_like(a, rng);
    require(slerp_merge(a, b, 0.0).tensors == a.tensors, "slerp t=0 is not a");
    require(slerp_merge(a, b, 1.0).tensors == b.tensors, "slerp t=1 is not b");

    // ties identity: float32 re-association costs at most the last ulp
    const Checkpoint model = testutil::random_like(a, rng);
    const auto ties_out = ties_merge(a, std::vector<Checkpoint>{model}, 1.0, 1.0);
    for (const auto& [name, tensor] : ties_out.tensors) {
        const auto got = tensor_to_f32(tensor);
        const auto want = tensor_to_f32(model.at(name));
        for (std::size_t j = 0; j < got.size(); ++j)
            require(std::fabs(static_cast<double>(got[j]) - want[j]) <= 1e-6,
                    "ties(density=1, lambda=1, single model) does not reproduce the model");
    }

    // dare p=0 identity (exact)
    const auto tv = task_vector(a, model);
    require(dare_sparsify(tv, 0.0, 123).deltas == tv.deltas, "dare p=0 is not the identity");
    require(dare_ties_merge(a, std::vector<Checkpoint>{model}, 0.0, 0.6, 1.2, 5).tensors ==
                ties_merge(a, std::vector<Checkpoint>{model}, 0.6, 1.2).tensors,
            "dare-ties p=0 differs from ties");

    // Monte-Carlo unbiasedness over 10,000 seeds
    const std::size_t n = 8;
    std::vector<float> vb(n), vm(n);
    for (auto& v : vb) v = static_cast<float>(uniform01(rng()) * 2 - 1);
    for (auto& v : vm) v = static_cast<float>(uniform01(rng()) * 2 - 1);
    Checkpoint cb, cm;
    cb.set("w", tensor_from_f32(DType::f32, {n}, vb));
    cm.set("w", tensor_from_f32(DType::f32, {n}, vm));
    const auto expected =
        tensor_to_f32(ties_merge(cb, std::vector<Checkpoint>{cm}, 1.0, 1.0).at("w"));
    const int trials = 10000;
    std::vector<double> sum(n, 0.0), sum_sq(n, 0.0);
    for (int s = 0; s < trials; ++s) {
        const auto out = tensor_to_f32(dare_ties_merge(cb, std::vector<Checkpoint>{cm}, 0.5,
                                                       1.0, 1.0, static_cast<std::uint64_t>(s))
                                           .at("w"));
        for (std::size_t j = 0; j < n; ++j) {
            sum[j] += out[j];
            sum_sq[j] += static_cast<double>(out[j]) * out[j];
        }
    }
    for (std::size_t j = 0; j < n; ++j) {
        const double mean = sum[j] / trials;
        const double var = std::max(0.0, sum_sq[j] / trials - mean * mean);
        const double tol = 3.0 * std::sqrt(var) / std::sqrt(static_cast<double>(trials));
        require(std::fabs(mean - expected[j]) <= tol + 1e-12,
                "dare-ties Monte-Carlo mean outside 3 sigma of the p=0 result");
    }
}

void slerp_unit_norm() {
    std::mt19937_64 rng(1004);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int round = 0; round < 100; ++round) {
        std::vector<float> va(24), vb(24);
        double na = 0, nb = 0;
        for (auto& v : va) {
            v = static_cast<float>(normal(rng));
            na += static_cast<double>(v) * v;
        }
        for (auto& v : vb) {
            v = static_cast<float>(normal(rng));
            nb += static_cast<double>(v) * v;
        }
        for (auto& v : va) v = static_cast<float>(v / std::sqrt(na));
        for (auto& v : vb) v = static_cast<float>(v / std::sqrt(nb));
        Checkpoint ca, cb;
        ca.set("w", tensor_from_f32(DType::f32, {va.size()}, va));
        cb.set("w", tensor_from_f32(DType::f32, {vb.size()}, vb));
        for (double t : {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}) {
            const auto out = tensor_to_f32(slerp_merge(ca, cb, t).at("w"));
            double norm = 0.0;
            for (float v : out) norm += static_cast<double>(v) * v;
            require(std::fabs(std::sqrt(norm) - 1.0) <= 1e-5,
                    "slerp of unit vectors is not unit norm at t=" + std::to_string(t));
        }
    }
}

void dpo_exactness() {
    // ln 2 at policy == reference, for each beta.
    for (double beta : {0.01, 0.1, 1.0, 10.0})
        require(std::fabs(dpo_loss(-0.9, -1.7, -0.9, -1.7, beta) - std::numbers::ln2) <= 1e-12,
                "loss at policy==reference is not ln 2 within 1e-12");

    // Worked example: delta = 0.7, beta = 0.1. The closed form
    // -log sigmoid(0.07) evaluates to 0.6587595555486971 (high-precision
    // oracle); the gradients are -/+ 0.1 * sigmoid(-0.07) =
    // 0.04825071423336103, inside the quoted 0.0482510 +- 1e-6 band.
    const double loss = dpo_loss(-1.0, -2.0, -1.2, -1.5, 0.1);
    require(std::fabs(loss - 0.6587595555486971) <= 1e-6,
            "worked-example loss does not match the closed form");
    const auto grad = dpo_grad(-1.0, -2.0, -1.2, -1.5, 0.1);
    require(std::fabs(grad.d_lp_chosen - (-0.0482510)) <= 1e-6,
            "worked-example chosen gradient outside 0.0482510 +- 1e-6");
    require(std::fabs(grad.d_lp_rejected - 0.0482510) <= 1e-6,
            "worked-example rejected gradient outside 0.0482510 +- 1e-6");
    require(std::fabs(grad.d_lp_chosen + 0.04825071423336103) <= 1e-9,
            "worked-example gradient does not match the closed form");

    // Finite differences over 100 random instances.
    std::mt19937_64 rng(1005);
    for (int i = 0; i < 100; ++i) {
        const std::size_t rows = 1 + rng() % 3, cols = 2 + rng() % 3;
        const auto policy = TabularPolicy::random(rows, cols, rng(), 1.5);
        const auto reference = TabularPolicy::random(rows, cols, rng(), 1.5);
        std::vector<IndexedPair> pairs;
        const int n_pairs = 1 + static_cast<int>(rng() % 4);
        for (int k = 0; k < n_pairs; ++k) {
            const std::size_t c = rng() % cols;
            std::size_t r = rng() % cols;
            if (r == c) r = (r + 1) % cols;
            pairs.push_back({rng() % rows, c, r});
        }
        const double beta = 0.05 + 2.0 * uniform01(rng());
        const double err = finite_diff_check(policy, reference, pairs, beta, 1e-5);
        require(err <= 1e-5,
                "finite-difference gradient error " + std::to_string(err) + " above 1e-5");
    }
}

void dpo_training_sanity() {
    const auto policy = TabularPolicy::random(2, 3, 4242);
    const std::vector<IndexedPair> pairs{{0, 0, 2}, {1, 1, 0}};
    DpoConfig cfg;
    cfg.beta = 1.0;
    cfg.learning_rate = 0.01;
    cfg.steps = 200;
    const auto result = train_dpo(policy, pairs, cfg);
    require(result.trace.size() == 200, "trace length mismatch");
    for (std::size_t s = 1; s < result.trace.size(); ++s)
        require(result.trace[s] < result.trace[s - 1],
                "mean loss did not strictly decrease at step " + std::to_string(s));
    const double final_loss = mean_dpo_loss(result.policy, policy, pairs, cfg.beta);
    require(final_loss < result.trace.front(), "final loss not below the initial loss");
    for (const auto& pr : pairs) {
        require(implicit_reward_margin(policy, policy, pr, cfg.beta) == 0.0,
                "initial margin not zero");
        require(implicit_reward_margin(result.policy, policy, pr, cfg.beta) > 0.0,
                "implicit reward margin did not strictly increase");
    }
}

void arbitrage_routing() {
    // Brute-force agreement on 1000 random candidate sets.
    std::mt19937_64 rng(1006);
    for (int round = 0; round < 1000; ++round) {
        const std::size_t n = 1 + rng() % 6;
        std::vector<RewardedCandidate> cands;
        for (std::size_t i = 0; i < n; ++i)
            cands.push_back({"p", "m" + std::to_string(i), i, "c" + std::to_string(i),
                             static_cast<double>(rng() % 4) / 2.0});
        std::shuffle(cands.begin(), cands.end(), rng);
        std::vector<double> rewards;
        std::vector<std::size_t> pool_indices;
        for (const auto& c : cands) {
            rewards.push_back(c.reward);
            pool_indices.push_back(c.pool_index);
        }
        const auto winner = route(cands);
        require(winner.pool_index == cands[oracle::route_ref(rewards, pool_indices)].pool_index,
                "route disagrees with the brute-force argmax");
        for (const auto& c : cands)
            require(winner.reward >= c.reward, "routed reward below a candidate reward");
    }

    // Cardinality ledger on a fault-injected pool.
    testutil::TempDir dir("acc_arb");
    MockServer healthy({.persona = "healthy"});
    MockServer flaky({.persona = "flaky", .fail_generate_if_prompt_contains = "POISON"});
    MockServer down({.persona = "down", .always_fail = true});
    MockServer scorer;
    ArbitrageConfig cfg;
    cfg.pool = {{"healthy", healthy.url(), {}},
                {"flaky", flaky.url(), {}},
                {"down", down.url(), {}}};
    cfg.reward_url = scorer.url();
    cfg.retry = fast_retry();
    std::vector<Prompt> prompts;
    for (int i = 0; i < 6; ++i)
        prompts.push_back({"p" + std::to_string(i), "en",
                           i % 3 == 0 ? "POISON question " + std::to_string(i)
                                      : "question " + std::to_string(i)});
    const auto summary = build_arbitrage_dataset(
        prompts, cfg, {dir / "d.jsonl", dir / "c.jsonl", dir / "s.jsonl"});
    require(summary.dataset_rows + summary.skipped_prompts == prompts.size(),
            "dataset rows + skips != prompts");
    require(read_jsonl(dir / "d.jsonl").size() == summary.dataset_rows, "dataset row mismatch");
    require(read_jsonl(dir / "s.jsonl").size() == summary.skipped_prompts, "skip row mismatch");
}

void preference_pairs() {
    // Strict inequality on random logs; pairs + skips partition the prompts.
    std::mt19937_64 rng(1007);
    std::vector<CandidateRow> log;
    std::set<std::string> ids;
    for (int p = 0; p < 60; ++p) {
        const std::string id = "p" + std::to_string(p);
        ids.insert(id);
        const int n = 1 + static_cast<int>(rng() % 4);
        for (int i = 0; i < n; ++i) {
            CandidateRow row;
            row.prompt_id = id;
            row.language = "en";
            row.text = "t";
            row.model_id = "m" + std::to_string(i);
            row.pool_index = static_cast<std::size_t>(i);
            row.completion = "c" + std::to_string(rng() % 3);
            row.reward = static_cast<double>(rng() % 3);
            log.push_back(std::move(row));
        }
    }
    const auto extraction = offline_pairs(log);
    require(extraction.pairs.size() + extraction.skipped.size() == ids.size(),
            "pairs + skips != prompts");
    for (const auto& pair : extraction.pairs) {
        require(pair.chosen_reward > pair.rejected_reward,
                "pair without strictly greater chosen reward");
        require(pair.chosen != pair.rejected, "pair with identical completions");
    }

    // Named degenerate cases land in the skip log.
    std::vector<CandidateRow> degenerate_log;
    for (int i = 0; i < 2; ++i) {
        CandidateRow row;
        row.prompt_id = "eq";
        row.language = "en";
        row.text = "t";
        row.model_id = "m" + std::to_string(i);
        row.pool_index = static_cast<std::size_t>(i);
        row.completion = "c" + std::to_string(i);
        row.reward = 1.0;
        degenerate_log.push_back(row);
    }
    CandidateRow lonely;
    lonely.prompt_id = "single";
    lonely.language = "en";
    lonely.text = "t";
    lonely.model_id = "m0";
    lonely.pool_index = 0;
    lonely.completion = "c";
    lonely.reward = 2.0;
    degenerate_log.push_back(lonely);
    const auto degenerate = offline_pairs(degenerate_log);
    require(degenerate.pairs.empty(), "degenerate prompts produced pairs");
    require(degenerate.skipped.size() == 2, "expected two skip entries");
    bool saw_equal = false, saw_single = false;
    for (const auto& s : degenerate.skipped) {
        if (s.prompt_id == "eq") saw_equal = s.reason == "equal rewards";
        if (s.prompt_id == "single") saw_single = s.reason == "single candidate";
    }
    require(saw_equal && saw_single, "skip reasons missing");

    // Default iteration budget is 3.
    require(OnlineRoundConfig{}.n_iterations == 3, "default n_iterations is not 3");
}

// Shared toy pipeline fixture for criteria 8 and 12.
struct ToyPipeline {
    testutil::TempDir dir{"acc_pipe"};
    PipelineConfig cfg;

    ToyPipeline() {
        std::vector<json> prompt_rows;
        for (int i = 0; i < 4; ++i)
            prompt_rows.push_back({{"id", "p" + std::to_string(i)},
                                   {"language", i % 2 == 0 ? "en" : "es"},
                                   {"text", "question " + std::to_string(i)}});
        write_jsonl(dir / "prompts.jsonl", prompt_rows);
        std::mt19937_64 rng(2024);
        const Checkpoint base = testutil::random_checkpoint(rng);
        write_checkpoint(base, dir / "base.ckpt");
        write_checkpoint(testutil::random_like(base, rng), dir / "a.ckpt");
        write_checkpoint(testutil::random_like(base, rng), dir / "b.ckpt");

        const json config = {
            {"seed", 99},
            {"max_inflight", 4},
            {"retry", {{"max_attempts", 2}, {"initial_backoff_ms", 1}}},
            {"endpoints",
             {{"generators", json::array({{{"model_id", "m1"}, {"url", "http://x"}},
                                          {{"model_id", "m2"}, {"url", "http://x"}}})},
              {"reward_url", "http://x"},
              {"judge_url", "http://x"}}},
            {"stages",
             json::array(
                 {{{"type", "arbitrage"},
                   {"name", "arb"},
                   {"prompts", (dir / "prompts.jsonl").string()}},
                  {{"type", "merge"},
                   {"name", "sft_merge"},
                   {"recipe",
                    {{"method", "linear"},
                     {"inputs",
                      json::array({(dir / "a.ckpt").string(), (dir / "b.ckpt").string()})}}}},
                  {{"type", "prefs_offline"},
                   {"name", "off"},
                   {"candidates", "arb/candidates.jsonl"}},
                  {{"type", "dpo_train"},
                   {"name", "dpo1"},
                   {"pairs", "off/pairs.jsonl"},
                   {"candidates", "arb/candidates.jsonl"},
                   {"beta", 0.5},
                   {"learning_rate", 0.05},
                   {"steps", 30}},
                  {{"type", "prefs_online"},
                   {"name", "on1"},
                   {"prompts", (dir / "prompts.jsonl").string()},
                   {"policy_model_id", "m1"},
                   {"iteration", 1},
                   {"samples_per_prompt", 3}},
                  {{"type", "eval_winrate"},
                   {"name", "ev"},
                   {"prompts", (dir / "prompts.jsonl").string()},
                   {"completions_a", "arb/dataset.jsonl"},
                   {"completions_b",
                    {{"path", "arb/candidates.jsonl"}, {"model_id", "m2"}}}}})}};
        cfg = parse_pipeline_config(config);
    }

    RunSummary run(const std::string& out, bool resume = false) {
        return run_pipeline(cfg, dir / out, {.resume = resume, .mock_endpoints = true});
    }
};

void pipeline_stage_ordering() {
    ToyPipeline toy;
    const auto summary = toy.run("run");
    std::ptrdiff_t offline_at = -1, online_at = -1;
    for (std::size_t i = 0; i < summary.ledger.entries.size(); ++i) {
        if (summary.ledger.entries[i].stage_type == "prefs_offline")
            offline_at = static_cast<std::ptrdiff_t>(i);
        if (summary.ledger.entries[i].stage_type == "prefs_online" && online_at < 0)
            online_at = static_cast<std::ptrdiff_t>(i);
    }
    require(offline_at >= 0 && online_at >= 0, "pipeline missing preference stages");
    require(offline_at < online_at, "offline stage does not precede online iteration 1");

    // Pairs emitted by the run satisfy the strict-inequality invariant too.
    for (const auto* file : {"off/pairs.jsonl", "on1/pairs.jsonl"})
        for (const auto& row : read_jsonl(toy.dir / "run" / file))
            require(row.at("chosen_reward").get<double>() >
                        row.at("rejected_reward").get<double>(),
                    "pipeline emitted a non-strict pair");

    // Misordered configs are rejected outright.
    json bad = pipeline_config_to_json(toy.cfg);
    json stages = bad["stages"];
    std::swap(stages[2], stages[4]);  // move the online stage before offline
    bad["stages"] = stages;
    try {
        parse_pipeline_config(bad);
        throw CheckFailure{"online-before-offline config was accepted"};
    } catch (const ValidationError&) {
    }
}

void winrate_harness() {
    // Antisymmetry on 100 random verdict sets (equal per-language counts).
    std::mt19937_64 rng(1008);
    for (int round = 0; round < 100; ++round) {
        const int languages = 1 + static_cast<int>(rng() % 12);
        const int per_language = 1 + static_cast<int>(rng() % 300);
        WinRateTable table;
        table.model_a = "A";
        table.model_b = "B";
        for (int l = 0; l < languages; ++l) {
            LanguageCounts c;
            c.wins = rng() % (per_language + 1);
            c.losses = rng() % (per_language - c.wins + 1);
            c.ties = static_cast<std::uint64_t>(per_language) - c.wins - c.losses;
            table.per_language["l" + std::to_string(l)] = c;
        }
        WinRateTable swapped = table;
        for (auto& [lang, c] : swapped.per_language) std::swap(c.wins, c.losses);
        for (const auto& [lang, c] : table.per_language)
            require(c.win_rate() + swapped.per_language.at(lang).win_rate() == 1.0,
                    "per-language antisymmetry not exact");
        require(table.macro_average() + swapped.macro_average() == 1.0,
                "macro antisymmetry not exact");
    }

    // A judge that always prefers the first-presented response nets 0.500.
    MockServer biased({.judge_mode = MockServer::JudgeMode::always_first});
    JudgeConfig cfg;
    cfg.judge_url = biased.url();
    cfg.retry = fast_retry();
    std::vector<Prompt> prompts;
    std::map<std::string, std::string> a, b;
    for (int i = 0; i < 8; ++i) {
        prompts.push_back({"p" + std::to_string(i), i % 2 ? "en" : "de", "q"});
        a["p" + std::to_string(i)] = "answer one " + std::to_string(i);
        b["p" + std::to_string(i)] = "answer two " + std::to_string(i) + "!";
    }
    const auto match = run_match(prompts, a, b, cfg);
    for (const auto& [lang, c] : match.table.per_language) {
        require(c.ties == c.total(), "biased judge produced a non-tie");
        require(c.win_rate() == 0.5, "biased judge win rate is not exactly 0.5");
    }
    require(match.table.macro_average() == 0.5, "biased judge macro is not exactly 0.5");

    // Worked count example.
    const LanguageCounts counts{2, 1, 1};
    require(counts.win_rate() == 0.625, "2W/1L/1T win rate is not 0.625");

    // Judge sensitivity on a synthetic +0.093 offset.
    WinRateTable t1, t2;
    t1.model_a = t2.model_a = "A";
    t1.model_b = t2.model_b = "B";
    for (const std::string lang : {"de", "ja", "pt"}) {
        t1.per_language[lang] = {400, 500, 100};
        t2.per_language[lang] = {493, 407, 100};  // +93 wins over 1000 verdicts
    }
    const auto report = judge_sensitivity(t1, t2);
    require(std::fabs(report.max_abs_delta - 0.093) <= 1e-12,
            "synthetic +0.093 offset not reported as max delta 0.093");
}

void chrf_metric() {
    std::mt19937_64 rng(1009);
    for (int i = 0; i < 200; ++i) {
        const std::string hyp = oracle::random_text(rng, 40);
        std::string ref = oracle::random_text(rng, 40);
        if (ref.empty()) ref = "ref";
        const int char_order = 1 + static_cast<int>(rng() % 6);
        const int word_order = static_cast<int>(rng() % 3);
        const double beta = 0.5 + 2.5 * uniform01(rng());
        const double got = chrf_pp(hyp, ref, char_order, word_order, beta);
        const double want = oracle::chrf_ref(hyp, ref, char_order, word_order, beta);
        require(std::fabs(got - want) <= 1e-9, "chrF++ differs from the brute-force counter");
    }
    require(chrf_pp("xyz zyx", "xyz zyx") == 100.0, "chrf(x,x) != 100");
    require(chrf_pp("", "anything") == 0.0, "empty hypothesis != 0");
    require(chrf_pp("ab", "abb", 1, 0, 1.0) == 80.0, "hand-computed unigram case != 80");
}

void cluster_validation() {
    for (const std::string missing : {"en", "es", "fr"}) {
        ClusterConfig cfg;
        ClusterConfig::Cluster cluster;
        cluster.name = "test";
        for (const std::string lang : {"en", "es", "fr", "de"})
            if (lang != missing) cluster.languages.push_back(lang);
        cfg.clusters.push_back(cluster);
        try {
            validate_clusters(cfg);
            throw CheckFailure{"cluster missing \"" + missing + "\" was accepted"};
        } catch (const ValidationError& e) {
            require(std::string(e.what()).find(missing) != std::string::npos,
                    "error does not name the missing language");
        }
    }
    ClusterConfig ok;
    ok.clusters.push_back({"full", {"de", "nl", "en", "es", "fr"}});
    validate_clusters(ok);  // must not throw
}

void pipeline_determinism() {
    ToyPipeline toy;
    const auto first = toy.run("run1");
    require(first.executed_stages == toy.cfg.stages.size(), "first run skipped stages");
    const auto second = toy.run("run2");
    require(ledger_signature(first.ledger) == ledger_signature(second.ledger),
            "two identical runs produced different ledgers");

    const auto resumed = toy.run("run1", /*resume=*/true);
    require(resumed.executed_stages == 0,
            "resume after an unchanged run executed " +
                std::to_string(resumed.executed_stages) + " stages");
    require(resumed.skipped_stages == toy.cfg.stages.size(), "resume did not skip every stage");
}

}  // namespace

int main() {
    std::printf("polytune acceptance suite\n");
    criterion(1, "checkpoint round-trip is bit-exact; corrupt files rejected with offsets",
              checkpoint_roundtrip_and_rejection);
    criterion(2, "merge kernels match brute-force references (exact; slerp <= 1e-6)",
              merge_oracles);
    criterion(3, "merge identities and DARE-TIES Monte-Carlo unbiasedness", merge_identities);
    criterion(4, "slerp preserves unit norm within 1e-5 across t", slerp_unit_norm);
    criterion(5, "dpo loss/gradient exactness and finite-difference agreement", dpo_exactness);
    criterion(6, "dpo training strictly descends and grows every pair margin",
              dpo_training_sanity);
    criterion(7, "routing argmax agreement and dataset cardinality ledger", arbitrage_routing);
    criterion(8, "preference pairs: strict inequality, skip logging, default of 3 iterations",
              preference_pairs);
    criterion(8, "pipeline ledger places offline pairs before online iteration 1",
              pipeline_stage_ordering);
    criterion(9, "win-rate harness: exact antisymmetry, debiasing, worked values",
              winrate_harness);
    criterion(10, "chrF++ matches the n-gram oracle; identities hold", chrf_metric);
    criterion(11, "cluster configs missing a shared language are rejected", cluster_validation);
    criterion(12, "pipeline determinism and zero-stage resume", pipeline_determinism);

    if (g_failures == 0)
        std::printf("all criteria passed\n");
    else
        std::printf("%d criteria FAILED\n", g_failures);
    return g_failures;
}
