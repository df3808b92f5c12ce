// Copyright (c) 2026 The Polytune Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pipeline orchestration. Stages execute sequentially; each stage's inputs
// (its normalized params, the global seed, the substantive endpoint config
// and the bytes of every input file) are hashed into the run ledger together
// with the hashes of its outputs. Resume skips a stage when its input hash
// matches the previous run and all recorded outputs still hash-match on
// disk; a mismatched output is corruption and aborts with the stage name.
// Endpoint URLs are deliberately excluded from hashing so mock endpoints on
// ephemeral ports stay reproducible run-to-run.

#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "polytune/arbitrage.hpp"
#include "polytune/config.hpp"
#include "polytune/digest.hpp"
#include "polytune/dpo.hpp"
#include "polytune/error.hpp"
#include "polytune/io.hpp"
#include "polytune/judge.hpp"
#include "polytune/mock_endpoints.hpp"
#include "polytune/prefs.hpp"

namespace polytune {

struct LedgerEntry {
    std::string stage_name;
    std::string stage_type;
    std::string input_hash;
    std::map<std::string, std::string> outputs;  // relative path -> sha256
    double duration_ms = 0.0;
    bool executed = true;  // false when resume skipped the stage
};

struct RunLedger {
    std::vector<LedgerEntry> entries;
};

inline nlohmann::json ledger_to_json(const RunLedger& ledger) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : ledger.entries)
        entries.push_back({{"stage_name", e.stage_name},
                           {"stage_type", e.stage_type},
                           {"input_hash", e.input_hash},
                           {"outputs", e.outputs},
                           {"duration_ms", e.duration_ms},
                           {"executed", e.executed}});
    return {{"entries", entries}};
}

inline RunLedger ledger_from_json(const nlohmann::json& j) {
    RunLedger ledger;
    for (const auto& e : j.at("entries")) {
        LedgerEntry entry;
        entry.stage_name = e.at("stage_name").get<std::string>();
        entry.stage_type = e.at("stage_type").get<std::string>();
        entry.input_hash = e.at("input_hash").get<std::string>();
        for (const auto& [k, v] : e.at("outputs").items())
            entry.outputs[k] = v.get<std::string>();
        entry.duration_ms = e.value("duration_ms", 0.0);
        entry.executed = e.value("executed", true);
        ledger.entries.push_back(std::move(entry));
    }
    return ledger;
}

// The scheduling-independent part of a ledger: what the determinism
// acceptance check compares across runs.
inline std::string ledger_signature(const RunLedger& ledger) {
    std::string sig;
    for (const auto& e : ledger.entries) {
        sig += e.stage_name + "|" + e.stage_type + "|" + e.input_hash;
        for (const auto& [path, hash] : e.outputs) sig += "|" + path + "=" + hash;
        sig += "\n";
    }
    return sig;
}

struct PipelineOptions {
    bool resume = false;
    bool mock_endpoints = false;
};

struct RunSummary {
    RunLedger ledger;
    std::size_t executed_stages = 0;
    std::size_t skipped_stages = 0;
};

namespace detail {

struct StageContext {
    const PipelineConfig& cfg;
    std::filesystem::path out_dir;
    EndpointsConfig endpoints;  // possibly rewritten to mock URLs
    std::uint64_t stage_seed = 0;
};

// Relative paths refer to stage artifacts under the out-dir; paths that do
// not (yet) exist there fall back to the config file's directory, so source
// inputs can be named relative to the config.
inline std::filesystem::path resolve_path(const StageContext& ctx, const std::string& p) {
    const std::filesystem::path path(p);
    if (path.is_absolute()) return path;
    const auto under_out = ctx.out_dir / path;
    if (std::filesystem::exists(under_out) || ctx.cfg.base_dir.empty()) return under_out;
    const auto under_config = ctx.cfg.base_dir / path;
    return std::filesystem::exists(under_config) ? under_config : under_out;
}

// Substantive endpoint identity for hashing: model ids and sampling params,
// never URLs.
inline std::string endpoints_fingerprint(const EndpointsConfig& endpoints) {
    nlohmann::json gens = nlohmann::json::array();
    for (const auto& g : endpoints.generators)
        gens.push_back({{"model_id", g.model_id},
                        {"temperature", g.params.temperature},
                        {"max_tokens", g.params.max_tokens}});
    return gens.dump();
}

inline std::vector<std::string> stage_input_paths(const StageConfig& stage) {
    std::vector<std::string> paths;
    const auto& p = stage.params;
    switch (stage.type) {
        case StageType::arbitrage:
            paths.push_back(p.at("prompts").get<std::string>());
            break;
        case StageType::merge: {
            const auto recipe = parse_merge_recipe(p.at("recipe"));
            for (const auto& input : recipe.inputs) paths.push_back(input);
            if (recipe.base) paths.push_back(*recipe.base);
            break;
        }
        case StageType::prefs_offline:
            paths.push_back(p.at("candidates").get<std::string>());
            break;
        case StageType::prefs_online:
            paths.push_back(p.at("prompts").get<std::string>());
            break;
        case StageType::dpo_train:
            paths.push_back(p.at("pairs").get<std::string>());
            paths.push_back(p.at("candidates").get<std::string>());
            break;
        case StageType::eval_winrate: {
            paths.push_back(p.at("prompts").get<std::string>());
            for (const char* side : {"completions_a", "completions_b"}) {
                const auto& c = p.at(side);
                paths.push_back(c.is_string() ? c.get<std::string>()
                                              : c.at("path").get<std::string>());
            }
            break;
        }
    }
    return paths;
}

inline std::string stage_input_hash(const StageContext& ctx, const StageConfig& stage,
                                    std::size_t stage_index) {
    Sha256 digest;
    digest.update("polytune-stage-v1\n");
    digest.update(std::string(stage_type_name(stage.type)));
    digest.update("\n" + stage.name + "\n");
    digest.update(stage.params.dump());
    digest.update("\nseed=" + std::to_string(ctx.cfg.seed));
    digest.update("\nindex=" + std::to_string(stage_index));
    digest.update("\nendpoints=" + endpoints_fingerprint(ctx.endpoints));
    for (const auto& declared : stage_input_paths(stage)) {
        const auto resolved = resolve_path(ctx, declared);
        if (!std::filesystem::exists(resolved))
            throw RuntimeFailure("stage \"" + stage.name + "\": missing input file " +
                                 resolved.string());
        digest.update("\nfile " + declared + " " + sha256_file_hex(resolved));
    }
    return digest.hex();
}

// --- stage bodies; each returns the list of files it wrote (relative to out_dir) ---

inline std::vector<Prompt> load_stage_prompts(const StageContext& ctx, const StageConfig& stage) {
    auto prompts = load_prompts(resolve_path(ctx, stage.params.at("prompts").get<std::string>()));
    if (stage.params.contains("cluster") && ctx.cfg.clusters) {
        const auto name = stage.params.at("cluster").get<std::string>();
        for (const auto& c : ctx.cfg.clusters->clusters) {
            if (c.name != name) continue;
            std::vector<Prompt> filtered;
            for (auto& p : prompts)
                if (std::find(c.languages.begin(), c.languages.end(), p.language) !=
                    c.languages.end())
                    filtered.push_back(std::move(p));
            return filtered;
        }
    }
    return prompts;
}

inline std::vector<std::string> run_arbitrage_stage(const StageContext& ctx,
                                                    const StageConfig& stage) {
    const auto prompts = load_stage_prompts(ctx, stage);
    ArbitrageConfig acfg;
    acfg.pool = ctx.endpoints.generators;
    acfg.reward_url = ctx.endpoints.reward_url;
    acfg.retry = ctx.cfg.retry;
    acfg.max_inflight = ctx.cfg.max_inflight;
    acfg.seed = ctx.stage_seed;
    const auto dir = ctx.out_dir / stage.name;
    std::filesystem::create_directories(dir);
    ArbitrageOutputs outputs{dir / "dataset.jsonl", dir / "candidates.jsonl",
                             dir / "skipped.jsonl"};
    const auto summary = build_arbitrage_dataset(prompts, acfg, outputs);
    write_json_file(dir / "summary.json",
                    {{"dataset_rows", summary.dataset_rows},
                     {"candidate_rows", summary.candidate_rows},
                     {"skipped_prompts", summary.skipped_prompts},
                     {"endpoint_failures", summary.endpoint_failures}});
    return {stage.name + "/dataset.jsonl", stage.name + "/candidates.jsonl",
            stage.name + "/skipped.jsonl", stage.name + "/summary.json"};
}

inline std::vector<std::string> run_merge_stage(const StageContext& ctx,
                                                const StageConfig& stage) {
    auto recipe = parse_merge_recipe(stage.params.at("recipe"));
    for (auto& input : recipe.inputs) input = resolve_path(ctx, input).string();
    if (recipe.base) recipe.base = resolve_path(ctx, *recipe.base).string();
    Checkpoint merged = apply_merge_recipe(recipe);
    merged.provenance["stage"] = stage.name;
    merged.provenance["merge_method"] = std::string(merge_method_name(recipe.method));
    const auto dir = ctx.out_dir / stage.name;
    std::filesystem::create_directories(dir);
    write_checkpoint(merged, dir / "merged.ckpt");
    write_json_file(dir / "summary.json",
                    {{"recipe", merge_recipe_to_json(recipe)},
                     {"tensors", merged.tensors.size()}});
    return {stage.name + "/merged.ckpt", stage.name + "/summary.json"};
}

inline std::vector<std::string> run_prefs_offline_stage(const StageContext& ctx,
                                                        const StageConfig& stage) {
    const auto log =
        load_candidate_log(resolve_path(ctx, stage.params.at("candidates").get<std::string>()));
    const auto extraction = offline_pairs(log);
    const auto dir = ctx.out_dir / stage.name;
    std::filesystem::create_directories(dir);
    write_pairs(dir / "pairs.jsonl", extraction.pairs);
    write_skips(dir / "skipped.jsonl", extraction.skipped);
    RoundStats stats;
    stats.iteration = 0;
    stats.pairs = extraction.pairs.size();
    stats.skipped = extraction.skipped.size();
    if (!extraction.pairs.empty()) {
        double c = 0.0, r = 0.0;
        for (const auto& p : extraction.pairs) {
            c += p.chosen_reward;
            r += p.rejected_reward;
        }
        stats.mean_chosen_reward = c / static_cast<double>(extraction.pairs.size());
        stats.mean_rejected_reward = r / static_cast<double>(extraction.pairs.size());
    }
    write_json_file(dir / "stats.json", stats_to_json(stats));
    return {stage.name + "/pairs.jsonl", stage.name + "/skipped.jsonl",
            stage.name + "/stats.json"};
}

inline std::vector<std::string> run_prefs_online_stage(const StageContext& ctx,
                                                       const StageConfig& stage) {
    const auto prompts = load_stage_prompts(ctx, stage);
    const auto model = stage.params.at("policy_model_id").get<std::string>();
    const GeneratorEndpoint* policy = nullptr;
    for (const auto& g : ctx.endpoints.generators)
        if (g.model_id == model) policy = &g;
    if (policy == nullptr)
        throw ValidationError("stage \"" + stage.name + "\": unknown policy model \"" + model + "\"");
    OnlineRoundConfig rc;
    rc.samples_per_prompt = stage.params.at("samples_per_prompt").get<int>();
    rc.n_iterations = stage.params.at("n_iterations").get<int>();
    const int iteration = stage.params.at("iteration").get<int>();
    const auto result = online_round(*policy, ctx.endpoints.reward_url, prompts, rc, iteration,
                                     ctx.cfg.retry, ctx.cfg.max_inflight, ctx.stage_seed);
    const auto dir = ctx.out_dir / stage.name;
    std::filesystem::create_directories(dir);
    write_pairs(dir / "pairs.jsonl", result.pairs);
    write_skips(dir / "skipped.jsonl", result.skipped);
    write_candidate_log(dir / "candidates.jsonl", result.candidates);
    write_json_file(dir / "stats.json", stats_to_json(result.stats));
    return {stage.name + "/pairs.jsonl", stage.name + "/skipped.jsonl",
            stage.name + "/candidates.jsonl", stage.name + "/stats.json"};
}

inline std::vector<std::string> run_dpo_stage(const StageContext& ctx, const StageConfig& stage) {
    const auto pairs =
        load_pairs(resolve_path(ctx, stage.params.at("pairs").get<std::string>()));
    const auto log =
        load_candidate_log(resolve_path(ctx, stage.params.at("candidates").get<std::string>()));
    if (pairs.empty()) throw ValidationError("stage \"" + stage.name + "\": no preference pairs");

    // Tabular instance: one row per prompt (sorted), one column per
    // candidate in pool order; pairs map completions back to columns.
    std::map<std::string, std::vector<const CandidateRow*>> groups;
    for (const auto& row : log) groups[row.prompt_id].push_back(&row);
    std::map<std::string, std::size_t> row_of;
    std::size_t max_group = 0;
    for (const auto& [id, group] : groups) {
        row_of[id] = row_of.size();
        max_group = std::max(max_group, group.size());
    }
    std::vector<IndexedPair> indexed;
    nlohmann::json mapping_pairs = nlohmann::json::array();
    for (const auto& pr : pairs) {
        const auto row_it = row_of.find(pr.prompt_id);
        if (row_it == row_of.end())
            throw ValidationError("stage \"" + stage.name + "\": pair prompt \"" + pr.prompt_id +
                                  "\" not in candidate log");
        const auto& group = groups.at(pr.prompt_id);
        auto col_of = [&](const std::string& text) -> std::size_t {
            for (const auto* c : group)
                if (c->completion == text) return c->pool_index;
            throw ValidationError("stage \"" + stage.name + "\": pair completion for prompt \"" +
                                  pr.prompt_id + "\" not in candidate log");
        };
        IndexedPair ip{row_it->second, col_of(pr.chosen), col_of(pr.rejected)};
        indexed.push_back(ip);
        mapping_pairs.push_back({{"prompt_id", pr.prompt_id},
                                 {"row", ip.row},
                                 {"chosen", ip.chosen},
                                 {"rejected", ip.rejected}});
    }

    DpoConfig dcfg;
    dcfg.beta = stage.params.at("beta").get<double>();
    dcfg.learning_rate = stage.params.at("learning_rate").get<double>();
    dcfg.steps = stage.params.at("steps").get<int>();

    TabularPolicy policy(row_of.size(), max_group);
    const TabularPolicy reference = policy;
    const auto result = train_dpo(policy, indexed, dcfg);

    const auto dir = ctx.out_dir / stage.name;
    std::filesystem::create_directories(dir);
    nlohmann::json logits = nlohmann::json::array();
    for (std::size_t p = 0; p < result.policy.rows(); ++p) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t k = 0; k < result.policy.cols(); ++k)
            row.push_back(result.policy.logit(p, k));
        logits.push_back(row);
    }
    write_json_file(dir / "policy.json", {{"rows", result.policy.rows()},
                                          {"cols", result.policy.cols()},
                                          {"logits", logits}});
    std::vector<nlohmann::json> trace_rows;
    for (std::size_t s = 0; s < result.trace.size(); ++s)
        trace_rows.push_back({{"step", s}, {"mean_loss", result.trace[s]}});
    write_jsonl(dir / "trace.jsonl", trace_rows);
    write_json_file(dir / "mapping.json", {{"num_prompts", row_of.size()},
                                           {"num_candidates", max_group},
                                           {"pairs", mapping_pairs}});
    const double final_loss = mean_dpo_loss(result.policy, reference, indexed, dcfg.beta);
    write_json_file(dir / "summary.json",
                    {{"steps", dcfg.steps},
                     {"initial_loss", result.trace.empty() ? final_loss : result.trace.front()},
                     {"final_loss", final_loss}});
    return {stage.name + "/policy.json", stage.name + "/trace.jsonl",
            stage.name + "/mapping.json", stage.name + "/summary.json"};
}

inline std::map<std::string, std::string> load_completions_file(const StageContext& ctx,
                                                                const nlohmann::json& side,
                                                                const std::string& what) {
    const std::string path =
        side.is_string() ? side.get<std::string>() : side.at("path").get<std::string>();
    std::optional<std::string> model_filter;
    if (side.is_object() && side.contains("model_id"))
        model_filter = side.at("model_id").get<std::string>();
    std::map<std::string, std::string> completions;
    for (const auto& row : read_jsonl(resolve_path(ctx, path))) {
        if (model_filter && row.value("model_id", std::string()) != *model_filter) continue;
        const auto id = row.at("prompt_id").get<std::string>();
        const auto completion = row.at("completion").get<std::string>();
        if (!completions.emplace(id, completion).second)
            throw ValidationError(what + ": duplicate completion for prompt \"" + id + "\" in " +
                                  path);
    }
    return completions;
}

inline std::vector<std::string> run_eval_stage(const StageContext& ctx, const StageConfig& stage) {
    const auto prompts = load_stage_prompts(ctx, stage);
    const auto a = load_completions_file(ctx, stage.params.at("completions_a"), "completions_a");
    const auto b = load_completions_file(ctx, stage.params.at("completions_b"), "completions_b");
    JudgeConfig jcfg;
    jcfg.judge_url = ctx.endpoints.judge_url;
    jcfg.retry = ctx.cfg.retry;
    jcfg.max_inflight = ctx.cfg.max_inflight;
    if (stage.params.contains("both_orders"))
        jcfg.both_orders = stage.params.at("both_orders").get<bool>();
    if (stage.params.contains("template"))
        jcfg.prompt_template = stage.params.at("template").get<std::string>();
    const auto result = run_match(prompts, a, b, jcfg,
                                  stage.params.value("model_a", std::string("A")),
                                  stage.params.value("model_b", std::string("B")));
    const auto dir = ctx.out_dir / stage.name;
    std::filesystem::create_directories(dir);
    std::vector<nlohmann::json> verdict_rows;
    for (const auto& v : result.verdicts) verdict_rows.push_back(verdict_to_json(v));
    write_jsonl(dir / "verdicts.jsonl", verdict_rows);
    write_json_file(dir / "winrates.json", win_rate_table_to_json(result.table));
    write_text_file(dir / "winrates.csv", win_rate_table_to_csv(result.table));
    return {stage.name + "/verdicts.jsonl", stage.name + "/winrates.json",
            stage.name + "/winrates.csv"};
}

inline std::vector<std::string> execute_stage(const StageContext& ctx, const StageConfig& stage) {
    switch (stage.type) {
        case StageType::arbitrage: return run_arbitrage_stage(ctx, stage);
        case StageType::merge: return run_merge_stage(ctx, stage);
        case StageType::prefs_offline: return run_prefs_offline_stage(ctx, stage);
        case StageType::prefs_online: return run_prefs_online_stage(ctx, stage);
        case StageType::dpo_train: return run_dpo_stage(ctx, stage);
        case StageType::eval_winrate: return run_eval_stage(ctx, stage);
    }
    throw ValidationError("unreachable stage type");
}

}  // namespace detail

// Mock endpoint fleet for --mock-endpoints runs: one generator server per
// pool member (persona = model id) plus one shared scorer/judge/translator.
struct MockFleet {
    std::vector<std::unique_ptr<MockServer>> generators;
    std::unique_ptr<MockServer> shared;

    static MockFleet start(const EndpointsConfig& endpoints) {
        MockFleet fleet;
        for (const auto& g : endpoints.generators) {
            MockServer::Options opt;
            opt.persona = g.model_id;
            fleet.generators.push_back(std::make_unique<MockServer>(opt));
        }
        fleet.shared = std::make_unique<MockServer>();
        return fleet;
    }

    EndpointsConfig rewrite(const EndpointsConfig& endpoints) const {
        EndpointsConfig out = endpoints;
        for (std::size_t i = 0; i < out.generators.size(); ++i)
            out.generators[i].url = generators[i]->url();
        out.reward_url = shared->url();
        out.judge_url = shared->url();
        out.translate_url = shared->url();
        return out;
    }
};

inline RunSummary run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out_dir,
                               const PipelineOptions& options = {}) {
    std::filesystem::create_directories(out_dir);
    const auto ledger_path = out_dir / "ledger.json";

    std::optional<RunLedger> previous;
    if (options.resume && std::filesystem::exists(ledger_path))
        previous = ledger_from_json(read_json_file(ledger_path));

    MockFleet fleet;
    EndpointsConfig endpoints = cfg.endpoints;
    if (options.mock_endpoints) {
        fleet = MockFleet::start(cfg.endpoints);
        endpoints = fleet.rewrite(cfg.endpoints);
    }

    RunSummary summary;
    for (std::size_t index = 0; index < cfg.stages.size(); ++index) {
        const auto& stage = cfg.stages[index];
        detail::StageContext ctx{cfg, out_dir, endpoints,
                                 derive_seed(cfg.seed, stage.name, index)};
        const std::string input_hash = detail::stage_input_hash(ctx, stage, index);

        const LedgerEntry* prior = nullptr;
        if (previous) {
            for (const auto& e : previous->entries)
                if (e.stage_name == stage.name && e.input_hash == input_hash) prior = &e;
        }
        if (prior != nullptr) {
            bool outputs_present = true;
            for (const auto& [rel, expected] : prior->outputs) {
                const auto path = out_dir / rel;
                if (!std::filesystem::exists(path)) {
                    outputs_present = false;
                    break;
                }
                if (sha256_file_hex(path) != expected)
                    throw RuntimeFailure("stage \"" + stage.name + "\": output " + rel +
                                         " does not match its recorded hash (corrupt artifact)");
            }
            if (outputs_present) {
                LedgerEntry entry = *prior;
                entry.executed = false;
                entry.duration_ms = 0.0;
                summary.ledger.entries.push_back(std::move(entry));
                ++summary.skipped_stages;
                write_json_file(ledger_path, ledger_to_json(summary.ledger));
                continue;
            }
        }

        const auto start = std::chrono::steady_clock::now();
        const auto written = detail::execute_stage(ctx, stage);
        const auto stop = std::chrono::steady_clock::now();

        LedgerEntry entry;
        entry.stage_name = stage.name;
        entry.stage_type = std::string(stage_type_name(stage.type));
        entry.input_hash = input_hash;
        entry.duration_ms =
            std::chrono::duration_cast<std::chrono::duration<double, std::milli>>(stop - start)
                .count();
        for (const auto& rel : written) entry.outputs[rel] = sha256_file_hex(out_dir / rel);
        summary.ledger.entries.push_back(std::move(entry));
        ++summary.executed_stages;
        write_json_file(ledger_path, ledger_to_json(summary.ledger));
    }
    return summary;
}

}  // namespace polytune
