// Copyright (c) 2026 The Polytune Authors
// SPDX-License-Identifier: Apache-2.0
//
// Preference-pair curation. Offline pairs contrast the highest- and
// lowest-reward completions from the arbitrage candidate log; online rounds
// sample fresh completions from the current policy, score them, and pair
// best against worst under the same rules. A pair is only emitted when the
// chosen reward is strictly greater than the rejected one and the texts
// differ; degenerate prompts are skipped and logged, never fatal.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "polytune/arbitrage.hpp"
#include "polytune/error.hpp"
#include "polytune/io.hpp"

namespace polytune {

enum class PairStage { offline, online };

inline std::string_view pair_stage_name(PairStage s) {
    return s == PairStage::offline ? "offline" : "online";
}

struct PreferencePair {
    std::string prompt_id;
    std::string language;
    std::string prompt_text;
    std::string chosen;
    std::string rejected;
    double chosen_reward = 0.0;
    double rejected_reward = 0.0;
    PairStage stage = PairStage::offline;
    int iteration = 0;  // 0 for offline
};

struct SkippedPrompt {
    std::string prompt_id;
    std::string reason;
};

struct PairExtraction {
    std::vector<PreferencePair> pairs;
    std::vector<SkippedPrompt> skipped;
};

// Online round configuration. The default of 3 iterations reflects the
// recipe; more than 3 is allowed up to `max_n_iterations` but reported as
// a warning by the config layer (gains shrink and reward hacking appears).
struct OnlineRoundConfig {
    int samples_per_prompt = 4;  // m
    int n_iterations = 3;
    double beta = 0.1;
    int max_n_iterations = 10;
};

// A scored candidate row as persisted by the arbitrage stage, with its
// position within the prompt group re-derived from file order.
struct CandidateRow {
    std::string prompt_id;
    std::string language;
    std::string text;
    std::string model_id;
    std::size_t pool_index = 0;
    std::string completion;
    double reward = 0.0;
};

inline std::vector<CandidateRow> load_candidate_log(const std::filesystem::path& path) {
    std::vector<CandidateRow> rows;
    std::map<std::string, std::size_t> group_sizes;
    for (const auto& j : read_jsonl(path)) {
        CandidateRow row;
        row.prompt_id = j.at("prompt_id").get<std::string>();
        row.language = j.at("language").get<std::string>();
        row.text = j.at("text").get<std::string>();
        row.model_id = j.at("model_id").get<std::string>();
        row.completion = j.at("completion").get<std::string>();
        row.reward = j.at("reward").get<double>();
        row.pool_index = group_sizes[row.prompt_id]++;  // rows are in pool order per prompt
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace detail {

// Best-vs-worst selection shared by the offline and online paths.
// Ties on reward resolve to the lowest pool index for both ends.
inline void select_pair(const std::vector<const CandidateRow*>& group, PairStage stage,
                        int iteration, PairExtraction& out) {
    if (group.empty()) return;
    if (group.size() < 2) {
        out.skipped.push_back({group[0]->prompt_id, "single candidate"});
        return;
    }
    const CandidateRow* best = group[0];
    const CandidateRow* worst = group[0];
    for (const auto* c : group) {
        if (c->reward > best->reward ||
            (c->reward == best->reward && c->pool_index < best->pool_index))
            best = c;
        if (c->reward < worst->reward ||
            (c->reward == worst->reward && c->pool_index < worst->pool_index))
            worst = c;
    }
    if (best->reward == worst->reward) {
        out.skipped.push_back({group[0]->prompt_id, "equal rewards"});
        return;
    }
    if (best->completion == worst->completion) {
        out.skipped.push_back({group[0]->prompt_id, "identical completions"});
        return;
    }
    out.pairs.push_back({best->prompt_id, best->language, best->text, best->completion,
                         worst->completion, best->reward, worst->reward, stage, iteration});
}

}  // namespace detail

// Per prompt: chosen = argmax reward, rejected = argmin reward. Emitted
// pairs always satisfy chosen_reward > rejected_reward strictly.
inline PairExtraction offline_pairs(std::span<const CandidateRow> log) {
    if (log.empty()) throw ValidationError("offline_pairs: empty candidate log");
    std::map<std::string, std::vector<const CandidateRow*>> groups;
    for (const auto& row : log) groups[row.prompt_id].push_back(&row);
    PairExtraction out;
    for (auto& [id, group] : groups) {
        std::sort(group.begin(), group.end(),
                  [](const CandidateRow* a, const CandidateRow* b) {
                      return a->pool_index < b->pool_index;
                  });
        detail::select_pair(group, PairStage::offline, 0, out);
    }
    return out;
}

// Samples m completions from the policy endpoint, one call per sample with
// a distinct derived seed.
inline std::vector<std::string> sample_online(const GeneratorEndpoint& policy,
                                              const Prompt& prompt, int m,
                                              const RetryPolicy& retry = {},
                                              std::uint64_t seed = 0) {
    if (m < 2) throw ValidationError("sample_online: need m >= 2 samples per prompt");
    std::vector<std::string> completions;
    completions.reserve(static_cast<std::size_t>(m));
    for (int k = 0; k < m; ++k)
        completions.push_back(generate_completion(
            policy, prompt.text, retry, derive_seed(seed, prompt.id, static_cast<std::uint64_t>(k))));
    return completions;
}

struct RoundStats {
    int iteration = 0;
    std::size_t pairs = 0;
    std::size_t skipped = 0;
    double mean_chosen_reward = 0.0;
    double mean_rejected_reward = 0.0;
};

struct OnlineRoundResult {
    std::vector<PreferencePair> pairs;
    std::vector<SkippedPrompt> skipped;
    std::vector<CandidateRow> candidates;  // every scored sample, prompt-sorted
    RoundStats stats;
};

inline OnlineRoundResult online_round(const GeneratorEndpoint& policy,
                                      const std::string& reward_url,
                                      std::span<const Prompt> prompts,
                                      const OnlineRoundConfig& cfg, int iteration,
                                      const RetryPolicy& retry = {},
                                      std::size_t max_inflight = 4, std::uint64_t seed = 0) {
    if (prompts.empty()) throw ValidationError("online_round: empty prompt set");
    if (iteration < 1 || iteration > cfg.n_iterations)
        throw ValidationError("online_round: iteration " + std::to_string(iteration) +
                              " outside [1, " + std::to_string(cfg.n_iterations) + "]");
    if (cfg.samples_per_prompt < 2)
        throw ValidationError("online_round: samples_per_prompt must be >= 2");

    struct PerPrompt {
        std::vector<CandidateRow> rows;
        std::string error;
    };
    std::vector<PerPrompt> results(prompts.size());
    parallel_for(prompts.size(), std::max<std::size_t>(1, max_inflight), [&](std::size_t i) {
        const Prompt& prompt = prompts[i];
        auto& slot = results[i];
        try {
            const auto completions =
                sample_online(policy, prompt, cfg.samples_per_prompt, retry,
                              derive_seed(seed, "online", static_cast<std::uint64_t>(iteration)));
            std::vector<Candidate> cands;
            for (std::size_t k = 0; k < completions.size(); ++k)
                cands.push_back({policy.model_id, k, completions[k]});
            for (const auto& rc : score_candidates(prompt, cands, reward_url, retry)) {
                CandidateRow row;
                row.prompt_id = rc.prompt_id;
                row.language = prompt.language;
                row.text = prompt.text;
                row.model_id = rc.model_id;
                row.pool_index = rc.pool_index;  // sample index
                row.completion = rc.completion;
                row.reward = rc.reward;
                slot.rows.push_back(std::move(row));
            }
        } catch (const std::exception& e) {
            slot.rows.clear();
            slot.error = e.what();
        }
    });

    std::vector<std::size_t> order(prompts.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return prompts[a].id < prompts[b].id; });

    OnlineRoundResult result;
    for (std::size_t i : order) {
        const auto& slot = results[i];
        if (!slot.error.empty()) {
            result.skipped.push_back({prompts[i].id, slot.error});
            continue;
        }
        std::vector<const CandidateRow*> group;
        for (const auto& row : slot.rows) group.push_back(&row);
        PairExtraction extraction;
        detail::select_pair(group, PairStage::online, iteration, extraction);
        for (auto& p : extraction.pairs) result.pairs.push_back(std::move(p));
        for (auto& s : extraction.skipped) result.skipped.push_back(std::move(s));
        for (const auto& row : slot.rows) result.candidates.push_back(row);
    }

    result.stats.iteration = iteration;
    result.stats.pairs = result.pairs.size();
    result.stats.skipped = result.skipped.size();
    if (!result.pairs.empty()) {
        double chosen = 0.0, rejected = 0.0;
        for (const auto& p : result.pairs) {
            chosen += p.chosen_reward;
            rejected += p.rejected_reward;
        }
        result.stats.mean_chosen_reward = chosen / static_cast<double>(result.pairs.size());
        result.stats.mean_rejected_reward = rejected / static_cast<double>(result.pairs.size());
    }
    return result;
}

// --- persistence ---

inline nlohmann::json pair_to_json(const PreferencePair& p) {
    return {{"prompt_id", p.prompt_id},
            {"language", p.language},
            {"prompt_text", p.prompt_text},
            {"chosen", p.chosen},
            {"rejected", p.rejected},
            {"chosen_reward", p.chosen_reward},
            {"rejected_reward", p.rejected_reward},
            {"stage", std::string(pair_stage_name(p.stage))},
            {"iteration", p.iteration}};
}

inline PreferencePair pair_from_json(const nlohmann::json& j) {
    PreferencePair p;
    p.prompt_id = j.at("prompt_id").get<std::string>();
    p.language = j.at("language").get<std::string>();
    p.prompt_text = j.at("prompt_text").get<std::string>();
    p.chosen = j.at("chosen").get<std::string>();
    p.rejected = j.at("rejected").get<std::string>();
    p.chosen_reward = j.at("chosen_reward").get<double>();
    p.rejected_reward = j.at("rejected_reward").get<double>();
    const auto stage = j.at("stage").get<std::string>();
    if (stage == "offline")
        p.stage = PairStage::offline;
    else if (stage == "online")
        p.stage = PairStage::online;
    else
        throw ValidationError("unknown pair stage \"" + stage + "\"");
    p.iteration = j.at("iteration").get<int>();
    return p;
}

inline void write_pairs(const std::filesystem::path& path,
                        std::span<const PreferencePair> pairs) {
    std::vector<nlohmann::json> rows;
    rows.reserve(pairs.size());
    for (const auto& p : pairs) rows.push_back(pair_to_json(p));
    write_jsonl(path, rows);
}

inline std::vector<PreferencePair> load_pairs(const std::filesystem::path& path) {
    std::vector<PreferencePair> pairs;
    for (const auto& row : read_jsonl(path)) pairs.push_back(pair_from_json(row));
    return pairs;
}

inline void write_candidate_log(const std::filesystem::path& path,
                                std::span<const CandidateRow> rows) {
    std::vector<nlohmann::json> out;
    out.reserve(rows.size());
    for (const auto& r : rows)
        out.push_back({{"prompt_id", r.prompt_id},
                       {"language", r.language},
                       {"text", r.text},
                       {"model_id", r.model_id},
                       {"completion", r.completion},
                       {"reward", r.reward}});
    write_jsonl(path, out);
}

inline void write_skips(const std::filesystem::path& path,
                        std::span<const SkippedPrompt> skips) {
    std::vector<nlohmann::json> rows;
    rows.reserve(skips.size());
    for (const auto& s : skips)
        rows.push_back({{"prompt_id", s.prompt_id}, {"reason", s.reason}});
    write_jsonl(path, rows);
}

inline nlohmann::json stats_to_json(const RoundStats& s) {
    return {{"iteration", s.iteration},
            {"pairs", s.pairs},
            {"skipped", s.skipped},
            {"mean_chosen_reward", s.mean_chosen_reward},
            {"mean_rejected_reward", s.mean_rejected_reward}};
}

}  // namespace polytune
