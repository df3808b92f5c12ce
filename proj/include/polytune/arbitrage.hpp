// Copyright (c) 2026 The Polytune Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reward-based routing over a pool of generator endpoints: fan each prompt
// out to every pool member, score the completions with a reward endpoint,
// and keep the argmax. Prompt processing is concurrent, but all persisted
// rows are sorted by (prompt_id, pool index), so outputs do not depend on
// scheduling.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "polytune/det_rng.hpp"
#include "polytune/error.hpp"
#include "polytune/http_client.hpp"
#include "polytune/io.hpp"
#include "polytune/languages.hpp"
#include "polytune/parallel.hpp"

namespace polytune {

struct Prompt {
    std::string id;
    std::string language;  // ISO 639-1 code from the supported set
    std::string text;
};

inline void validate_prompt(const Prompt& p) {
    if (p.id.empty()) throw ValidationError("prompt with empty id");
    if (p.text.empty()) throw ValidationError("prompt \"" + p.id + "\" has empty text");
    if (!is_supported_language(p.language))
        throw ValidationError("prompt \"" + p.id + "\" has unsupported language \"" +
                              p.language + "\"");
}

inline std::vector<Prompt> load_prompts(const std::filesystem::path& path) {
    std::vector<Prompt> prompts;
    std::set<std::string> ids;
    for (const auto& row : read_jsonl(path)) {
        Prompt p{row.at("id").get<std::string>(), row.at("language").get<std::string>(),
                 row.at("text").get<std::string>()};
        validate_prompt(p);
        if (!ids.insert(p.id).second)
            throw ValidationError("duplicate prompt id \"" + p.id + "\" in " + path.string());
        prompts.push_back(std::move(p));
    }
    return prompts;
}

// Chat template: roles and turns are delimited with special tokens.
// Rendering is plain concatenation, so distinct (prompt, completion) pairs
// render to distinct strings for fixed tokens.
struct ChatTemplate {
    std::string user_open = "<|USER|>";
    std::string user_close = "<|/USER|>";
    std::string chatbot_open = "<|CHATBOT|>";
    std::string chatbot_close = "<|/CHATBOT|>";
    std::string turn_separator = "\n";
};

inline void validate_template(const ChatTemplate& tpl) {
    if (tpl.user_open.empty() || tpl.user_close.empty() || tpl.chatbot_open.empty() ||
        tpl.chatbot_close.empty() || tpl.turn_separator.empty())
        throw ValidationError("chat template fields must all be non-empty");
}

inline std::string format_chat(const Prompt& prompt, const std::string& completion,
                               const ChatTemplate& tpl) {
    validate_template(tpl);
    return tpl.user_open + prompt.text + tpl.user_close + tpl.turn_separator +
           tpl.chatbot_open + completion + tpl.chatbot_close;
}

struct Candidate {
    std::string model_id;
    std::size_t pool_index = 0;  // position in the declared pool order
    std::string completion;
};

struct RewardedCandidate {
    std::string prompt_id;
    std::string model_id;
    std::size_t pool_index = 0;
    std::string completion;
    double reward = 0.0;
};

struct EndpointFailure {
    std::string model_id;
    std::string message;
};

// One completion per pool member; members that still fail after the retry
// budget (or return an empty completion) are listed in `failures`.
struct GenerationOutcome {
    std::vector<Candidate> candidates;
    std::vector<EndpointFailure> failures;
    bool complete() const { return failures.empty(); }
};

inline GenerationOutcome generate_candidates(const Prompt& prompt,
                                             std::span<const GeneratorEndpoint> pool,
                                             const RetryPolicy& retry = {},
                                             std::optional<std::uint64_t> seed = std::nullopt) {
    if (pool.empty()) throw ValidationError("generate_candidates: empty pool");
    GenerationOutcome out;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        try {
            std::string completion = generate_completion(pool[i], prompt.text, retry, seed);
            if (completion.empty())
                throw RuntimeFailure("empty completion from model \"" + pool[i].model_id + "\"");
            out.candidates.push_back({pool[i].model_id, i, std::move(completion)});
        } catch (const std::exception& e) {
            out.failures.push_back({pool[i].model_id, e.what()});
        }
    }
    return out;
}

// Scores candidates in order; every reward must be finite.
inline std::vector<RewardedCandidate> score_candidates(const Prompt& prompt,
                                                       std::span<const Candidate> candidates,
                                                       const std::string& reward_url,
                                                       const RetryPolicy& retry = {}) {
    if (candidates.empty()) throw ValidationError("score_candidates: no candidates");
    std::vector<RewardedCandidate> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) {
        const double reward = score_completion(reward_url, prompt.text, c.completion, retry);
        if (!std::isfinite(reward))
            throw ValidationError("non-finite reward for prompt \"" + prompt.id +
                                  "\", model \"" + c.model_id + "\"");
        out.push_back({prompt.id, c.model_id, c.pool_index, c.completion, reward});
    }
    return out;
}

// The routing rule: maximal reward, ties broken by lowest pool index.
inline RewardedCandidate route(std::span<const RewardedCandidate> candidates) {
    if (candidates.empty()) throw ValidationError("route: empty candidate list");
    for (const auto& c : candidates)
        if (c.prompt_id != candidates[0].prompt_id)
            throw ValidationError("route: mixed prompt ids (\"" + candidates[0].prompt_id +
                                  "\" vs \"" + c.prompt_id + "\")");
    const RewardedCandidate* best = &candidates[0];
    for (const auto& c : candidates) {
        if (c.reward > best->reward ||
            (c.reward == best->reward && c.pool_index < best->pool_index))
            best = &c;
    }
    return *best;
}

struct ArbitrageConfig {
    std::vector<GeneratorEndpoint> pool;
    std::string reward_url;
    ChatTemplate chat_template;
    RetryPolicy retry;
    std::size_t max_inflight = 4;
    std::uint64_t seed = 0;
};

struct ArbitrageOutputs {
    std::filesystem::path dataset;     // one routed row per prompt
    std::filesystem::path candidates;  // full scored candidate log
    std::filesystem::path skipped;     // prompts with total endpoint failure
};

struct ArbitrageSummary {
    std::size_t dataset_rows = 0;
    std::size_t candidate_rows = 0;
    std::size_t skipped_prompts = 0;
    std::size_t endpoint_failures = 0;  // partial failures on routed prompts
};

namespace detail {

inline nlohmann::json dataset_row(const Prompt& p, const RewardedCandidate& c,
                                  const std::string& formatted) {
    return {{"prompt_id", c.prompt_id}, {"language", p.language}, {"text", p.text},
            {"model_id", c.model_id},   {"completion", c.completion},
            {"reward", c.reward},       {"formatted", formatted}};
}

}  // namespace detail

// Runs the full routing stage over a prompt set. Row count ledger:
// dataset rows + skip rows == prompt count. Fails only if every prompt
// failed on every endpoint.
inline ArbitrageSummary build_arbitrage_dataset(std::span<const Prompt> prompts,
                                                const ArbitrageConfig& cfg,
                                                const ArbitrageOutputs& outputs) {
    if (prompts.empty()) throw ValidationError("arbitrage: empty prompt set");
    if (cfg.pool.empty()) throw ValidationError("arbitrage: empty pool");
    validate_template(cfg.chat_template);
    std::set<std::string> ids;
    for (const auto& p : prompts) {
        validate_prompt(p);
        if (!ids.insert(p.id).second)
            throw ValidationError("duplicate prompt id \"" + p.id + "\"");
    }

    struct PerPrompt {
        std::vector<RewardedCandidate> scored;
        std::vector<EndpointFailure> failures;
        std::string error;
    };
    std::vector<PerPrompt> results(prompts.size());

    parallel_for(prompts.size(), std::max<std::size_t>(1, cfg.max_inflight), [&](std::size_t i) {
        const Prompt& prompt = prompts[i];
        auto& slot = results[i];
        const std::uint64_t seed = derive_seed(cfg.seed, prompt.id, 0);
        auto generated = generate_candidates(prompt, cfg.pool, cfg.retry, seed);
        slot.failures = std::move(generated.failures);
        if (generated.candidates.empty()) return;
        try {
            slot.scored = score_candidates(prompt, generated.candidates, cfg.reward_url, cfg.retry);
        } catch (const std::exception& e) {
            slot.scored.clear();
            slot.error = e.what();
        }
    });

    // Deterministic persistence order: sort on (prompt_id, pool index).
    std::vector<std::size_t> order(prompts.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return prompts[a].id < prompts[b].id; });

    std::vector<nlohmann::json> dataset_rows, candidate_rows, skip_rows;
    ArbitrageSummary summary;
    for (std::size_t i : order) {
        const Prompt& prompt = prompts[i];
        const auto& slot = results[i];
        summary.endpoint_failures += slot.failures.size();
        if (slot.scored.empty()) {
            std::string reason = slot.error;
            if (reason.empty()) {
                reason = "all endpoints failed:";
                for (const auto& f : slot.failures)
                    reason += " [" + f.model_id + "] " + f.message + ";";
            }
            skip_rows.push_back({{"prompt_id", prompt.id}, {"reason", reason}});
            continue;
        }
        for (const auto& c : slot.scored)
            candidate_rows.push_back(
                detail::dataset_row(prompt, c, format_chat(prompt, c.completion, cfg.chat_template)));
        const RewardedCandidate best = route(slot.scored);
        dataset_rows.push_back(
            detail::dataset_row(prompt, best, format_chat(prompt, best.completion, cfg.chat_template)));
    }

    summary.dataset_rows = dataset_rows.size();
    summary.candidate_rows = candidate_rows.size();
    summary.skipped_prompts = skip_rows.size();
    write_jsonl(outputs.dataset, dataset_rows);
    write_jsonl(outputs.candidates, candidate_rows);
    write_jsonl(outputs.skipped, skip_rows);

    if (summary.dataset_rows == 0)
        throw RuntimeFailure("arbitrage: every prompt failed on every endpoint");
    return summary;
}

}  // namespace polytune
