// Copyright (c) 2026 The Polytune Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pairwise open-ended-generation evaluation with an LLM judge. Each prompt
// is judged in both presentation orders; if the two orders disagree the
// verdict is a tie, which removes position bias by construction. Win rate
// per language is (wins + 0.5*ties) / total; the macro average is the
// unweighted mean over languages.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "polytune/arbitrage.hpp"
#include "polytune/error.hpp"
#include "polytune/http_client.hpp"
#include "polytune/parallel.hpp"

namespace polytune {

inline constexpr std::string_view kDefaultJudgeTemplate =
    "Compare the two responses to the instruction and decide which answers it better.\n"
    "Instruction:\n{instruction}\n"
    "Response A:\n{response_a}\n"
    "Response B:\n{response_b}\n"
    "Reply with one final line containing exactly A, B, or TIE.";

enum class Winner { a, b, tie };

inline std::string_view winner_name(Winner w) {
    switch (w) {
        case Winner::a: return "A";
        case Winner::b: return "B";
        case Winner::tie: return "tie";
    }
    return "";
}

struct Verdict {
    std::string prompt_id;
    std::string language;
    Winner winner = Winner::tie;
    bool order_flipped_agreement = true;
};

struct JudgeConfig {
    std::string judge_url;
    std::string prompt_template = std::string(kDefaultJudgeTemplate);
    bool both_orders = true;
    RetryPolicy retry;
    double requests_per_second = 0.0;  // 0 = unlimited
    std::size_t max_inflight = 4;
};

namespace detail {

inline void require_placeholder_once(const std::string& tpl, const std::string& ph) {
    const auto first = tpl.find(ph);
    if (first == std::string::npos)
        throw ValidationError("judge template missing placeholder " + ph);
    if (tpl.find(ph, first + 1) != std::string::npos)
        throw ValidationError("judge template contains placeholder " + ph + " more than once");
}

inline std::string replace_once(std::string text, const std::string& ph,
                                const std::string& value) {
    const auto pos = text.find(ph);
    text.replace(pos, ph.size(), value);
    return text;
}

// The verdict protocol: the last non-empty line must be exactly A, B or TIE
// (case-insensitive, surrounding whitespace ignored).
inline std::optional<Winner> parse_verdict(const std::string& text) {
    std::size_t end = text.size();
    while (end > 0) {
        std::size_t start = text.rfind('\n', end - 1);
        const std::size_t line_begin = start == std::string::npos ? 0 : start + 1;
        std::string line = text.substr(line_begin, end - line_begin);
        const auto from = line.find_first_not_of(" \t\r");
        if (from != std::string::npos) {
            const auto to = line.find_last_not_of(" \t\r");
            line = line.substr(from, to - from + 1);
            std::transform(line.begin(), line.end(), line.begin(),
                           [](unsigned char c) { return std::toupper(c); });
            if (line == "A") return Winner::a;
            if (line == "B") return Winner::b;
            if (line == "TIE") return Winner::tie;
            return std::nullopt;
        }
        if (line_begin == 0) break;
        end = line_begin - 1;
    }
    return std::nullopt;
}

}  // namespace detail

inline void validate_judge_template(const std::string& tpl) {
    detail::require_placeholder_once(tpl, "{instruction}");
    detail::require_placeholder_once(tpl, "{response_a}");
    detail::require_placeholder_once(tpl, "{response_b}");
}

inline std::string render_judge_prompt(const std::string& tpl, const std::string& instruction,
                                       const std::string& response_a,
                                       const std::string& response_b) {
    validate_judge_template(tpl);
    std::string out = detail::replace_once(tpl, "{instruction}", instruction);
    out = detail::replace_once(out, "{response_a}", response_a);
    return detail::replace_once(out, "{response_b}", response_b);
}

namespace detail {

// One judge call with a single reprompt on unparseable output.
inline Winner query_judge(const JudgeConfig& cfg, const std::string& prompt) {
    for (int attempt = 0; attempt < 2; ++attempt) {
        const std::string text = judge_completion(cfg.judge_url, prompt, cfg.retry);
        const auto verdict = parse_verdict(text);
        if (verdict) return *verdict;
    }
    throw RuntimeFailure("judge returned unparseable verdicts twice");
}

}  // namespace detail

// Judges one (prompt, A, B) triple. With both_orders the judge is queried a
// second time with the responses swapped; a consistent preference wins,
// disagreement is a tie.
inline Verdict judge_pair(const Prompt& prompt, const std::string& completion_a,
                          const std::string& completion_b, const JudgeConfig& cfg) {
    if (completion_a.empty() || completion_b.empty())
        throw ValidationError("judge_pair: completions must be non-empty (prompt \"" +
                              prompt.id + "\")");
    validate_judge_template(cfg.prompt_template);

    Verdict verdict{prompt.id, prompt.language, Winner::tie, true};
    const Winner first = detail::query_judge(
        cfg, render_judge_prompt(cfg.prompt_template, prompt.text, completion_a, completion_b));
    if (!cfg.both_orders) {
        verdict.winner = first;
        return verdict;
    }
    const Winner swapped = detail::query_judge(
        cfg, render_judge_prompt(cfg.prompt_template, prompt.text, completion_b, completion_a));
    const Winner second = swapped == Winner::a   ? Winner::b
                          : swapped == Winner::b ? Winner::a
                                                 : Winner::tie;
    verdict.order_flipped_agreement = first == second;
    verdict.winner = verdict.order_flipped_agreement ? first : Winner::tie;
    return verdict;
}

struct LanguageCounts {
    std::uint64_t wins = 0;
    std::uint64_t losses = 0;
    std::uint64_t ties = 0;

    std::uint64_t total() const { return wins + losses + ties; }
    // Ties split evenly, which makes WR(A,B) + WR(B,A) == 1 hold exactly.
    double win_rate() const {
        return (static_cast<double>(wins) + 0.5 * static_cast<double>(ties)) /
               static_cast<double>(total());
    }
};

struct WinRateTable {
    std::string model_a;
    std::string model_b;
    std::map<std::string, LanguageCounts> per_language;

    // Unweighted mean of per-language win rates. When every language has the
    // same verdict count (the usual shape for translated eval sets) the mean
    // is computed from aggregated integer counts, which keeps the
    // antisymmetry with the swapped table exact in floating point.
    double macro_average() const {
        if (per_language.empty()) throw ValidationError("win-rate table has no languages");
        bool equal_counts = true;
        std::uint64_t n0 = per_language.begin()->second.total();
        for (const auto& [lang, c] : per_language)
            if (c.total() != n0) equal_counts = false;
        if (equal_counts) {
            std::uint64_t half_units = 0;  // 2*wins + ties per language, summed
            for (const auto& [lang, c] : per_language) half_units += 2 * c.wins + c.ties;
            return static_cast<double>(half_units) /
                   static_cast<double>(2 * n0 * per_language.size());
        }
        double sum = 0.0;
        for (const auto& [lang, c] : per_language) sum += c.win_rate();
        return sum / static_cast<double>(per_language.size());
    }
};

inline WinRateTable win_rate_table(std::span<const Verdict> verdicts, std::string model_a,
                                   std::string model_b) {
    WinRateTable table;
    table.model_a = std::move(model_a);
    table.model_b = std::move(model_b);
    for (const auto& v : verdicts) {
        auto& c = table.per_language[v.language];
        switch (v.winner) {
            case Winner::a: ++c.wins; break;
            case Winner::b: ++c.losses; break;
            case Winner::tie: ++c.ties; break;
        }
    }
    return table;
}

struct MatchResult {
    std::vector<Verdict> verdicts;  // sorted by (language, prompt_id)
    WinRateTable table;
};

// Judges every prompt for which both models provided a completion; missing
// completions on either side are an error listing the prompt ids.
inline MatchResult run_match(std::span<const Prompt> prompts,
                             const std::map<std::string, std::string>& completions_a,
                             const std::map<std::string, std::string>& completions_b,
                             const JudgeConfig& cfg, std::string model_a = "A",
                             std::string model_b = "B") {
    if (prompts.empty()) throw ValidationError("run_match: empty prompt set");
    std::string missing;
    for (const auto& p : prompts) {
        if (!completions_a.contains(p.id)) missing += " A:" + p.id;
        if (!completions_b.contains(p.id)) missing += " B:" + p.id;
    }
    if (!missing.empty())
        throw ValidationError("run_match: missing completions for prompt ids:" + missing);

    RateLimiter limiter(cfg.requests_per_second);
    std::vector<Verdict> verdicts(prompts.size());
    parallel_for(prompts.size(), std::max<std::size_t>(1, cfg.max_inflight), [&](std::size_t i) {
        limiter.acquire();
        verdicts[i] = judge_pair(prompts[i], completions_a.at(prompts[i].id),
                                 completions_b.at(prompts[i].id), cfg);
    });
    std::sort(verdicts.begin(), verdicts.end(), [](const Verdict& x, const Verdict& y) {
        return std::tie(x.language, x.prompt_id) < std::tie(y.language, y.prompt_id);
    });

    MatchResult result;
    result.table = win_rate_table(verdicts, std::move(model_a), std::move(model_b));
    result.verdicts = std::move(verdicts);
    return result;
}

struct SensitivityReport {
    std::map<std::string, double> delta_per_language;  // judge2 - judge1
    double max_abs_delta = 0.0;
    double mean_abs_delta = 0.0;
};

// Compares win rates of the same model pair under two judges.
inline SensitivityReport judge_sensitivity(const WinRateTable& judge1,
                                           const WinRateTable& judge2) {
    if (judge1.model_a != judge2.model_a || judge1.model_b != judge2.model_b)
        throw ValidationError("judge_sensitivity: tables compare different model pairs");
    if (judge1.per_language.size() != judge2.per_language.size())
        throw ValidationError("judge_sensitivity: language sets differ");
    SensitivityReport report;
    double abs_sum = 0.0;
    for (const auto& [lang, c1] : judge1.per_language) {
        const auto it = judge2.per_language.find(lang);
        if (it == judge2.per_language.end())
            throw ValidationError("judge_sensitivity: language \"" + lang +
                                  "\" missing from second table");
        const double delta = it->second.win_rate() - c1.win_rate();
        report.delta_per_language[lang] = delta;
        report.max_abs_delta = std::max(report.max_abs_delta, std::fabs(delta));
        abs_sum += std::fabs(delta);
    }
    report.mean_abs_delta = abs_sum / static_cast<double>(judge1.per_language.size());
    return report;
}

// Builds a multilingual evaluation set by machine-translating English
// prompts into each target language. English rows pass through untouched;
// translated rows get "<id>-<lang>" ids. Output order: input prompt order,
// then the given language order.
inline std::vector<Prompt> build_eval_set(std::span<const Prompt> english_prompts,
                                          const std::string& translate_url,
                                          std::span<const std::string> languages,
                                          const RetryPolicy& retry = {},
                                          std::size_t max_inflight = 4) {
    if (english_prompts.empty()) throw ValidationError("build_eval_set: empty prompt set");
    if (languages.empty()) throw ValidationError("build_eval_set: empty language list");
    std::set<std::string> ids;
    for (const auto& p : english_prompts) {
        if (p.language != "en")
            throw ValidationError("build_eval_set: prompt \"" + p.id + "\" is not English");
        if (!ids.insert(p.id).second)
            throw ValidationError("build_eval_set: duplicate prompt id \"" + p.id + "\"");
    }
    for (const auto& lang : languages)
        if (!is_supported_language(lang))
            throw ValidationError("build_eval_set: unsupported language \"" + lang + "\"");

    const std::size_t total = english_prompts.size() * languages.size();
    std::vector<Prompt> out(total);
    parallel_for(total, std::max<std::size_t>(1, max_inflight), [&](std::size_t task) {
        const Prompt& src = english_prompts[task / languages.size()];
        const std::string& lang = languages[task % languages.size()];
        if (lang == "en") {
            out[task] = src;
            return;
        }
        std::string translated = translate_text(translate_url, src.text, "en", lang, retry);
        if (translated.empty())
            throw RuntimeFailure("build_eval_set: empty translation for prompt \"" + src.id +
                                 "\", language \"" + lang + "\"");
        out[task] = Prompt{src.id + "-" + lang, lang, std::move(translated)};
    });
    return out;
}

// --- persistence ---

inline nlohmann::json verdict_to_json(const Verdict& v) {
    return {{"prompt_id", v.prompt_id},
            {"language", v.language},
            {"winner", std::string(winner_name(v.winner))},
            {"order_flipped_agreement", v.order_flipped_agreement}};
}

inline nlohmann::json win_rate_table_to_json(const WinRateTable& t) {
    nlohmann::json langs = nlohmann::json::object();
    for (const auto& [lang, c] : t.per_language)
        langs[lang] = {{"wins", c.wins},
                       {"losses", c.losses},
                       {"ties", c.ties},
                       {"win_rate", c.win_rate()}};
    return {{"model_a", t.model_a},
            {"model_b", t.model_b},
            {"per_language", langs},
            {"macro_average", t.macro_average()}};
}

inline WinRateTable win_rate_table_from_json(const nlohmann::json& j) {
    WinRateTable t;
    t.model_a = j.at("model_a").get<std::string>();
    t.model_b = j.at("model_b").get<std::string>();
    for (const auto& [lang, c] : j.at("per_language").items())
        t.per_language[lang] = {c.at("wins").get<std::uint64_t>(),
                                c.at("losses").get<std::uint64_t>(),
                                c.at("ties").get<std::uint64_t>()};
    return t;
}

// Plot-ready summary: per-language win/loss/tie percentages.
inline std::string win_rate_table_to_csv(const WinRateTable& t) {
    std::string csv = "language,wins,losses,ties,win_pct,loss_pct,tie_pct\n";
    char line[160];
    for (const auto& [lang, c] : t.per_language) {
        const double n = static_cast<double>(c.total());
        std::snprintf(line, sizeof(line), "%s,%llu,%llu,%llu,%.2f,%.2f,%.2f\n", lang.c_str(),
                      static_cast<unsigned long long>(c.wins),
                      static_cast<unsigned long long>(c.losses),
                      static_cast<unsigned long long>(c.ties),
                      100.0 * static_cast<double>(c.wins) / n,
                      100.0 * static_cast<double>(c.losses) / n,
                      100.0 * static_cast<double>(c.ties) / n);
        csv += line;
    }
    return csv;
}

}  // namespace polytune
