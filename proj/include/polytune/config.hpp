// Copyright (c) 2026 The Polytune Authors
// SPDX-License-Identifier: Apache-2.0
//
// Config parsing and validation for merge recipes and pipelines. Parsing is
// fail-fast: the first violation raises a ValidationError whose message
// carries the JSON locus (e.g. "stages[2].t").

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "polytune/error.hpp"
#include "polytune/http_client.hpp"
#include "polytune/io.hpp"
#include "polytune/languages.hpp"
#include "polytune/merge.hpp"
#include "polytune/prefs.hpp"

namespace polytune {

// ---------------------------------------------------------------------------
// Merge recipes
// ---------------------------------------------------------------------------

enum class MergeMethod { linear, slerp, ties, dare_ties };

inline std::string_view merge_method_name(MergeMethod m) {
    switch (m) {
        case MergeMethod::linear: return "linear";
        case MergeMethod::slerp: return "slerp";
        case MergeMethod::ties: return "ties";
        case MergeMethod::dare_ties: return "dare_ties";
    }
    return "";
}

struct MergeRecipe {
    MergeMethod method = MergeMethod::linear;
    std::vector<std::string> inputs;      // checkpoint paths
    std::optional<std::string> base;      // required for ties / dare_ties
    std::vector<double> weights;          // linear; defaults to all-ones
    double t = 0.5;                       // slerp
    double density = 1.0;                 // ties family
    double lambda = 1.0;                  // ties family
    double drop_p = 0.0;                  // dare_ties
    std::uint64_t seed = 0;               // dare_ties
};

namespace detail {

[[noreturn]] inline void config_error(const std::string& locus, const std::string& message) {
    throw ValidationError(locus + ": " + message);
}

inline const nlohmann::json& require_field(const nlohmann::json& j, const char* key,
                                           const std::string& locus) {
    if (!j.is_object() || !j.contains(key))
        config_error(locus, std::string("missing required field \"") + key + "\"");
    return j.at(key);
}

inline std::string require_string(const nlohmann::json& j, const char* key,
                                  const std::string& locus) {
    const auto& v = require_field(j, key, locus);
    if (!v.is_string()) config_error(locus + "." + key, "must be a string");
    return v.get<std::string>();
}

inline double number_or(const nlohmann::json& j, const char* key, double fallback,
                        const std::string& locus) {
    if (!j.is_object() || !j.contains(key)) return fallback;
    if (!j.at(key).is_number()) config_error(locus + "." + key, "must be a number");
    return j.at(key).get<double>();
}

}  // namespace detail

inline void validate_merge_recipe(const MergeRecipe& r, const std::string& locus = "recipe") {
    using detail::config_error;
    if (r.inputs.empty()) config_error(locus + ".inputs", "need at least one input");
    switch (r.method) {
        case MergeMethod::linear:
            if (r.weights.size() != r.inputs.size())
                config_error(locus + ".weights",
                             std::to_string(r.weights.size()) + " weights for " +
                                 std::to_string(r.inputs.size()) + " inputs");
            {
                double sum = 0.0;
                for (double w : r.weights) {
                    if (!(w >= 0.0) || !std::isfinite(w))
                        config_error(locus + ".weights", "weights must be finite and >= 0");
                    sum += w;
                }
                if (!(sum > 0.0)) config_error(locus + ".weights", "weights must not all be zero");
            }
            break;
        case MergeMethod::slerp:
            if (r.inputs.size() != 2)
                config_error(locus + ".inputs", "slerp requires exactly 2 inputs, got " +
                                                    std::to_string(r.inputs.size()));
            if (!(r.t >= 0.0 && r.t <= 1.0)) config_error(locus + ".t", "must be in [0, 1]");
            break;
        case MergeMethod::dare_ties:
            if (!(r.drop_p >= 0.0 && r.drop_p < 1.0))
                config_error(locus + ".drop_p", "must be in [0, 1)");
            [[fallthrough]];
        case MergeMethod::ties:
            if (!r.base) config_error(locus + ".base", "ties-family merges require a base checkpoint");
            for (const auto& input : r.inputs)
                if (input == *r.base)
                    config_error(locus + ".inputs", "base checkpoint must not appear in inputs");
            if (!(r.density > 0.0 && r.density <= 1.0))
                config_error(locus + ".density", "must be in (0, 1]");
            if (!(r.lambda > 0.0) || !std::isfinite(r.lambda))
                config_error(locus + ".lambda", "must be positive and finite");
            break;
    }
}

inline MergeRecipe parse_merge_recipe(const nlohmann::json& j,
                                      const std::string& locus = "recipe") {
    using detail::config_error;
    MergeRecipe r;
    const auto method = detail::require_string(j, "method", locus);
    if (method == "linear")
        r.method = MergeMethod::linear;
    else if (method == "slerp")
        r.method = MergeMethod::slerp;
    else if (method == "ties")
        r.method = MergeMethod::ties;
    else if (method == "dare_ties")
        r.method = MergeMethod::dare_ties;
    else
        config_error(locus + ".method", "unknown merge method \"" + method + "\"");

    const auto& inputs = detail::require_field(j, "inputs", locus);
    if (!inputs.is_array()) config_error(locus + ".inputs", "must be an array of paths");
    for (const auto& p : inputs) {
        if (!p.is_string()) config_error(locus + ".inputs", "must be an array of paths");
        r.inputs.push_back(p.get<std::string>());
    }
    if (j.contains("base")) {
        if (!j.at("base").is_string()) config_error(locus + ".base", "must be a path");
        r.base = j.at("base").get<std::string>();
    }
    if (j.contains("weights")) {
        if (!j.at("weights").is_array()) config_error(locus + ".weights", "must be an array");
        for (const auto& w : j.at("weights")) {
            if (!w.is_number()) config_error(locus + ".weights", "must be numbers");
            r.weights.push_back(w.get<double>());
        }
    } else if (r.method == MergeMethod::linear) {
        r.weights.assign(r.inputs.size(), 1.0);
    }
    r.t = detail::number_or(j, "t", r.t, locus);
    r.density = detail::number_or(j, "density", r.density, locus);
    r.lambda = detail::number_or(j, "lambda", r.lambda, locus);
    r.drop_p = detail::number_or(j, "drop_p", r.drop_p, locus);
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_integer()) config_error(locus + ".seed", "must be an integer");
        r.seed = j.at("seed").get<std::uint64_t>();
    }
    validate_merge_recipe(r, locus);
    return r;
}

inline nlohmann::json merge_recipe_to_json(const MergeRecipe& r) {
    nlohmann::json j = {{"method", std::string(merge_method_name(r.method))},
                        {"inputs", r.inputs}};
    if (r.base) j["base"] = *r.base;
    switch (r.method) {
        case MergeMethod::linear: j["weights"] = r.weights; break;
        case MergeMethod::slerp: j["t"] = r.t; break;
        case MergeMethod::dare_ties:
            j["drop_p"] = r.drop_p;
            j["seed"] = r.seed;
            [[fallthrough]];
        case MergeMethod::ties:
            j["density"] = r.density;
            j["lambda"] = r.lambda;
            break;
    }
    return j;
}

// Loads the referenced checkpoints (relative paths resolve against
// `base_dir`) and dispatches to the merge kernel.
inline Checkpoint apply_merge_recipe(const MergeRecipe& recipe,
                                     const std::filesystem::path& base_dir = {}) {
    validate_merge_recipe(recipe);
    auto resolve = [&](const std::string& p) {
        std::filesystem::path path(p);
        return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };
    std::vector<Checkpoint> inputs;
    inputs.reserve(recipe.inputs.size());
    for (const auto& p : recipe.inputs) inputs.push_back(read_checkpoint(resolve(p)));
    switch (recipe.method) {
        case MergeMethod::linear:
            return linear_merge(inputs, recipe.weights);
        case MergeMethod::slerp:
            return slerp_merge(inputs[0], inputs[1], recipe.t);
        case MergeMethod::ties: {
            const Checkpoint base = read_checkpoint(resolve(*recipe.base));
            return ties_merge(base, inputs, recipe.density, recipe.lambda);
        }
        case MergeMethod::dare_ties: {
            const Checkpoint base = read_checkpoint(resolve(*recipe.base));
            return dare_ties_merge(base, inputs, recipe.drop_p, recipe.density, recipe.lambda,
                                   recipe.seed);
        }
    }
    throw ValidationError("unreachable merge method");
}

// ---------------------------------------------------------------------------
// Endpoints
// ---------------------------------------------------------------------------

struct EndpointsConfig {
    std::vector<GeneratorEndpoint> generators;
    std::string reward_url;
    std::string judge_url;
    std::string translate_url;
};

inline EndpointsConfig parse_endpoints(const nlohmann::json& j,
                                       const std::string& locus = "endpoints") {
    using detail::config_error;
    EndpointsConfig cfg;
    if (j.contains("generators")) {
        if (!j.at("generators").is_array()) config_error(locus + ".generators", "must be an array");
        std::set<std::string> ids;
        std::size_t i = 0;
        for (const auto& g : j.at("generators")) {
            const std::string g_locus = locus + ".generators[" + std::to_string(i++) + "]";
            GeneratorEndpoint ep;
            ep.model_id = detail::require_string(g, "model_id", g_locus);
            ep.url = detail::require_string(g, "url", g_locus);
            ep.params.temperature = detail::number_or(g, "temperature", 0.7, g_locus);
            ep.params.max_tokens =
                static_cast<int>(detail::number_or(g, "max_tokens", 256, g_locus));
            if (ep.params.temperature < 0.0)
                config_error(g_locus + ".temperature", "must be >= 0");
            if (ep.params.max_tokens <= 0) config_error(g_locus + ".max_tokens", "must be > 0");
            if (!ids.insert(ep.model_id).second)
                config_error(g_locus + ".model_id", "duplicate model id \"" + ep.model_id + "\"");
            cfg.generators.push_back(std::move(ep));
        }
    }
    if (j.contains("reward_url")) cfg.reward_url = j.at("reward_url").get<std::string>();
    if (j.contains("judge_url")) cfg.judge_url = j.at("judge_url").get<std::string>();
    if (j.contains("translate_url")) cfg.translate_url = j.at("translate_url").get<std::string>();
    return cfg;
}

inline nlohmann::json endpoints_to_json(const EndpointsConfig& cfg) {
    nlohmann::json gens = nlohmann::json::array();
    for (const auto& g : cfg.generators)
        gens.push_back({{"model_id", g.model_id},
                        {"url", g.url},
                        {"temperature", g.params.temperature},
                        {"max_tokens", g.params.max_tokens}});
    return {{"generators", gens},
            {"reward_url", cfg.reward_url},
            {"judge_url", cfg.judge_url},
            {"translate_url", cfg.translate_url}};
}

// ---------------------------------------------------------------------------
// Pipeline config
// ---------------------------------------------------------------------------

enum class StageType { arbitrage, merge, prefs_offline, prefs_online, dpo_train, eval_winrate };

inline std::string_view stage_type_name(StageType t) {
    switch (t) {
        case StageType::arbitrage: return "arbitrage";
        case StageType::merge: return "merge";
        case StageType::prefs_offline: return "prefs_offline";
        case StageType::prefs_online: return "prefs_online";
        case StageType::dpo_train: return "dpo_train";
        case StageType::eval_winrate: return "eval_winrate";
    }
    return "";
}

inline std::optional<StageType> parse_stage_type(std::string_view s) {
    if (s == "arbitrage") return StageType::arbitrage;
    if (s == "merge") return StageType::merge;
    if (s == "prefs_offline") return StageType::prefs_offline;
    if (s == "prefs_online") return StageType::prefs_online;
    if (s == "dpo_train") return StageType::dpo_train;
    if (s == "eval_winrate") return StageType::eval_winrate;
    return std::nullopt;
}

struct StageConfig {
    StageType type = StageType::arbitrage;
    std::string name;
    nlohmann::json params;  // normalized stage parameters (everything but type/name)
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    std::size_t max_inflight = 4;
    std::optional<ClusterConfig> clusters;
    EndpointsConfig endpoints;
    RetryPolicy retry;
    std::vector<StageConfig> stages;
    // Directory of the config file; relative input paths that do not exist
    // under the run's out-dir resolve against it. Not part of the canonical
    // JSON form.
    std::filesystem::path base_dir;
};

namespace detail {

inline RetryPolicy parse_retry(const nlohmann::json& j, const std::string& locus) {
    RetryPolicy retry;
    retry.max_attempts = static_cast<int>(number_or(j, "max_attempts", 3, locus));
    retry.initial_backoff =
        std::chrono::milliseconds(static_cast<long>(number_or(j, "initial_backoff_ms", 250, locus)));
    retry.backoff_multiplier = number_or(j, "backoff_multiplier", 2.0, locus);
    if (retry.max_attempts < 1) config_error(locus + ".max_attempts", "must be >= 1");
    if (retry.initial_backoff.count() < 0)
        config_error(locus + ".initial_backoff_ms", "must be >= 0");
    if (!(retry.backoff_multiplier >= 1.0))
        config_error(locus + ".backoff_multiplier", "must be >= 1");
    return retry;
}

// Per-type validation and normalization of stage params.
inline void validate_stage_params(const PipelineConfig& cfg, StageConfig& stage,
                                  const std::string& locus,
                                  std::vector<std::string>* warnings) {
    auto& p = stage.params;
    switch (stage.type) {
        case StageType::arbitrage: {
            require_string(p, "prompts", locus);
            if (p.contains("cluster")) {
                const auto cluster = p.at("cluster").get<std::string>();
                if (!cfg.clusters)
                    config_error(locus + ".cluster", "no clusters configured");
                const auto& cs = cfg.clusters->clusters;
                if (std::none_of(cs.begin(), cs.end(),
                                 [&](const auto& c) { return c.name == cluster; }))
                    config_error(locus + ".cluster", "unknown cluster \"" + cluster + "\"");
            }
            if (cfg.endpoints.generators.empty())
                config_error(locus, "arbitrage stage needs endpoints.generators");
            if (cfg.endpoints.reward_url.empty())
                config_error(locus, "arbitrage stage needs endpoints.reward_url");
            break;
        }
        case StageType::merge:
            parse_merge_recipe(require_field(p, "recipe", locus), locus + ".recipe");
            break;
        case StageType::prefs_offline:
            require_string(p, "candidates", locus);
            break;
        case StageType::prefs_online: {
            require_string(p, "prompts", locus);
            const auto model = require_string(p, "policy_model_id", locus);
            const auto& gens = cfg.endpoints.generators;
            if (std::none_of(gens.begin(), gens.end(),
                             [&](const auto& g) { return g.model_id == model; }))
                config_error(locus + ".policy_model_id", "unknown model \"" + model + "\"");
            OnlineRoundConfig rc;
            rc.samples_per_prompt = static_cast<int>(number_or(p, "samples_per_prompt", 4, locus));
            rc.n_iterations = static_cast<int>(number_or(p, "n_iterations", 3, locus));
            const int iteration = static_cast<int>(number_or(p, "iteration", 1, locus));
            if (rc.samples_per_prompt < 2)
                config_error(locus + ".samples_per_prompt", "must be >= 2");
            if (rc.n_iterations < 1) config_error(locus + ".n_iterations", "must be >= 1");
            if (rc.n_iterations > rc.max_n_iterations) {
                if (warnings)
                    warnings->push_back(locus + ".n_iterations: " +
                                        std::to_string(rc.n_iterations) + " capped at " +
                                        std::to_string(rc.max_n_iterations));
                rc.n_iterations = rc.max_n_iterations;
                p["n_iterations"] = rc.n_iterations;
            } else if (rc.n_iterations > 3 && warnings) {
                warnings->push_back(locus + ".n_iterations: more than 3 iterations rarely "
                                            "helps and risks reward hacking");
            }
            if (iteration < 1 || iteration > rc.n_iterations)
                config_error(locus + ".iteration", "must be in [1, n_iterations]");
            p["samples_per_prompt"] = rc.samples_per_prompt;
            p["n_iterations"] = rc.n_iterations;
            p["iteration"] = iteration;
            if (cfg.endpoints.reward_url.empty())
                config_error(locus, "online stage needs endpoints.reward_url");
            break;
        }
        case StageType::dpo_train: {
            require_string(p, "pairs", locus);
            require_string(p, "candidates", locus);
            const double beta = number_or(p, "beta", 0.1, locus);
            const double lr = number_or(p, "learning_rate", 0.01, locus);
            const int steps = static_cast<int>(number_or(p, "steps", 100, locus));
            if (!(beta > 0.0)) config_error(locus + ".beta", "must be > 0");
            if (!(lr > 0.0)) config_error(locus + ".learning_rate", "must be > 0");
            if (steps < 0) config_error(locus + ".steps", "must be >= 0");
            p["beta"] = beta;
            p["learning_rate"] = lr;
            p["steps"] = steps;
            break;
        }
        case StageType::eval_winrate: {
            require_string(p, "prompts", locus);
            for (const char* side : {"completions_a", "completions_b"}) {
                const auto& c = require_field(p, side, locus);
                if (c.is_string()) continue;
                if (c.is_object()) {
                    require_string(c, "path", locus + "." + side);
                    continue;
                }
                config_error(locus + "." + side, "must be a path or {path, model_id}");
            }
            if (cfg.endpoints.judge_url.empty())
                config_error(locus, "eval stage needs endpoints.judge_url");
            break;
        }
    }
}

}  // namespace detail

inline PipelineConfig parse_pipeline_config(const nlohmann::json& j,
                                            std::vector<std::string>* warnings = nullptr) {
    using detail::config_error;
    PipelineConfig cfg;
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_integer()) config_error("seed", "must be an integer");
        cfg.seed = j.at("seed").get<std::uint64_t>();
    }
    cfg.max_inflight =
        static_cast<std::size_t>(detail::number_or(j, "max_inflight", 4, "max_inflight"));
    if (cfg.max_inflight == 0) config_error("max_inflight", "must be >= 1");

    if (j.contains("clusters")) {
        ClusterConfig cc;
        if (j.contains("shared_languages")) {
            cc.shared_languages.clear();
            for (const auto& l : j.at("shared_languages"))
                cc.shared_languages.push_back(l.get<std::string>());
        }
        if (!j.at("clusters").is_array()) config_error("clusters", "must be an array");
        for (const auto& c : j.at("clusters")) {
            ClusterConfig::Cluster cluster;
            cluster.name = detail::require_string(c, "name", "clusters");
            const auto& langs = detail::require_field(c, "languages", "clusters");
            for (const auto& l : langs) cluster.languages.push_back(l.get<std::string>());
            cc.clusters.push_back(std::move(cluster));
        }
        validate_clusters(cc);
        cfg.clusters = std::move(cc);
    }

    if (j.contains("endpoints")) cfg.endpoints = parse_endpoints(j.at("endpoints"));
    if (j.contains("retry")) cfg.retry = detail::parse_retry(j.at("retry"), "retry");

    const auto& stages = detail::require_field(j, "stages", "config");
    if (!stages.is_array() || stages.empty())
        config_error("stages", "must be a non-empty array");

    std::set<std::string> names;
    bool seen_offline = false;
    std::size_t index = 0;
    for (const auto& s : stages) {
        const std::string locus = "stages[" + std::to_string(index) + "]";
        const auto type_name = detail::require_string(s, "type", locus);
        const auto type = parse_stage_type(type_name);
        if (!type) config_error(locus + ".type", "unknown stage type \"" + type_name + "\"");

        StageConfig stage;
        stage.type = *type;
        stage.name = s.contains("name") ? s.at("name").get<std::string>()
                                        : type_name + "_" + std::to_string(index);
        if (stage.name.empty()) config_error(locus + ".name", "must be non-empty");
        if (!names.insert(stage.name).second)
            config_error(locus + ".name", "duplicate stage name \"" + stage.name + "\"");
        stage.params = s;
        stage.params.erase("type");
        stage.params.erase("name");

        if (stage.type == StageType::prefs_offline) seen_offline = true;
        if (stage.type == StageType::prefs_online && !seen_offline)
            config_error(locus, "online preference stage before any offline preference stage");

        detail::validate_stage_params(cfg, stage, locus, warnings);
        cfg.stages.push_back(std::move(stage));
        ++index;
    }
    return cfg;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path,
                                           std::vector<std::string>* warnings = nullptr) {
    PipelineConfig cfg = parse_pipeline_config(read_json_file(path), warnings);
    cfg.base_dir = std::filesystem::absolute(path).parent_path();
    return cfg;
}

// Canonical JSON form: defaults materialized, fields sorted by nlohmann's
// object ordering. parse(to_json(parse(x))) == parse(x).
inline nlohmann::json pipeline_config_to_json(const PipelineConfig& cfg) {
    nlohmann::json j;
    j["seed"] = cfg.seed;
    j["max_inflight"] = cfg.max_inflight;
    if (cfg.clusters) {
        nlohmann::json clusters = nlohmann::json::array();
        for (const auto& c : cfg.clusters->clusters)
            clusters.push_back({{"name", c.name}, {"languages", c.languages}});
        j["clusters"] = clusters;
        j["shared_languages"] = cfg.clusters->shared_languages;
    }
    j["endpoints"] = endpoints_to_json(cfg.endpoints);
    j["retry"] = {{"max_attempts", cfg.retry.max_attempts},
                  {"initial_backoff_ms", cfg.retry.initial_backoff.count()},
                  {"backoff_multiplier", cfg.retry.backoff_multiplier}};
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : cfg.stages) {
        nlohmann::json stage = s.params;
        stage["type"] = std::string(stage_type_name(s.type));
        stage["name"] = s.name;
        stages.push_back(stage);
    }
    j["stages"] = stages;
    return j;
}

}  // namespace polytune
