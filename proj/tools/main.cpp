// Copyright (c) 2026 The Polytune Authors
// SPDX-License-Identifier: Apache-2.0
//
// polytune: post-training pipeline toolkit CLI.
//
// Exit codes: 0 success, 1 validation/config error, 2 runtime failure.

#include <cmath>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "polytune/arbitrage.hpp"
#include "polytune/chrf.hpp"
#include "polytune/config.hpp"
#include "polytune/dpo.hpp"
#include "polytune/judge.hpp"
#include "polytune/pipeline.hpp"
#include "polytune/prefs.hpp"

namespace {

using nlohmann::json;
using namespace polytune;

struct CommonFlags {
    std::string out_dir = ".";
    std::uint64_t seed = 0;
    std::size_t max_inflight = 4;
    bool mock_endpoints = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool with_out_dir = true) {
    if (with_out_dir) cmd->add_option("--out-dir", flags.out_dir, "Output directory");
    cmd->add_option("--seed", flags.seed, "Deterministic seed");
    cmd->add_option("--max-inflight", flags.max_inflight, "Concurrent requests bound")
        ->check(CLI::PositiveNumber);
    cmd->add_flag("--mock-endpoints", flags.mock_endpoints,
                  "Serve deterministic in-process mock endpoints instead of the configured URLs");
}

EndpointsConfig load_endpoints(const std::string& path, bool mock, MockFleet& fleet) {
    EndpointsConfig endpoints = parse_endpoints(read_json_file(path));
    if (mock) {
        fleet = MockFleet::start(endpoints);
        return fleet.rewrite(endpoints);
    }
    return endpoints;
}

RetryPolicy default_retry(bool mock) {
    RetryPolicy retry;
    if (mock) retry.initial_backoff = std::chrono::milliseconds(1);
    return retry;
}

// --- ckpt ---

int cmd_ckpt_inspect(const std::string& path, bool as_json) {
    const Checkpoint ckpt = read_checkpoint(path);
    if (as_json) {
        json tensors = json::object();
        for (const auto& [name, t] : ckpt.tensors)
            tensors[name] = {{"dtype", dtype_tag(t.dtype)},
                             {"shape", t.shape},
                             {"bytes", t.data.size()}};
        std::cout << json{{"tensors", tensors}, {"meta", ckpt.provenance}}.dump(2) << "\n";
        return 0;
    }
    for (const auto& [name, t] : ckpt.tensors) {
        std::cout << name << "  " << dtype_tag(t.dtype) << "  [";
        for (std::size_t i = 0; i < t.shape.size(); ++i)
            std::cout << (i ? ", " : "") << t.shape[i];
        std::cout << "]  " << t.data.size() << " bytes\n";
    }
    for (const auto& [k, v] : ckpt.provenance) std::cout << "meta " << k << " = " << v << "\n";
    std::cout << ckpt.tensors.size() << " tensors\n";
    return 0;
}

int cmd_ckpt_diff(const std::string& path_a, const std::string& path_b) {
    const Checkpoint a = read_checkpoint(path_a);
    const Checkpoint b = read_checkpoint(path_b);
    try {
        validate_compatible(a, b);
    } catch (const ValidationError& e) {
        std::cout << "structure differs: " << e.what() << "\n";
        return 0;
    }
    double worst = 0.0;
    for (const auto& [name, ta] : a.tensors) {
        const auto va = tensor_to_f32(ta);
        const auto vb = tensor_to_f32(b.at(name));
        double max_diff = 0.0;
        std::size_t differing = 0;
        for (std::size_t j = 0; j < va.size(); ++j) {
            const double d = std::fabs(static_cast<double>(va[j]) - vb[j]);
            if (va[j] != vb[j]) ++differing;
            max_diff = std::max(max_diff, d);
        }
        std::cout << name << "  max_abs_diff=" << max_diff << "  differing=" << differing << "/"
                  << va.size() << "\n";
        worst = std::max(worst, max_diff);
    }
    std::cout << "overall max_abs_diff=" << worst << "\n";
    return 0;
}

// --- merge ---

int cmd_merge_apply(const std::string& recipe_path, const std::string& out_path,
                    const std::string& base_dir) {
    const MergeRecipe recipe = parse_merge_recipe(read_json_file(recipe_path));
    Checkpoint merged = apply_merge_recipe(recipe, base_dir);
    merged.provenance["merge_method"] = std::string(merge_method_name(recipe.method));
    write_checkpoint(merged, out_path);
    std::cout << "merged " << recipe.inputs.size() << " checkpoints -> " << out_path << " ("
              << merged.tensors.size() << " tensors)\n";
    return 0;
}

// --- arbitrage ---

int cmd_arbitrage_run(const std::string& prompts_path, const std::string& endpoints_path,
                      const CommonFlags& flags) {
    MockFleet fleet;
    const EndpointsConfig endpoints =
        load_endpoints(endpoints_path, flags.mock_endpoints, fleet);
    if (endpoints.generators.empty())
        throw ValidationError("endpoints config has no generators");
    if (endpoints.reward_url.empty())
        throw ValidationError("endpoints config has no reward_url");

    ArbitrageConfig cfg;
    cfg.pool = endpoints.generators;
    cfg.reward_url = endpoints.reward_url;
    cfg.retry = default_retry(flags.mock_endpoints);
    cfg.max_inflight = flags.max_inflight;
    cfg.seed = flags.seed;

    const auto prompts = load_prompts(prompts_path);
    const std::filesystem::path out(flags.out_dir);
    std::filesystem::create_directories(out);
    const auto summary = build_arbitrage_dataset(
        prompts, cfg,
        {out / "dataset.jsonl", out / "candidates.jsonl", out / "skipped.jsonl"});
    std::cout << "routed " << summary.dataset_rows << " prompts, skipped "
              << summary.skipped_prompts << ", candidate rows " << summary.candidate_rows
              << "\n";
    return 0;
}

// --- prefs ---

int cmd_prefs_offline(const std::string& candidates_path, const CommonFlags& flags) {
    const auto log = load_candidate_log(candidates_path);
    const auto extraction = offline_pairs(log);
    const std::filesystem::path out(flags.out_dir);
    std::filesystem::create_directories(out);
    write_pairs(out / "pairs.jsonl", extraction.pairs);
    write_skips(out / "skipped.jsonl", extraction.skipped);
    std::cout << "offline pairs: " << extraction.pairs.size() << ", skipped "
              << extraction.skipped.size() << "\n";
    return 0;
}

int cmd_prefs_online(const std::string& prompts_path, const std::string& endpoints_path,
                     const std::string& policy_model, int iteration, int samples,
                     int n_iterations, const CommonFlags& flags) {
    MockFleet fleet;
    const EndpointsConfig endpoints =
        load_endpoints(endpoints_path, flags.mock_endpoints, fleet);
    const GeneratorEndpoint* policy = nullptr;
    for (const auto& g : endpoints.generators)
        if (g.model_id == policy_model) policy = &g;
    if (policy == nullptr)
        throw ValidationError("policy model \"" + policy_model + "\" not in endpoints config");

    OnlineRoundConfig cfg;
    cfg.samples_per_prompt = samples;
    cfg.n_iterations = n_iterations;
    if (n_iterations > 3)
        std::cerr << "warning: more than 3 online iterations rarely helps and risks reward "
                     "hacking\n";

    const auto prompts = load_prompts(prompts_path);
    const auto result = online_round(*policy, endpoints.reward_url, prompts, cfg, iteration,
                                     default_retry(flags.mock_endpoints), flags.max_inflight,
                                     flags.seed);
    const std::filesystem::path out(flags.out_dir);
    std::filesystem::create_directories(out);
    write_pairs(out / "pairs.jsonl", result.pairs);
    write_skips(out / "skipped.jsonl", result.skipped);
    write_candidate_log(out / "candidates.jsonl", result.candidates);
    write_json_file(out / "stats.json", stats_to_json(result.stats));
    std::cout << "online iteration " << iteration << ": " << result.pairs.size()
              << " pairs, skipped " << result.skipped.size() << ", mean chosen reward "
              << result.stats.mean_chosen_reward << "\n";
    return 0;
}

// --- dpo ---

int cmd_dpo_train(const std::string& pairs_path, const std::string& mapping_path,
                  const std::string& init_policy_path, double beta, double learning_rate,
                  int steps, const CommonFlags& flags) {
    const auto pairs = load_pairs(pairs_path);
    const json mapping = read_json_file(mapping_path);
    const auto num_prompts = mapping.at("num_prompts").get<std::size_t>();
    const auto num_candidates = mapping.at("num_candidates").get<std::size_t>();

    std::map<std::string, IndexedPair> by_prompt;
    for (const auto& entry : mapping.at("pairs"))
        by_prompt[entry.at("prompt_id").get<std::string>()] = {
            entry.at("row").get<std::size_t>(), entry.at("chosen").get<std::size_t>(),
            entry.at("rejected").get<std::size_t>()};

    std::vector<IndexedPair> indexed;
    for (const auto& p : pairs) {
        const auto it = by_prompt.find(p.prompt_id);
        if (it == by_prompt.end())
            throw ValidationError("pair prompt \"" + p.prompt_id + "\" missing from mapping");
        indexed.push_back(it->second);
    }

    TabularPolicy policy(num_prompts, num_candidates);
    if (!init_policy_path.empty()) {
        const json init = read_json_file(init_policy_path);
        const auto rows = init.at("rows").get<std::size_t>();
        const auto cols = init.at("cols").get<std::size_t>();
        if (rows != num_prompts || cols != num_candidates)
            throw ValidationError("initial policy shape does not match the mapping");
        for (std::size_t p = 0; p < rows; ++p)
            for (std::size_t k = 0; k < cols; ++k)
                policy.logit(p, k) = init.at("logits").at(p).at(k).get<double>();
    }

    DpoConfig cfg{beta, learning_rate, steps};
    const TabularPolicy reference = policy;
    const auto result = train_dpo(policy, indexed, cfg);

    const std::filesystem::path out(flags.out_dir);
    std::filesystem::create_directories(out);
    json logits = json::array();
    for (std::size_t p = 0; p < result.policy.rows(); ++p) {
        json row = json::array();
        for (std::size_t k = 0; k < result.policy.cols(); ++k)
            row.push_back(result.policy.logit(p, k));
        logits.push_back(row);
    }
    write_json_file(out / "policy.json", {{"rows", result.policy.rows()},
                                          {"cols", result.policy.cols()},
                                          {"logits", logits}});
    std::vector<json> trace_rows;
    for (std::size_t s = 0; s < result.trace.size(); ++s)
        trace_rows.push_back({{"step", s}, {"mean_loss", result.trace[s]}});
    write_jsonl(out / "trace.jsonl", trace_rows);
    const double final_loss = mean_dpo_loss(result.policy, reference, indexed, beta);
    write_json_file(out / "summary.json",
                    {{"steps", steps},
                     {"initial_loss", result.trace.empty() ? final_loss : result.trace.front()},
                     {"final_loss", final_loss}});
    std::cout << "trained " << steps << " steps on " << indexed.size() << " pairs; loss "
              << (result.trace.empty() ? final_loss : result.trace.front()) << " -> "
              << final_loss << "\n";
    return 0;
}

int cmd_dpo_check(std::uint64_t seed, double eps) {
    std::size_t checked = 0;
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
        const std::size_t rows = 1 + (seed + i) % 3, cols = 2 + (seed + i) % 3;
        const auto policy = TabularPolicy::random(rows, cols, seed + 17 * i, 1.5);
        const auto reference = TabularPolicy::random(rows, cols, seed + 17 * i + 9, 1.5);
        std::vector<IndexedPair> pairs;
        for (std::size_t r = 0; r < rows; ++r)
            pairs.push_back({r, (seed + i) % cols, ((seed + i) % cols + 1) % cols});
        const double beta = 0.1 + 0.2 * static_cast<double>(i);
        worst = std::max(worst, finite_diff_check(policy, reference, pairs, beta, eps));
        ++checked;
    }
    std::cout << "finite-difference check over " << checked << " instances: max relative error "
              << worst << "\n";
    if (worst > 1e-5) {
        std::cerr << "gradient check FAILED (tolerance 1e-5)\n";
        return 2;
    }
    return 0;
}

// --- eval ---

std::map<std::string, std::string> load_completions(const std::string& path,
                                                    const std::string& model_filter) {
    std::map<std::string, std::string> completions;
    for (const auto& row : read_jsonl(path)) {
        if (!model_filter.empty() && row.value("model_id", std::string()) != model_filter)
            continue;
        const auto id = row.at("prompt_id").get<std::string>();
        if (!completions.emplace(id, row.at("completion").get<std::string>()).second)
            throw ValidationError("duplicate completion for prompt \"" + id + "\" in " + path);
    }
    return completions;
}

int cmd_eval_winrate(const std::string& prompts_path, const std::string& a_path,
                     const std::string& a_model, const std::string& b_path,
                     const std::string& b_model, const std::string& endpoints_path,
                     const std::string& template_path, bool single_order, double rps,
                     const CommonFlags& flags) {
    MockFleet fleet;
    const EndpointsConfig endpoints =
        load_endpoints(endpoints_path, flags.mock_endpoints, fleet);
    if (endpoints.judge_url.empty()) throw ValidationError("endpoints config has no judge_url");

    JudgeConfig cfg;
    cfg.judge_url = endpoints.judge_url;
    cfg.both_orders = !single_order;
    cfg.retry = default_retry(flags.mock_endpoints);
    cfg.max_inflight = flags.max_inflight;
    cfg.requests_per_second = rps;
    if (!template_path.empty()) cfg.prompt_template = read_text_file(template_path);

    const auto prompts = load_prompts(prompts_path);
    const auto a = load_completions(a_path, a_model);
    const auto b = load_completions(b_path, b_model);
    const auto result = run_match(prompts, a, b, cfg, a_model.empty() ? "A" : a_model,
                                  b_model.empty() ? "B" : b_model);

    const std::filesystem::path out(flags.out_dir);
    std::filesystem::create_directories(out);
    std::vector<json> verdict_rows;
    for (const auto& v : result.verdicts) verdict_rows.push_back(verdict_to_json(v));
    write_jsonl(out / "verdicts.jsonl", verdict_rows);
    write_json_file(out / "winrates.json", win_rate_table_to_json(result.table));
    write_text_file(out / "winrates.csv", win_rate_table_to_csv(result.table));
    std::cout << "macro win rate: " << result.table.macro_average() << " over "
              << result.table.per_language.size() << " languages\n";
    return 0;
}

int cmd_eval_chrf(const std::string& hyp_path, const std::string& ref_path, int char_order,
                  int word_order, double beta, const std::string& out_path) {
    auto read_lines = [](const std::string& path) {
        std::vector<std::string> lines;
        std::string text = read_text_file(path);
        std::size_t start = 0;
        while (start <= text.size()) {
            const auto end = text.find('\n', start);
            if (end == std::string::npos) {
                if (start < text.size()) lines.push_back(text.substr(start));
                break;
            }
            lines.push_back(text.substr(start, end - start));
            start = end + 1;
        }
        return lines;
    };
    const auto hyps = read_lines(hyp_path);
    const auto refs = read_lines(ref_path);
    if (hyps.size() != refs.size())
        throw ValidationError("hypothesis file has " + std::to_string(hyps.size()) +
                              " lines, reference file has " + std::to_string(refs.size()));
    if (hyps.empty()) throw ValidationError("empty input files");

    json per_line = json::array();
    double total = 0.0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        const double score = chrf_pp(hyps[i], refs[i], char_order, word_order, beta);
        per_line.push_back(score);
        total += score;
    }
    const double mean = total / static_cast<double>(hyps.size());
    const json report = {{"sentences", hyps.size()}, {"mean", mean}, {"per_line", per_line}};
    if (!out_path.empty()) write_json_file(out_path, report);
    std::cout << "chrF++ mean over " << hyps.size() << " sentences: " << mean << "\n";
    return 0;
}

int cmd_eval_sensitivity(const std::string& table1_path, const std::string& table2_path,
                         const std::string& out_path) {
    const auto t1 = win_rate_table_from_json(read_json_file(table1_path));
    const auto t2 = win_rate_table_from_json(read_json_file(table2_path));
    const auto report = judge_sensitivity(t1, t2);
    json deltas = json::object();
    for (const auto& [lang, d] : report.delta_per_language) deltas[lang] = d;
    const json out = {{"delta_per_language", deltas},
                      {"max_abs_delta", report.max_abs_delta},
                      {"mean_abs_delta", report.mean_abs_delta}};
    if (!out_path.empty()) write_json_file(out_path, out);
    std::cout << "judge sensitivity: max |delta| " << report.max_abs_delta << ", mean |delta| "
              << report.mean_abs_delta << "\n";
    return 0;
}

int cmd_eval_build_set(const std::string& prompts_path, const std::string& endpoints_path,
                       const std::vector<std::string>& languages, const std::string& out_path,
                       const CommonFlags& flags) {
    MockFleet fleet;
    const EndpointsConfig endpoints =
        load_endpoints(endpoints_path, flags.mock_endpoints, fleet);
    if (endpoints.translate_url.empty())
        throw ValidationError("endpoints config has no translate_url");
    const auto prompts = load_prompts(prompts_path);
    const auto rows = build_eval_set(prompts, endpoints.translate_url, languages,
                                     default_retry(flags.mock_endpoints), flags.max_inflight);
    std::vector<json> out_rows;
    for (const auto& p : rows)
        out_rows.push_back({{"id", p.id}, {"language", p.language}, {"text", p.text}});
    write_jsonl(out_path, out_rows);
    std::cout << "wrote " << rows.size() << " prompts (" << prompts.size() << " x "
              << languages.size() << " languages)\n";
    return 0;
}

// --- pipeline ---

int cmd_pipeline(const std::string& config_path, bool resume, const CommonFlags& flags,
                 bool seed_given) {
    std::vector<std::string> warnings;
    PipelineConfig cfg = load_pipeline_config(config_path, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    if (seed_given) cfg.seed = flags.seed;
    if (flags.mock_endpoints) cfg.retry.initial_backoff = std::chrono::milliseconds(1);

    PipelineOptions options;
    options.resume = resume;
    options.mock_endpoints = flags.mock_endpoints;
    const auto summary = run_pipeline(cfg, flags.out_dir, options);
    for (const auto& entry : summary.ledger.entries)
        std::cout << "stage " << entry.stage_name << " [" << entry.stage_type << "]: "
                  << (entry.executed ? "executed" : "skipped (up to date)") << "\n";
    std::cout << "pipeline done: executed " << summary.executed_stages << ", skipped "
              << summary.skipped_stages << "\n";
    return 0;
}

int cmd_pipeline_validate(const std::string& config_path) {
    std::vector<std::string> warnings;
    load_pipeline_config(config_path, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    std::cout << "config OK\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"polytune: multilingual post-training pipeline toolkit"};
    app.require_subcommand(1);

    CommonFlags flags;

    // ckpt
    auto* ckpt = app.add_subcommand("ckpt", "Inspect and compare checkpoint files");
    ckpt->require_subcommand(1);
    std::string ckpt_path, ckpt_path_b;
    bool ckpt_json = false;
    auto* ckpt_inspect = ckpt->add_subcommand("inspect", "List tensors in a checkpoint");
    ckpt_inspect->add_option("path", ckpt_path, "Checkpoint file")->required();
    ckpt_inspect->add_flag("--json", ckpt_json, "JSON output");
    auto* ckpt_diff = ckpt->add_subcommand("diff", "Compare two checkpoints");
    ckpt_diff->add_option("a", ckpt_path, "First checkpoint")->required();
    ckpt_diff->add_option("b", ckpt_path_b, "Second checkpoint")->required();

    // merge
    auto* merge = app.add_subcommand("merge", "Apply a merge recipe");
    merge->require_subcommand(1);
    std::string recipe_path, merge_out, merge_base_dir;
    auto* merge_apply = merge->add_subcommand("apply", "Merge checkpoints per a recipe file");
    merge_apply->add_option("recipe", recipe_path, "Recipe JSON file")->required();
    merge_apply->add_option("--out", merge_out, "Output checkpoint path")->required();
    merge_apply->add_option("--base-dir", merge_base_dir,
                            "Directory for resolving relative paths in the recipe");

    // arbitrage
    auto* arbitrage = app.add_subcommand("arbitrage", "Reward-based routing over a model pool");
    arbitrage->require_subcommand(1);
    std::string prompts_path, endpoints_path;
    auto* arbitrage_run = arbitrage->add_subcommand("run", "Generate, score and route");
    arbitrage_run->add_option("--prompts", prompts_path, "Prompt JSONL file")->required();
    arbitrage_run->add_option("--endpoints", endpoints_path, "Endpoints JSON file")->required();
    add_common(arbitrage_run, flags);

    // prefs
    auto* prefs = app.add_subcommand("prefs", "Preference-pair curation");
    prefs->require_subcommand(1);
    std::string candidates_path, policy_model;
    int iteration = 1, samples = 4, n_iterations = 3;
    auto* prefs_offline_cmd = prefs->add_subcommand("offline", "Pairs from a candidate log");
    prefs_offline_cmd->add_option("--candidates", candidates_path, "Candidate log JSONL")
        ->required();
    add_common(prefs_offline_cmd, flags);
    auto* prefs_online_cmd = prefs->add_subcommand("online", "One online sampling round");
    prefs_online_cmd->add_option("--prompts", prompts_path, "Prompt JSONL file")->required();
    prefs_online_cmd->add_option("--endpoints", endpoints_path, "Endpoints JSON file")
        ->required();
    prefs_online_cmd->add_option("--policy-model", policy_model, "Generator id of the policy")
        ->required();
    prefs_online_cmd->add_option("--iteration", iteration, "Round number (1-based)");
    prefs_online_cmd->add_option("--samples", samples, "Samples per prompt (m)");
    prefs_online_cmd->add_option("--n-iterations", n_iterations, "Total planned iterations");
    add_common(prefs_online_cmd, flags);

    // dpo
    auto* dpo = app.add_subcommand("dpo", "Tabular DPO trainer and gradient checker");
    dpo->require_subcommand(1);
    std::string pairs_path, mapping_path, init_policy;
    double beta = 0.1, learning_rate = 0.01, eps = 1e-5;
    int steps = 100;
    auto* dpo_train = dpo->add_subcommand("train", "Full-batch DPO on a tabular policy");
    dpo_train->add_option("--pairs", pairs_path, "Preference pair JSONL")->required();
    dpo_train->add_option("--mapping", mapping_path, "Candidate-index mapping JSON")->required();
    dpo_train->add_option("--policy", init_policy, "Initial policy JSON (default: zeros)");
    dpo_train->add_option("--beta", beta, "Regularization coefficient");
    dpo_train->add_option("--lr", learning_rate, "Learning rate");
    dpo_train->add_option("--steps", steps, "Gradient steps");
    add_common(dpo_train, flags);
    auto* dpo_check = dpo->add_subcommand("check", "Finite-difference gradient check");
    dpo_check->add_option("--seed", flags.seed, "Seed for random instances");
    dpo_check->add_option("--eps", eps, "Central difference step");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluation harness");
    eval->require_subcommand(1);
    std::string a_path, b_path, a_model, b_model, template_path, hyp_path, ref_path;
    std::string table1_path, table2_path, out_file;
    std::vector<std::string> languages;
    bool single_order = false;
    int char_order = 6, word_order = 2;
    double chrf_beta = 2.0, rps = 0.0;
    auto* eval_winrate = eval->add_subcommand("winrate", "Pairwise LLM-judge win rates");
    eval_winrate->add_option("--prompts", prompts_path, "Prompt JSONL file")->required();
    eval_winrate->add_option("--completions-a", a_path, "Completions JSONL for model A")
        ->required();
    eval_winrate->add_option("--completions-b", b_path, "Completions JSONL for model B")
        ->required();
    eval_winrate->add_option("--model-a", a_model, "Filter/label for model A rows");
    eval_winrate->add_option("--model-b", b_model, "Filter/label for model B rows");
    eval_winrate->add_option("--endpoints", endpoints_path, "Endpoints JSON file")->required();
    eval_winrate->add_option("--template", template_path, "Judge prompt template file");
    eval_winrate->add_flag("--single-order", single_order,
                           "Judge once instead of both presentation orders");
    eval_winrate->add_option("--rps", rps, "Judge requests per second (0 = unlimited)");
    add_common(eval_winrate, flags);
    auto* eval_chrf = eval->add_subcommand("chrf", "chrF++ over line-aligned text files");
    eval_chrf->add_option("--hypotheses", hyp_path, "Hypothesis text file")->required();
    eval_chrf->add_option("--references", ref_path, "Reference text file")->required();
    eval_chrf->add_option("--char-order", char_order, "Character n-gram order");
    eval_chrf->add_option("--word-order", word_order, "Word n-gram order");
    eval_chrf->add_option("--beta", chrf_beta, "Recall weight");
    eval_chrf->add_option("--out", out_file, "Write the JSON report here");
    auto* eval_sensitivity = eval->add_subcommand("sensitivity", "Win-rate deltas between judges");
    eval_sensitivity->add_option("--table1", table1_path, "First win-rate JSON")->required();
    eval_sensitivity->add_option("--table2", table2_path, "Second win-rate JSON")->required();
    eval_sensitivity->add_option("--out", out_file, "Write the JSON report here");
    auto* eval_build = eval->add_subcommand("build-set", "Translate English prompts");
    eval_build->add_option("--prompts", prompts_path, "English prompt JSONL")->required();
    eval_build->add_option("--endpoints", endpoints_path, "Endpoints JSON file")->required();
    eval_build->add_option("--languages", languages, "Target languages")
        ->required()
        ->delimiter(',');
    eval_build->add_option("--out", out_file, "Output prompt JSONL")->required();
    add_common(eval_build, flags, /*with_out_dir=*/false);

    // pipeline
    auto* pipeline = app.add_subcommand("pipeline", "Run configured stages end to end");
    pipeline->require_subcommand(1);
    std::string config_path;
    auto* pipeline_run = pipeline->add_subcommand("run", "Execute all stages");
    pipeline_run->add_option("--config", config_path, "Pipeline config JSON")->required();
    add_common(pipeline_run, flags);
    auto* pipeline_resume = pipeline->add_subcommand("resume", "Skip stages that are up to date");
    pipeline_resume->add_option("--config", config_path, "Pipeline config JSON")->required();
    add_common(pipeline_resume, flags);
    auto* pipeline_validate = pipeline->add_subcommand("validate", "Parse and validate a config");
    pipeline_validate->add_option("--config", config_path, "Pipeline config JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage problems are validation errors
    }

    try {
        if (ckpt_inspect->parsed()) return cmd_ckpt_inspect(ckpt_path, ckpt_json);
        if (ckpt_diff->parsed()) return cmd_ckpt_diff(ckpt_path, ckpt_path_b);
        if (merge_apply->parsed()) return cmd_merge_apply(recipe_path, merge_out, merge_base_dir);
        if (arbitrage_run->parsed()) return cmd_arbitrage_run(prompts_path, endpoints_path, flags);
        if (prefs_offline_cmd->parsed()) return cmd_prefs_offline(candidates_path, flags);
        if (prefs_online_cmd->parsed())
            return cmd_prefs_online(prompts_path, endpoints_path, policy_model, iteration,
                                    samples, n_iterations, flags);
        if (dpo_train->parsed())
            return cmd_dpo_train(pairs_path, mapping_path, init_policy, beta, learning_rate,
                                 steps, flags);
        if (dpo_check->parsed()) return cmd_dpo_check(flags.seed, eps);
        if (eval_winrate->parsed())
            return cmd_eval_winrate(prompts_path, a_path, a_model, b_path, b_model,
                                    endpoints_path, template_path, single_order, rps, flags);
        if (eval_chrf->parsed())
            return cmd_eval_chrf(hyp_path, ref_path, char_order, word_order, chrf_beta, out_file);
        if (eval_sensitivity->parsed())
            return cmd_eval_sensitivity(table1_path, table2_path, out_file);
        if (eval_build->parsed())
            return cmd_eval_build_set(prompts_path, endpoints_path, languages, out_file, flags);
        if (pipeline_run->parsed())
            return cmd_pipeline(config_path, /*resume=*/false, flags,
                                pipeline_run->count("--seed") > 0);
        if (pipeline_resume->parsed())
            return cmd_pipeline(config_path, /*resume=*/true, flags,
                                pipeline_resume->count("--seed") > 0);
        if (pipeline_validate->parsed()) return cmd_pipeline_validate(config_path);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
