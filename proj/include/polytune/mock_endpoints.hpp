// Copyright (c) 2026 The Polytune Authors
// SPDX-License-Identifier: Apache-2.0
//
// In-process mock generator / reward / judge / translate endpoints, used by
// the test suite and by the CLI --mock-endpoints mode. Every response is a
// pure function of the request (plus the construction-time options), so
// pipelines driven by mocks are byte-for-byte reproducible. Fault injection
// (5xx bursts, empty completions, non-finite rewards, garbage verdicts) is
// opt-in per server.

#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "polytune/det_rng.hpp"
#include "polytune/error.hpp"

namespace polytune {

class MockServer {
  public:
    enum class RewardMode { length, keyword };
    enum class JudgeMode { longer_wins, always_first, always_tie, garbage };

    struct Options {
        // Salts generated completions; give each mocked generator its own
        // persona (typically the model id) so pool members disagree.
        std::string persona = "mock";
        RewardMode reward_mode = RewardMode::length;
        std::string reward_keyword;
        double keyword_bonus = 100.0;
        JudgeMode judge_mode = JudgeMode::longer_wins;
        int fail_first = 0;        // respond 500 to the first N requests
        bool always_fail = false;  // respond 500 to everything
        bool empty_completion = false;
        bool nonfinite_reward = false;  // /score returns 1e999 (parses to +inf)
        bool empty_translation = false;
        std::string fail_generate_if_prompt_contains;
    };

    MockServer() : MockServer(Options{}) {}

    explicit MockServer(Options options) : options_(std::move(options)) {
        server_.Post("/generate", [this](const httplib::Request& req, httplib::Response& res) {
            handle_generate(req, res);
        });
        server_.Post("/score", [this](const httplib::Request& req, httplib::Response& res) {
            handle_score(req, res);
        });
        server_.Post("/judge", [this](const httplib::Request& req, httplib::Response& res) {
            handle_judge(req, res);
        });
        server_.Post("/translate", [this](const httplib::Request& req, httplib::Response& res) {
            handle_translate(req, res);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        if (port_ <= 0) throw RuntimeFailure("mock server: failed to bind a port");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    MockServer(const MockServer&) = delete;
    MockServer& operator=(const MockServer&) = delete;

    ~MockServer() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    int request_count() const { return requests_.load(); }

    // The deterministic completion the mock would produce; tests use this
    // to predict outputs without going through HTTP.
    static std::string expected_completion(const std::string& persona,
                                           const std::string& prompt, std::uint64_t seed) {
        static constexpr const char* kWords[] = {"alpha", "bravo", "charlie", "delta",
                                                 "echo",  "fox",   "golf",    "hotel",
                                                 "india", "kilo",  "lima",    "mike"};
        std::uint64_t h = splitmix64(splitmix64(fnv1a64(persona) ^ seed) ^ fnv1a64(prompt));
        std::string out = persona + ":";
        const int count = 2 + static_cast<int>(h % 5);
        for (int i = 0; i < count; ++i) {
            h = splitmix64(h);
            out += " ";
            out += kWords[h % 12];
        }
        return out;
    }

    static double expected_reward(const Options& options, const std::string& completion) {
        double reward = static_cast<double>(completion.size());
        if (options.reward_mode == RewardMode::keyword && !options.reward_keyword.empty() &&
            completion.find(options.reward_keyword) != std::string::npos)
            reward += options.keyword_bonus;
        return reward;
    }

  private:
    bool injected_failure(httplib::Response& res) {
        const int n = requests_.fetch_add(1);
        if (options_.always_fail || n < options_.fail_first) {
            res.status = 500;
            res.set_content("injected failure", "text/plain");
            return true;
        }
        return false;
    }

    void handle_generate(const httplib::Request& req, httplib::Response& res) {
        if (injected_failure(res)) return;
        const auto body = nlohmann::json::parse(req.body);
        const auto prompt = body.at("prompt").get<std::string>();
        if (!options_.fail_generate_if_prompt_contains.empty() &&
            prompt.find(options_.fail_generate_if_prompt_contains) != std::string::npos) {
            res.status = 500;
            res.set_content("injected prompt failure", "text/plain");
            return;
        }
        std::string completion;
        if (!options_.empty_completion) {
            const std::uint64_t seed = body.value("seed", std::uint64_t{0});
            completion = expected_completion(options_.persona, prompt, seed);
        }
        res.set_content(nlohmann::json{{"completion", completion}}.dump(), "application/json");
    }

    void handle_score(const httplib::Request& req, httplib::Response& res) {
        if (injected_failure(res)) return;
        if (options_.nonfinite_reward) {
            // How a scorer that computed NaN actually serializes it.
            res.set_content(nlohmann::json{{"reward", std::nan("")}}.dump(),
                            "application/json");
            return;
        }
        const auto body = nlohmann::json::parse(req.body);
        const auto completion = body.at("completion").get<std::string>();
        res.set_content(
            nlohmann::json{{"reward", expected_reward(options_, completion)}}.dump(),
            "application/json");
    }

    // Understands the default judge template: responses live between the
    // "Response A:"/"Response B:" markers and the final instruction line.
    void handle_judge(const httplib::Request& req, httplib::Response& res) {
        if (injected_failure(res)) return;
        const auto body = nlohmann::json::parse(req.body);
        const auto prompt = body.at("prompt").get<std::string>();

        std::string verdict = "TIE";
        switch (options_.judge_mode) {
            case JudgeMode::garbage:
                res.set_content(nlohmann::json{{"text", "banana"}}.dump(), "application/json");
                return;
            case JudgeMode::always_first:
                verdict = "A";
                break;
            case JudgeMode::always_tie:
                verdict = "TIE";
                break;
            case JudgeMode::longer_wins: {
                const std::string mark_a = "Response A:\n";
                const std::string mark_b = "\nResponse B:\n";
                const std::string mark_end = "\nReply with";
                const auto pa = prompt.find(mark_a);
                const auto pb = prompt.find(mark_b, pa == std::string::npos ? 0 : pa);
                const auto pe = prompt.rfind(mark_end);
                if (pa == std::string::npos || pb == std::string::npos ||
                    pe == std::string::npos || pe < pb) {
                    res.status = 400;
                    res.set_content("mock judge cannot parse prompt", "text/plain");
                    return;
                }
                const std::string a = prompt.substr(pa + mark_a.size(),
                                                    pb - pa - mark_a.size());
                const std::string b = prompt.substr(pb + mark_b.size(),
                                                    pe - pb - mark_b.size());
                verdict = a.size() > b.size() ? "A" : (b.size() > a.size() ? "B" : "TIE");
                break;
            }
        }
        const std::string text = "Considered both responses carefully.\n" + verdict;
        res.set_content(nlohmann::json{{"text", text}}.dump(), "application/json");
    }

    void handle_translate(const httplib::Request& req, httplib::Response& res) {
        if (injected_failure(res)) return;
        const auto body = nlohmann::json::parse(req.body);
        const auto text = body.at("text").get<std::string>();
        const auto target = body.at("target_lang").get<std::string>();
        const std::string translated =
            options_.empty_translation ? "" : "[" + target + "] " + text;
        res.set_content(nlohmann::json{{"text", translated}}.dump(), "application/json");
    }

    Options options_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> requests_{0};
};

}  // namespace polytune
