// Copyright (c) 2026 The Polytune Authors
// SPDX-License-Identifier: Apache-2.0
//
// Thin JSON-over-HTTP client for the generator / reward / judge / translate
// endpoints. Transport failures, 5xx responses and malformed bodies are
// retried with exponential backoff; 4xx responses fail immediately.

#pragma once

#include <chrono>
#include <limits>
#include <cmath>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "polytune/error.hpp"

namespace polytune {

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{250};
    double backoff_multiplier = 2.0;
};

struct GenerationParams {
    double temperature = 0.7;
    int max_tokens = 256;
};

struct GeneratorEndpoint {
    std::string model_id;
    std::string url;  // base address, e.g. http://127.0.0.1:8080
    GenerationParams params;
};

// Serializes request starts to at most `requests_per_second`; 0 = unlimited.
class RateLimiter {
  public:
    explicit RateLimiter(double requests_per_second = 0.0)
        : interval_(requests_per_second > 0.0
                        ? std::chrono::duration<double>(1.0 / requests_per_second)
                        : std::chrono::duration<double>(0.0)) {}

    void acquire() {
        if (interval_.count() == 0.0) return;
        std::chrono::steady_clock::time_point wait_until;
        {
            std::lock_guard lock(mu_);
            const auto now = std::chrono::steady_clock::now();
            next_ = std::max(next_, now);
            wait_until = next_;
            next_ += std::chrono::duration_cast<std::chrono::steady_clock::duration>(interval_);
        }
        std::this_thread::sleep_until(wait_until);
    }

  private:
    std::chrono::duration<double> interval_;
    std::chrono::steady_clock::time_point next_{};
    std::mutex mu_;
};

namespace detail {

inline nlohmann::json post_json_with_retry(const std::string& base_url,
                                           const std::string& path,
                                           const nlohmann::json& body,
                                           const RetryPolicy& retry) {
    std::string last_error;
    auto backoff = retry.initial_backoff;
    const int attempts = std::max(1, retry.max_attempts);
    for (int attempt = 0; attempt < attempts; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(backoff);
            backoff = std::chrono::milliseconds(static_cast<long>(
                std::ceil(static_cast<double>(backoff.count()) * retry.backoff_multiplier)));
        }
        httplib::Client client(base_url);
        client.set_connection_timeout(10, 0);
        client.set_read_timeout(60, 0);
        auto res = client.Post(path, body.dump(), "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500) {
            last_error = "server error: HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200)
            throw RuntimeFailure("POST " + base_url + path + " failed: HTTP " +
                                 std::to_string(res->status));
        auto parsed = nlohmann::json::parse(res->body, nullptr, /*allow_exceptions=*/false);
        if (parsed.is_discarded()) {
            last_error = "malformed response body";
            continue;
        }
        return parsed;
    }
    throw RuntimeFailure("POST " + base_url + path + " failed after " +
                         std::to_string(attempts) + " attempts: " + last_error);
}

}  // namespace detail

// POST /generate {prompt, temperature, max_tokens[, seed]} -> {completion}
inline std::string generate_completion(const GeneratorEndpoint& ep, const std::string& prompt,
                                       const RetryPolicy& retry,
                                       std::optional<std::uint64_t> seed = std::nullopt) {
    nlohmann::json body = {{"prompt", prompt},
                           {"temperature", ep.params.temperature},
                           {"max_tokens", ep.params.max_tokens}};
    if (seed) body["seed"] = *seed;
    const auto res = detail::post_json_with_retry(ep.url, "/generate", body, retry);
    if (!res.contains("completion") || !res["completion"].is_string())
        throw RuntimeFailure("malformed response from " + ep.url +
                             "/generate: missing string field \"completion\"");
    return res["completion"].get<std::string>();
}

// POST /score {prompt, completion} -> {reward}. Finiteness is checked by
// the caller, which knows which candidate the score belongs to. JSON cannot
// carry NaN/inf as numbers; scorers that produce them serialize null, which
// is surfaced here as NaN so the caller rejects it by name.
inline double score_completion(const std::string& reward_url, const std::string& prompt,
                               const std::string& completion, const RetryPolicy& retry) {
    const nlohmann::json body = {{"prompt", prompt}, {"completion", completion}};
    const auto res = detail::post_json_with_retry(reward_url, "/score", body, retry);
    if (res.contains("reward") && res["reward"].is_null())
        return std::numeric_limits<double>::quiet_NaN();
    if (!res.contains("reward") || !res["reward"].is_number())
        throw RuntimeFailure("malformed response from " + reward_url +
                             "/score: missing numeric field \"reward\"");
    return res["reward"].get<double>();
}

// POST /judge {prompt} -> {text}
inline std::string judge_completion(const std::string& judge_url, const std::string& prompt,
                                    const RetryPolicy& retry) {
    const nlohmann::json body = {{"prompt", prompt}};
    const auto res = detail::post_json_with_retry(judge_url, "/judge", body, retry);
    if (!res.contains("text") || !res["text"].is_string())
        throw RuntimeFailure("malformed response from " + judge_url +
                             "/judge: missing string field \"text\"");
    return res["text"].get<std::string>();
}

// POST /translate {text, source_lang, target_lang} -> {text}
inline std::string translate_text(const std::string& translate_url, const std::string& text,
                                  const std::string& source_lang,
                                  const std::string& target_lang, const RetryPolicy& retry) {
    const nlohmann::json body = {
        {"text", text}, {"source_lang", source_lang}, {"target_lang", target_lang}};
    const auto res = detail::post_json_with_retry(translate_url, "/translate", body, retry);
    if (!res.contains("text") || !res["text"].is_string())
        throw RuntimeFailure("malformed response from " + translate_url +
                             "/translate: missing string field \"text\"");
    return res["text"].get<std::string>();
}

}  // namespace polytune
