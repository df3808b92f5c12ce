// Copyright (c) 2026 The Polytune Authors
// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale direct preference optimization. The policy is tabular: one row
// of logits per prompt over K fixed candidate completions, which makes every
// loss and gradient property exactly checkable. The loss on one pair is
//
//   L = -log sigmoid(beta * delta),
//   delta = (lp_chosen - lref_chosen) - (lp_rejected - lref_rejected)
//
// evaluated in the numerically stable form log1p(exp(-z)).

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "polytune/det_rng.hpp"
#include "polytune/error.hpp"

namespace polytune {

struct DpoConfig {
    double beta = 0.1;
    double learning_rate = 0.01;
    int steps = 0;
};

namespace detail {

inline void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw ValidationError(std::string("dpo: non-finite ") + what);
}

// log(1 + exp(x)) without overflow.
inline double log1p_exp(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// sigmoid(-z), stable for both signs of z.
inline double sigmoid_neg(double z) {
    if (z >= 0.0) {
        const double e = std::exp(-z);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(z));
}

}  // namespace detail

inline double dpo_loss(double lp_c, double lp_r, double lref_c, double lref_r,
                       double beta) {
    detail::require_finite(lp_c, "lp_c");
    detail::require_finite(lp_r, "lp_r");
    detail::require_finite(lref_c, "lref_c");
    detail::require_finite(lref_r, "lref_r");
    detail::require_finite(beta, "beta");
    if (!(beta > 0.0)) throw ValidationError("dpo: beta must be > 0");
    const double z = beta * ((lp_c - lref_c) - (lp_r - lref_r));
    return detail::log1p_exp(-z);
}

struct DpoGrad {
    double d_lp_chosen;    // always negative
    double d_lp_rejected;  // always -d_lp_chosen
};

inline DpoGrad dpo_grad(double lp_c, double lp_r, double lref_c, double lref_r,
                        double beta) {
    detail::require_finite(lp_c, "lp_c");
    detail::require_finite(lp_r, "lp_r");
    detail::require_finite(lref_c, "lref_c");
    detail::require_finite(lref_r, "lref_r");
    detail::require_finite(beta, "beta");
    if (!(beta > 0.0)) throw ValidationError("dpo: beta must be > 0");
    const double z = beta * ((lp_c - lref_c) - (lp_r - lref_r));
    const double g = beta * detail::sigmoid_neg(z);
    return {-g, g};
}

// P x K logit table with per-row softmax log-probabilities.
class TabularPolicy {
  public:
    TabularPolicy() = default;
    TabularPolicy(std::size_t prompts, std::size_t candidates, double init = 0.0)
        : rows_(prompts), cols_(candidates), logits_(prompts * candidates, init) {}

    static TabularPolicy random(std::size_t prompts, std::size_t candidates,
                                std::uint64_t seed, double scale = 1.0) {
        TabularPolicy p(prompts, candidates);
        for (std::size_t i = 0; i < p.logits_.size(); ++i)
            p.logits_[i] = scale * (2.0 * uniform01(splitmix64(seed + i)) - 1.0);
        return p;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    double& logit(std::size_t p, std::size_t k) { return logits_[p * cols_ + k]; }
    double logit(std::size_t p, std::size_t k) const { return logits_[p * cols_ + k]; }

    // Stable per-row log-softmax.
    std::vector<double> row_log_probs(std::size_t p) const {
        std::vector<double> lp(cols_);
        double m = logits_[p * cols_];
        for (std::size_t k = 1; k < cols_; ++k) m = std::max(m, logits_[p * cols_ + k]);
        double sum = 0.0;
        for (std::size_t k = 0; k < cols_; ++k) sum += std::exp(logits_[p * cols_ + k] - m);
        const double lse = m + std::log(sum);
        for (std::size_t k = 0; k < cols_; ++k) lp[k] = logits_[p * cols_ + k] - lse;
        return lp;
    }

    std::vector<std::vector<double>> log_probs() const {
        std::vector<std::vector<double>> all(rows_);
        for (std::size_t p = 0; p < rows_; ++p) all[p] = row_log_probs(p);
        return all;
    }

    bool operator==(const TabularPolicy&) const = default;

  private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> logits_;
};

// A preference pair mapped onto the tabular policy.
struct IndexedPair {
    std::size_t row;
    std::size_t chosen;
    std::size_t rejected;
};

namespace detail {

inline void check_pairs(const TabularPolicy& policy, std::span<const IndexedPair> pairs) {
    for (const auto& pr : pairs) {
        if (pr.row >= policy.rows() || pr.chosen >= policy.cols() ||
            pr.rejected >= policy.cols())
            throw ValidationError("dpo: pair indices out of range (row " +
                                  std::to_string(pr.row) + ", chosen " +
                                  std::to_string(pr.chosen) + ", rejected " +
                                  std::to_string(pr.rejected) + ")");
        if (pr.chosen == pr.rejected)
            throw ValidationError("dpo: pair has identical chosen and rejected index " +
                                  std::to_string(pr.chosen));
    }
}

}  // namespace detail

inline double mean_dpo_loss(const TabularPolicy& policy, const TabularPolicy& reference,
                            std::span<const IndexedPair> pairs, double beta) {
    detail::check_pairs(policy, pairs);
    if (pairs.empty()) throw ValidationError("dpo: empty pair list");
    const auto lp = policy.log_probs();
    const auto lref = reference.log_probs();
    double total = 0.0;
    for (const auto& pr : pairs)
        total += dpo_loss(lp[pr.row][pr.chosen], lp[pr.row][pr.rejected],
                          lref[pr.row][pr.chosen], lref[pr.row][pr.rejected], beta);
    return total / static_cast<double>(pairs.size());
}

// beta * ((lp_c - lref_c) - (lp_r - lref_r)) for one pair.
inline double implicit_reward_margin(const TabularPolicy& policy,
                                     const TabularPolicy& reference,
                                     const IndexedPair& pr, double beta) {
    const auto lp = policy.row_log_probs(pr.row);
    const auto lref = reference.row_log_probs(pr.row);
    return beta * ((lp[pr.chosen] - lref[pr.chosen]) - (lp[pr.rejected] - lref[pr.rejected]));
}

namespace detail {

// Gradient of the mean DPO loss w.r.t. every logit. Because the two
// log-prob partials of one pair sum to zero, the log-softmax Jacobian
// contribution cancels and each pair touches exactly its two columns.
inline std::vector<double> mean_loss_gradient(const TabularPolicy& policy,
                                              const TabularPolicy& reference,
                                              std::span<const IndexedPair> pairs,
                                              double beta) {
    const auto lp = policy.log_probs();
    const auto lref = reference.log_probs();
    std::vector<double> grad(policy.rows() * policy.cols(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(pairs.size());
    for (const auto& pr : pairs) {
        const DpoGrad g = dpo_grad(lp[pr.row][pr.chosen], lp[pr.row][pr.rejected],
                                   lref[pr.row][pr.chosen], lref[pr.row][pr.rejected], beta);
        grad[pr.row * policy.cols() + pr.chosen] += g.d_lp_chosen * inv_n;
        grad[pr.row * policy.cols() + pr.rejected] += g.d_lp_rejected * inv_n;
    }
    return grad;
}

}  // namespace detail

struct TrainResult {
    TabularPolicy policy;
    std::vector<double> trace;  // mean loss at the start of each step
};

// Full-batch gradient descent on the mean DPO loss. The reference policy is
// a frozen snapshot of the input. steps == 0 returns the policy unchanged
// with an empty trace.
inline TrainResult train_dpo(TabularPolicy policy, std::span<const IndexedPair> pairs,
                             const DpoConfig& cfg) {
    detail::check_pairs(policy, pairs);
    if (cfg.steps < 0) throw ValidationError("dpo: steps must be >= 0");
    if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate))
        throw ValidationError("dpo: learning rate must be positive and finite");
    if (pairs.empty() && cfg.steps > 0) throw ValidationError("dpo: empty pair list");

    const TabularPolicy reference = policy;
    TrainResult result;
    result.trace.reserve(static_cast<std::size_t>(cfg.steps));
    for (int step = 0; step < cfg.steps; ++step) {
        result.trace.push_back(mean_dpo_loss(policy, reference, pairs, cfg.beta));
        const auto grad = detail::mean_loss_gradient(policy, reference, pairs, cfg.beta);
        for (std::size_t p = 0; p < policy.rows(); ++p)
            for (std::size_t k = 0; k < policy.cols(); ++k)
                policy.logit(p, k) -= cfg.learning_rate * grad[p * policy.cols() + k];
    }
    result.policy = std::move(policy);
    return result;
}

// Compares the analytic gradient of the mean loss against central finite
// differences at every logit; returns the max relative error
// |analytic - fd| / max(1, |analytic|, |fd|).
inline double finite_diff_check(const TabularPolicy& policy, const TabularPolicy& reference,
                                std::span<const IndexedPair> pairs, double beta,
                                double eps) {
    if (!(eps > 0.0 && eps <= 1e-2))
        throw ValidationError("dpo: finite-difference eps must be in (0, 1e-2]");
    detail::check_pairs(policy, pairs);
    if (pairs.empty()) throw ValidationError("dpo: empty pair list");

    const auto grad = detail::mean_loss_gradient(policy, reference, pairs, beta);
    double max_rel = 0.0;
    TabularPolicy probe = policy;
    for (std::size_t p = 0; p < policy.rows(); ++p) {
        for (std::size_t k = 0; k < policy.cols(); ++k) {
            const double saved = probe.logit(p, k);
            probe.logit(p, k) = saved + eps;
            const double up = mean_dpo_loss(probe, reference, pairs, beta);
            probe.logit(p, k) = saved - eps;
            const double down = mean_dpo_loss(probe, reference, pairs, beta);
            probe.logit(p, k) = saved;
            const double fd = (up - down) / (2.0 * eps);
            const double a = grad[p * policy.cols() + k];
            const double rel = std::fabs(a - fd) /
                               std::max({1.0, std::fabs(a), std::fabs(fd)});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace polytune
