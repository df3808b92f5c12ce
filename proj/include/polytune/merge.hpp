// Copyright (c) 2026 The Polytune Authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic checkpoint merging: weighted linear averaging, SLERP, TIES
// and DARE-TIES. All kernels accumulate in float32 with a fixed reduction
// order (ascending input index, ascending flat element index) and cast back
// to the storage dtype with round-to-nearest-even, so outputs are
// bit-identical across runs and thread counts.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "polytune/checkpoint.hpp"
#include "polytune/det_rng.hpp"
#include "polytune/error.hpp"
#include "polytune/parallel.hpp"

namespace polytune {

// Per-tensor deltas of a fine-tuned checkpoint against its base, in float32.
struct TaskVector {
    std::map<std::string, std::vector<float>> deltas;
};

namespace detail {

inline std::size_t merge_workers() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

// Rebuilds a checkpoint from per-tensor float32 values, reusing the
// structure (names, shapes, dtypes) of a template checkpoint.
template <typename ValueFn>
Checkpoint assemble_like(const Checkpoint& shape_source, ValueFn&& values_for) {
    std::vector<const std::string*> names;
    names.reserve(shape_source.tensors.size());
    for (const auto& [name, t] : shape_source.tensors) names.push_back(&name);

    std::vector<Tensor> slots(names.size());
    parallel_for(names.size(), merge_workers(), [&](std::size_t i) {
        const Tensor& ref = shape_source.tensors.at(*names[i]);
        slots[i] = tensor_from_f32(ref.dtype, ref.shape, values_for(*names[i]));
    });

    Checkpoint out;
    for (std::size_t i = 0; i < names.size(); ++i)
        out.set(*names[i], std::move(slots[i]));
    return out;
}

}  // namespace detail

// Per element: sum_i w_i * x_i / sum_i w_i. Weights are normalized in double
// first, then each element accumulates c_i * x_i in float32 in ascending
// input order and divides by the float32 sum of the c_i. A single input is
// returned unchanged for any positive weight.
inline Checkpoint linear_merge(std::span<const Checkpoint> ckpts,
                               std::span<const double> weights) {
    validate_compatible(ckpts);
    if (weights.size() != ckpts.size())
        throw ValidationError("linear_merge: " + std::to_string(weights.size()) +
                              " weights for " + std::to_string(ckpts.size()) + " checkpoints");
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w))
            throw ValidationError("linear_merge: weights must be finite and non-negative");
        total += w;
    }
    if (!(total > 0.0)) throw ValidationError("linear_merge: all-zero weights");

    std::vector<float> coeff(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i)
        coeff[i] = static_cast<float>(weights[i] / total);
    float coeff_sum = 0.0f;
    for (float c : coeff) coeff_sum += c;

    return detail::assemble_like(ckpts[0], [&](const std::string& name) {
        std::vector<std::vector<float>> inputs;
        inputs.reserve(ckpts.size());
        for (const auto& c : ckpts) inputs.push_back(tensor_to_f32(c.tensors.at(name)));
        std::vector<float> out(inputs[0].size());
        for (std::size_t j = 0; j < out.size(); ++j) {
            float acc = 0.0f;
            for (std::size_t i = 0; i < inputs.size(); ++i) acc += coeff[i] * inputs[i][j];
            out[j] = acc / coeff_sum;
        }
        return out;
    });
}

// Spherical linear interpolation, per tensor on the flattened vector.
// Angle and norms accumulate in double; the per-element combination
// sin((1-t)w)/sin(w) * a + sin(tw)/sin(w) * b runs in float32. Falls back to
// linear interpolation when the angle is below 1e-6 or either norm is zero,
// so t=0 and t=1 reproduce the inputs exactly.
inline Checkpoint slerp_merge(const Checkpoint& a, const Checkpoint& b, double t) {
    validate_compatible(a, b);
    if (!(t >= 0.0 && t <= 1.0))
        throw ValidationError("slerp_merge: t must be in [0, 1]");

    return detail::assemble_like(a, [&](const std::string& name) {
        const std::vector<float> va = tensor_to_f32(a.tensors.at(name));
        const std::vector<float> vb = tensor_to_f32(b.tensors.at(name));
        double dot = 0.0, na2 = 0.0, nb2 = 0.0;
        for (std::size_t j = 0; j < va.size(); ++j) {
            dot += static_cast<double>(va[j]) * static_cast<double>(vb[j]);
            na2 += static_cast<double>(va[j]) * static_cast<double>(va[j]);
            nb2 += static_cast<double>(vb[j]) * static_cast<double>(vb[j]);
        }
        const double na = std::sqrt(na2), nb = std::sqrt(nb2);
        bool lerp = na == 0.0 || nb == 0.0;
        double ca = 1.0 - t, cb = t;
        if (!lerp) {
            const double cosw = std::clamp(dot / (na * nb), -1.0, 1.0);
            const double w = std::acos(cosw);
            // The arc formula divides by sin(w), which degenerates at both
            // ends: near 0 (parallel) and near pi (antipodal, where no
            // unique great-circle path exists).
            if (w < 1e-6 || std::sin(w) < 1e-6) {
                lerp = true;
            } else {
                const double sw = std::sin(w);
                ca = std::sin((1.0 - t) * w) / sw;
                cb = std::sin(t * w) / sw;
            }
        }
        std::vector<float> out(va.size());
        if (lerp) {
            // a + t*(b - a): reproduces a bitwise at t=0, b at t=1, and a
            // when the inputs coincide.
            const float tf = static_cast<float>(t);
            for (std::size_t j = 0; j < va.size(); ++j)
                out[j] = t == 0.0 ? va[j] : (t == 1.0 ? vb[j] : va[j] + tf * (vb[j] - va[j]));
            return out;
        }
        const float caf = static_cast<float>(ca), cbf = static_cast<float>(cb);
        for (std::size_t j = 0; j < va.size(); ++j) {
            // Skip zero-coefficient terms so the endpoints stay bit-exact.
            if (cbf == 0.0f)
                out[j] = caf * va[j];
            else if (caf == 0.0f)
                out[j] = cbf * vb[j];
            else
                out[j] = caf * va[j] + cbf * vb[j];
        }
        return out;
    });
}

// model - base per element, in float32.
inline TaskVector task_vector(const Checkpoint& base, const Checkpoint& model) {
    validate_compatible(base, model);
    TaskVector tv;
    for (const auto& [name, bt] : base.tensors) {
        const std::vector<float> vb = tensor_to_f32(bt);
        const std::vector<float> vm = tensor_to_f32(model.tensors.at(name));
        std::vector<float> delta(vb.size());
        for (std::size_t j = 0; j < vb.size(); ++j) delta[j] = vm[j] - vb[j];
        tv.deltas[name] = std::move(delta);
    }
    return tv;
}

// Drops each element with probability p and rescales survivors by 1/(1-p).
// The drop decision is a pure function of (seed, tensor name, flat index),
// so the mask is reproducible at any thread count and evaluation order.
inline TaskVector dare_sparsify(const TaskVector& tv, double p, std::uint64_t seed) {
    if (!(p >= 0.0 && p < 1.0))
        throw ValidationError("dare_sparsify: drop probability must be in [0, 1)");
    const float rescale = static_cast<float>(1.0 / (1.0 - p));
    TaskVector out;
    for (const auto& [name, values] : tv.deltas) {
        std::vector<float> kept(values.size());
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double u = uniform01(element_hash(seed, name, j));
            kept[j] = u < p ? 0.0f : values[j] * rescale;
        }
        out.deltas[name] = std::move(kept);
    }
    return out;
}

namespace detail {

// Steps (1)-(4) of TIES on already-built task vectors:
//   (1) per task vector and tensor, keep the ceil(density*n) largest-
//       magnitude entries (ties at the threshold: lower flat index wins);
//   (2) elect a per-element sign from the float32 sum of trimmed values;
//   (3) average the trimmed values agreeing with the elected sign
//       (an elected sign of 0 yields 0);
//   (4) output = base + lambda * merged, cast to the storage dtype.
inline Checkpoint ties_core(const Checkpoint& base, std::vector<TaskVector> tvs,
                            double density, double lambda) {
    if (!(density > 0.0 && density <= 1.0))
        throw ValidationError("ties: density must be in (0, 1]");
    if (!std::isfinite(lambda)) throw ValidationError("ties: lambda must be finite");
    const float lam = static_cast<float>(lambda);

    // Trim in place.
    for (auto& tv : tvs) {
        for (auto& [name, values] : tv.deltas) {
            const std::size_t n = values.size();
            if (n == 0) continue;
            auto k = static_cast<std::size_t>(std::ceil(density * static_cast<double>(n)));
            k = std::min(k, n);
            if (k == n) continue;
            std::vector<std::size_t> order(n);
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k) - 1,
                             order.end(), [&](std::size_t x, std::size_t y) {
                                 const float ax = std::fabs(values[x]), ay = std::fabs(values[y]);
                                 if (ax != ay) return ax > ay;
                                 return x < y;
                             });
            std::vector<float> trimmed(n, 0.0f);
            for (std::size_t r = 0; r < k; ++r) trimmed[order[r]] = values[order[r]];
            values = std::move(trimmed);
        }
    }

    return assemble_like(base, [&](const std::string& name) {
        const std::vector<float> vb = tensor_to_f32(base.tensors.at(name));
        std::vector<float> out(vb.size());
        for (std::size_t j = 0; j < vb.size(); ++j) {
            float sign_sum = 0.0f;
            for (const auto& tv : tvs) sign_sum += tv.deltas.at(name)[j];
            const int sign = sign_sum > 0.0f ? 1 : (sign_sum < 0.0f ? -1 : 0);
            float merged = 0.0f;
            if (sign != 0) {
                float sum = 0.0f;
                int count = 0;
                for (const auto& tv : tvs) {
                    const float v = tv.deltas.at(name)[j];
                    if ((sign > 0 && v > 0.0f) || (sign < 0 && v < 0.0f)) {
                        sum += v;
                        ++count;
                    }
                }
                merged = sum / static_cast<float>(count);
            }
            // A zero update returns the base element bitwise.
            out[j] = merged == 0.0f ? vb[j] : vb[j] + lam * merged;
        }
        return out;
    });
}

inline void validate_ties_inputs(const Checkpoint& base, std::span<const Checkpoint> models) {
    if (models.empty()) throw ValidationError("ties: need at least one model");
    std::vector<const Checkpoint*> all;
    all.push_back(&base);
    for (const auto& m : models) all.push_back(&m);
    validate_compatible(std::span<const Checkpoint* const>(all));
}

}  // namespace detail

inline Checkpoint ties_merge(const Checkpoint& base, std::span<const Checkpoint> models,
                             double density, double lambda) {
    detail::validate_ties_inputs(base, models);
    std::vector<TaskVector> tvs;
    tvs.reserve(models.size());
    for (const auto& m : models) tvs.push_back(task_vector(base, m));
    return detail::ties_core(base, std::move(tvs), density, lambda);
}

// DARE-TIES: sparsify each task vector (seed offset by model index), then
// run the TIES steps on the sparsified vectors.
inline Checkpoint dare_ties_merge(const Checkpoint& base, std::span<const Checkpoint> models,
                                  double drop_p, double density, double lambda,
                                  std::uint64_t seed) {
    detail::validate_ties_inputs(base, models);
    if (!(drop_p >= 0.0 && drop_p < 1.0))
        throw ValidationError("dare_ties: drop probability must be in [0, 1)");
    std::vector<TaskVector> tvs;
    tvs.reserve(models.size());
    for (std::size_t i = 0; i < models.size(); ++i)
        tvs.push_back(dare_sparsify(task_vector(base, models[i]), drop_p,
                                    seed + static_cast<std::uint64_t>(i)));
    return detail::ties_core(base, std::move(tvs), density, lambda);
}

}  // namespace polytune
