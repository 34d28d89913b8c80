/*
   Copyright 2026 The sgdgap Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

#pragma once

// Learning-rate expansions of one and two gradient steps, evaluated both
// directly ("exact") and through their leading-order formulas.
//
// Sign convention for the gradient shift dg: with D = B u C,
//
//     dtheta_2(GD on D, twice) - dtheta_2(SGD on B then C)  ==  -eta * dg
//
// so the ensemble mean <dg> = -1/2 d<deps>/dtheta is a *negative* multiple of
// grad tr Sigma, and <dtheta_2^SGD> = <dtheta_2^GD> - (eta/2) grad <deps>.

#include "sgdgap/core.hpp"
#include "sgdgap/gradstats.hpp"
#include "sgdgap/models.hpp"

#include <array>
#include <span>
#include <utility>
#include <vector>

namespace sgdgap {

enum class GapMode { Exact, FirstOrder };
enum class ShiftMode { Definition, ClosedForm };

/// -eta g_a . g_b
inline double delta_loss_first_order(const ParamVector& g_a, const ParamVector& g_b, double eta) {
    detail::require(g_a.size() == g_b.size(), "gradient lengths differ");
    detail::require(eta >= 0.0, "learning rate must be nonnegative");
    return -eta * g_a.dot(g_b);
}

/// Change of the loss on a after one gradient step on b.
inline double delta_loss_exact(const ModelSpec& model, const ParamVector& theta, const Batch& a, const Batch& b,
                               double eta) {
    const ParamVector next = theta - eta * batch_grad(model, theta, b);
    return batch_loss(model, next, a) - batch_loss(model, theta, a);
}

/// Ensemble-mean loss change -eta (|G|^2 + overlap_f tr Sigma).
inline double predicted_avg_delta_loss(const GradientStats& stats, double overlap_f, double eta) {
    return -eta * (stats.mean.squaredNorm() + overlap_f * stats.trace());
}

/// Change of the generalization gap (test-loss change minus train-loss change)
/// after one step on the training batch.
inline double delta_gap(const ModelSpec& model, const ParamVector& theta, const Batch& train, const Batch& test,
                        double eta, GapMode mode) {
    detail::require(disjoint(train, test), "train and test batches must not share ids");
    if (mode == GapMode::Exact) {
        return delta_loss_exact(model, theta, test, train, eta) - delta_loss_exact(model, theta, train, train, eta);
    }
    const ParamVector g_tr = batch_grad(model, theta, train);
    const ParamVector g_te = batch_grad(model, theta, test);
    return eta * g_tr.dot(g_tr - g_te);
}

/// eta tr Sigma / n
inline double predicted_avg_delta_gap(double trace, double eta, std::size_t n) {
    detail::require(trace >= 0.0, "trace must be nonnegative");
    detail::require(n >= 1, "n must be >= 1");
    return eta * trace / static_cast<double>(n);
}

namespace detail {

/// theta_k - theta_0 after sequential steps on the given batches.
inline ParamVector sequential_displacement(const ModelSpec& model, const ParamVector& theta,
                                           std::span<const Batch* const> batches, double eta) {
    // Accumulated directly; subtracting theta at the end would cost the low bits.
    ParamVector disp = ParamVector::Zero(theta.size());
    for (const Batch* b : batches) disp -= eta * batch_grad(model, theta + disp, *b);
    return disp;
}

inline void require_pairwise_disjoint_equal(std::span<const Batch* const> batches) {
    for (std::size_t i = 0; i < batches.size(); ++i) {
        require(batches[i]->size() == batches.front()->size(), "batches must have equal sizes");
        for (std::size_t j = i + 1; j < batches.size(); ++j) {
            require(disjoint(*batches[i], *batches[j]), "batches must be disjoint");
        }
    }
}

inline Batch union_of(std::span<const Batch* const> batches) {
    Batch u = *batches.front();
    for (std::size_t i = 1; i < batches.size(); ++i) u = concat(u, *batches[i]);
    return u;
}

} // namespace detail

/// theta_2 - theta_0 for a step on b followed by a step on c.
inline ParamVector two_step_exact(const ModelSpec& model, const ParamVector& theta, const Batch& b, const Batch& c,
                                  double eta) {
    const std::array<const Batch*, 2> seq{&b, &c};
    return detail::sequential_displacement(model, theta, seq, eta);
}

/// Second-order expansion -eta (g_b + g_c) + eta^2 h_c g_b, all at theta.
inline ParamVector two_step_taylor(const ModelSpec& model, const ParamVector& theta, const Batch& b, const Batch& c,
                                   double eta) {
    const ParamVector gb = batch_grad(model, theta, b);
    const ParamVector gc = batch_grad(model, theta, c);
    return -eta * (gb + gc) + eta * eta * batch_hvp(model, theta, c, gb);
}

/// Effective gradient difference between two full-batch GD steps on b u c and
/// SGD steps on b then c. See the sign convention at the top of this file.
///
/// ClosedForm evaluates -(eta/8) [grad |g_b - g_c|^2 + 4 (h_b g_c - h_c g_b)],
/// with grad |g_b - g_c|^2 = 2 (h_b - h_c)(g_b - g_c).
inline ParamVector gradient_shift(const ModelSpec& model, const ParamVector& theta, const Batch& b, const Batch& c,
                                  double eta, ShiftMode mode) {
    detail::require(eta > 0.0, "learning rate must be positive");
    const std::array<const Batch*, 2> seq{&b, &c};
    detail::require_pairwise_disjoint_equal(seq);

    if (mode == ShiftMode::Definition) {
        const Batch all = concat(b, c);
        const ParamVector gd = two_step_exact(model, theta, all, all, eta);
        const ParamVector sgd = two_step_exact(model, theta, b, c, eta);
        return (gd - sgd) / (-eta);
    }

    const ParamVector gb = batch_grad(model, theta, b);
    const ParamVector gc = batch_grad(model, theta, c);
    const ParamVector diff = gb - gc;
    const ParamVector grad_sq = 2.0 * (batch_hvp(model, theta, b, diff) - batch_hvp(model, theta, c, diff));
    const ParamVector asym = batch_hvp(model, theta, b, gc) - batch_hvp(model, theta, c, gb);
    return -(eta / 8.0) * (grad_sq + 4.0 * asym);
}

/// k-batch generalization of the gradient shift: (k GD steps on the union minus
/// one SGD pass over the batches) / (-eta k / 2). Reduces to the definition-mode
/// gradient_shift for k = 2.
inline ParamVector epoch_gradient_shift(const ModelSpec& model, const ParamVector& theta,
                                        std::span<const Batch> batches, double eta) {
    detail::require(batches.size() >= 2, "epoch shift needs at least two batches");
    detail::require(eta > 0.0, "learning rate must be positive");
    std::vector<const Batch*> seq;
    for (const auto& b : batches) seq.push_back(&b);
    detail::require_pairwise_disjoint_equal(seq);

    const Batch all = detail::union_of(seq);
    const std::vector<const Batch*> gd_seq(batches.size(), &all);
    const ParamVector gd = detail::sequential_displacement(model, theta, gd_seq, eta);
    const ParamVector sgd = detail::sequential_displacement(model, theta, seq, eta);
    const double k = static_cast<double>(batches.size());
    return (gd - sgd) / (-eta * (k / 2.0));
}

/// Least-squares slope of log(residual) against log(eta).
inline double order_exponent(std::span<const std::pair<double, double>> values) {
    detail::require(values.size() >= 3, "order fit needs at least three points");
    double sx = 0.0, sy = 0.0;
    for (const auto& [eta, res] : values) {
        detail::require(eta > 0.0, "order fit needs positive learning rates");
        detail::require(res > 0.0, "order fit needs positive residuals; take norms first");
        sx += std::log(eta);
        sy += std::log(res);
    }
    const double n = static_cast<double>(values.size());
    const double mx = sx / n;
    const double my = sy / n;
    double sxx = 0.0, sxy = 0.0;
    for (const auto& [eta, res] : values) {
        const double dx = std::log(eta) - mx;
        sxx += dx * dx;
        sxy += dx * (std::log(res) - my);
    }
    detail::require(sxx > 0.0, "order fit needs distinct learning rates");
    return sxy / sxx;
}

} // namespace sgdgap
