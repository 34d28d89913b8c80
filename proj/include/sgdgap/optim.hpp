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

#include "sgdgap/core.hpp"
#include "sgdgap/gradstats.hpp"
#include "sgdgap/models.hpp"
#include "sgdgap/oracle.hpp"

#include <concepts>
#include <optional>
#include <span>

namespace sgdgap {

inline ParamVector gd_step(const ModelSpec& model, const ParamVector& theta, const Batch& train, double eta) {
    detail::require(eta >= 0.0, "learning rate must be nonnegative");
    return theta - eta * batch_grad(model, theta, train);
}

/// One pass of sequential steps over the minibatches, gradients re-evaluated
/// at the current parameters.
inline ParamVector sgd_epoch(const ModelSpec& model, const ParamVector& theta, std::span<const Batch> batches,
                             double eta) {
    detail::require(!batches.empty(), "sgd_epoch needs at least one batch");
    ParamVector cur = theta;
    for (const auto& b : batches) cur = gd_step(model, cur, b, eta);
    return cur;
}

enum class TraceGradSource { Oracle, Estimator };

/// GD on the modified loss l + (1/4) <deps> with <deps> = eta tr Sigma / n:
/// theta - eta [g + eta / (4 n) grad tr Sigma(theta)].
template <class TraceGrad>
    requires std::invocable<TraceGrad, const ParamVector&>
ParamVector regularized_gd_step(const ModelSpec& model, const ParamVector& theta, const Batch& train, double eta,
                                std::size_t n, TraceGrad&& trace_grad) {
    detail::require(eta > 0.0, "learning rate must be positive");
    detail::require(n >= 1, "n must be >= 1");
    const ParamVector g = batch_grad(model, theta, train);
    const ParamVector reg = trace_grad(theta);
    return theta - eta * (g + (eta / (4.0 * static_cast<double>(n))) * reg);
}

/// Source-selecting overload. The oracle needs the linear model and the
/// generator; the estimator uses grad_trace_cov on the training batch.
inline ParamVector regularized_gd_step(const ModelSpec& model, const ParamVector& theta, const Batch& train,
                                       double eta, std::size_t n, TraceGradSource source,
                                       const std::optional<GeneratorSpec>& gen = std::nullopt) {
    if (source == TraceGradSource::Oracle) {
        detail::require(model.kind == ModelKind::LinearQuadratic, "oracle trace gradient requires the linear model");
        detail::require(gen.has_value(), "oracle trace gradient requires the generator");
        return regularized_gd_step(model, theta, train, eta, n,
                                   [&](const ParamVector& t) { return oracle_grad_trace(t, *gen); });
    }
    return regularized_gd_step(model, theta, train, eta, n,
                               [&](const ParamVector& t) { return grad_trace_cov(model, t, train).value; });
}

/// Applies the inverse of the surrogate V diag(sigma) V^T + lambda I to g:
/// sum_i v_i (v_i.g) / (sigma_i + lambda) + (g - sum_i v_i (v_i.g)) / lambda.
inline ParamVector apply_preconditioner(const ParamVector& g, std::span<const EigenPair> eigenpairs, double lambda) {
    detail::require(lambda > 0.0, "preconditioner lambda must be positive");
    for (std::size_t i = 0; i < eigenpairs.size(); ++i) {
        detail::require(eigenpairs[i].vector.size() == g.size(), "eigenvector length does not match the gradient");
        if (i > 0) detail::require(eigenpairs[i].value <= eigenpairs[i - 1].value, "eigenpairs must be descending");
        for (std::size_t j = i; j < eigenpairs.size(); ++j) {
            const double gram = eigenpairs[i].vector.dot(eigenpairs[j].vector);
            const double expect = i == j ? 1.0 : 0.0;
            detail::require(std::abs(gram - expect) <= 1e-6, "eigenpairs must be orthonormal");
        }
    }
    ParamVector along = ParamVector::Zero(g.size());
    ParamVector projected = ParamVector::Zero(g.size());
    for (const auto& p : eigenpairs) {
        const double c = p.vector.dot(g);
        projected += c * p.vector;
        along += (c / (p.value + lambda)) * p.vector;
    }
    return along + (g - projected) / lambda;
}

/// theta - eta * (Sigma surrogate)^{-1} g with g the batch gradient.
inline ParamVector preconditioned_sgd_step(const ModelSpec& model, const ParamVector& theta, const Batch& batch,
                                           double eta, std::span<const EigenPair> eigenpairs, double lambda) {
    const ParamVector g = batch_grad(model, theta, batch);
    return theta - eta * apply_preconditioner(g, eigenpairs, lambda);
}

} // namespace sgdgap
