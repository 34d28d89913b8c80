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

#include "sgdgap/config.hpp"
#include "sgdgap/data.hpp"
#include "sgdgap/gradstats.hpp"
#include "sgdgap/optim.hpp"

#include <optional>
#include <vector>

namespace sgdgap {

struct TrajectoryRecord {
    std::size_t step = 0;
    std::optional<ParamVector> theta;
    double train_loss = 0.0;
    double test_loss = 0.0;
    double gap = 0.0;
    double trace = 0.0;
};

struct Trajectory {
    Algorithm algorithm = Algorithm::Gd;
    std::vector<TrajectoryRecord> steps;
};

/// Monitoring trace: mean squared per-example gradient minus squared mean
/// gradient over the batch (divisor n).
inline double monitor_trace(const ModelSpec& model, const ParamVector& theta, const Batch& batch) {
    const Matrix g = per_example_grads(model, theta, batch);
    const double n = static_cast<double>(batch.size());
    return g.squaredNorm() / n - g.colwise().mean().squaredNorm();
}

namespace detail {

/// Eigenpairs and lambda for the preconditioner from the minibatch covariance.
/// Returns lambda = 0 when the minibatch gradients show no spread.
inline std::pair<std::vector<EigenPair>, double> preconditioner_for(const ExperimentConfig& cfg,
                                                                   const ParamVector& theta, const Batch& batch,
                                                                   std::uint64_t seed) {
    const SampleCovariance cov(cfg.model, theta, batch);
    const auto k = std::min<std::size_t>({cfg.precond_k, static_cast<std::size_t>(cov.dim()), batch.size() - 1});
    auto solve = power_deflation(cov, k, 1e-8, 10000, seed);
    // Unconverged pairs are still orthonormal best iterates; good enough for a surrogate.
    const double sigma1 = solve.pairs.front().value;
    if (!(sigma1 > 0.0)) return {{}, 0.0};
    return {std::move(solve.pairs), cfg.precond_lambda_ratio * sigma1};
}

} // namespace detail

/// Runs one algorithm for cfg.steps updates on realization 0, recording losses,
/// gap and the gradient-covariance trace before the first and after every step.
/// SGD-type algorithms walk through cfg.minibatches minibatches per epoch,
/// reshuffled each epoch.
inline Trajectory run_training(const ExperimentConfig& cfg, Algorithm algorithm) {
    cfg.validate();
    detail::require(cfg.steps >= 1, "steps must be >= 1");
    const bool minibatched = algorithm == Algorithm::Sgd || algorithm == Algorithm::SgdPreconditioned;
    if (algorithm == Algorithm::SgdPreconditioned) {
        detail::require(cfg.n_train / cfg.minibatches >= 2,
                        "preconditioned SGD needs minibatches of at least two examples");
    }

    const auto real = sample_realization(cfg.generator, cfg.n_train, cfg.n_test, cfg.seed, 0);
    ParamVector theta = cfg.resolved_theta();
    const auto source = cfg.use_oracle() ? TraceGradSource::Oracle : TraceGradSource::Estimator;
    if (algorithm == Algorithm::GdRegularized && source == TraceGradSource::Estimator) {
        detail::require(cfg.n_train >= 4 && cfg.n_train % 2 == 0,
                        "estimator-regularized GD needs an even training set of at least four");
    }

    Trajectory traj;
    traj.algorithm = algorithm;
    auto record = [&](std::size_t step) {
        TrajectoryRecord rec;
        rec.step = step;
        if (cfg.record_theta) rec.theta = theta;
        rec.train_loss = batch_loss(cfg.model, theta, real.train);
        rec.test_loss = batch_loss(cfg.model, theta, real.test);
        rec.gap = rec.test_loss - rec.train_loss;
        rec.trace = monitor_trace(cfg.model, theta, real.train);
        traj.steps.push_back(std::move(rec));
    };

    record(0);
    std::vector<Batch> epoch;
    for (std::size_t t = 0; t < cfg.steps; ++t) {
        const double eta = cfg.learning_rate;
        if (minibatched && t % cfg.minibatches == 0) {
            epoch = partition(real.train, cfg.minibatches, cfg.seed, static_cast<std::uint32_t>(t / cfg.minibatches));
        }
        switch (algorithm) {
            case Algorithm::Gd:
                theta = gd_step(cfg.model, theta, real.train, eta);
                break;
            case Algorithm::Sgd:
                theta = gd_step(cfg.model, theta, epoch[t % cfg.minibatches], eta);
                break;
            case Algorithm::GdRegularized:
                theta = regularized_gd_step(cfg.model, theta, real.train, eta, cfg.n_train, source, cfg.generator);
                break;
            case Algorithm::SgdPreconditioned: {
                const Batch& mb = epoch[t % cfg.minibatches];
                const auto [pairs, lambda] = detail::preconditioner_for(cfg, theta, mb, cfg.seed + t);
                if (lambda > 0.0) {
                    theta = preconditioned_sgd_step(cfg.model, theta, mb, eta, pairs, lambda);
                } else {
                    theta = gd_step(cfg.model, theta, mb, eta);
                }
                break;
            }
        }
        record(t + 1);
    }
    return traj;
}

} // namespace sgdgap
