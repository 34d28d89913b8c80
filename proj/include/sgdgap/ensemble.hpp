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
#include "sgdgap/oracle.hpp"
#include "sgdgap/report.hpp"
#include "sgdgap/theory.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <type_traits>
#include <vector>

namespace sgdgap {

/// Evaluates fn(i) for i in [0, n) on up to `threads` workers. Results are
/// stored by index, so any reduction over them is schedule-independent.
template <class Fn>
auto parallel_map(std::size_t n, std::size_t threads, Fn&& fn) -> std::vector<std::invoke_result_t<Fn&, std::size_t>> {
    using T = std::invoke_result_t<Fn&, std::size_t>;
    std::vector<std::optional<T>> slots(n);
    const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) slots[i].emplace(fn(i));
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr error;
        std::mutex error_mutex;
        {
            std::vector<std::jthread> pool;
            pool.reserve(workers);
            for (std::size_t w = 0; w < workers; ++w) {
                pool.emplace_back([&] {
                    for (std::size_t i = next++; i < n; i = next++) {
                        try {
                            slots[i].emplace(fn(i));
                        } catch (...) {
                            std::lock_guard lock(error_mutex);
                            if (!error) error = std::current_exception();
                            next = n;
                        }
                    }
                });
            }
        }
        if (error) std::rethrow_exception(error);
    }
    std::vector<T> out;
    out.reserve(n);
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

enum class EnsembleQuantity { DeltaGap, GradientShift, TrainTestDivergence, SgdVsModifiedGd };

inline std::string_view to_string(EnsembleQuantity q) {
    switch (q) {
        case EnsembleQuantity::DeltaGap: return "delta_gap";
        case EnsembleQuantity::GradientShift: return "gradient_shift";
        case EnsembleQuantity::TrainTestDivergence: return "train_test_divergence";
        case EnsembleQuantity::SgdVsModifiedGd: return "sgd_vs_modified_gd";
    }
    return "?";
}

namespace detail {

/// Large fresh sample for estimating distribution-level statistics when no
/// closed form exists. Even size so it can also feed grad_trace_cov.
inline Batch stats_sample(const ExperimentConfig& cfg) {
    Stream rng(cfg.seed, 0, StreamTag::Stats);
    return sample_batch(cfg.generator, cfg.stats_samples - cfg.stats_samples % 2, rng, 0);
}

struct Prediction {
    Eigen::VectorXd value;
    Eigen::VectorXd se;
};

inline Prediction predict(const ExperimentConfig& cfg, EnsembleQuantity q, const ParamVector& theta) {
    const double eta = cfg.learning_rate;
    const double n = static_cast<double>(cfg.n_train);
    const bool linear = cfg.model.kind == ModelKind::LinearQuadratic;
    switch (q) {
        case EnsembleQuantity::DeltaGap:
        case EnsembleQuantity::TrainTestDivergence: {
            double tr = 0.0, se = 0.0;
            if (linear) {
                tr = oracle_trace(theta, cfg.generator);
            } else {
                const auto stats = estimate_moments(cfg.model, theta, stats_sample(cfg));
                tr = stats.trace();
                se = stats.se_trace;
            }
            const double scale = q == EnsembleQuantity::DeltaGap ? eta / n : -1.0 / n;
            return {Eigen::VectorXd::Constant(1, scale * tr), Eigen::VectorXd::Constant(1, std::abs(scale) * se)};
        }
        case EnsembleQuantity::GradientShift: {
            const double scale = -0.5 * eta / n;
            if (linear) {
                const ParamVector g = oracle_grad_trace(theta, cfg.generator);
                return {scale * g, Eigen::VectorXd::Zero(g.size())};
            }
            const auto est = grad_trace_cov(cfg.model, theta, stats_sample(cfg));
            return {scale * est.value, std::abs(scale) * est.se};
        }
        case EnsembleQuantity::SgdVsModifiedGd: {
            const auto p = cfg.model.param_count();
            return {Eigen::VectorXd::Zero(p), Eigen::VectorXd::Zero(p)};
        }
    }
    return {};
}

/// Ensemble sample of one quantity on realization r. The first entries are the
/// measured vector; any extra entries are auxiliary CSV columns.
inline Eigen::VectorXd ensemble_member(const ExperimentConfig& cfg, EnsembleQuantity q, const ParamVector& theta,
                                       std::uint32_t r) {
    const auto real = sample_realization(cfg.generator, cfg.n_train, cfg.n_test, cfg.seed, r);
    const double eta = cfg.learning_rate;
    switch (q) {
        case EnsembleQuantity::DeltaGap: {
            Eigen::VectorXd v(2);
            v(0) = delta_gap(cfg.model, theta, real.train, real.test, eta, GapMode::FirstOrder);
            v(1) = delta_gap(cfg.model, theta, real.train, real.test, eta, GapMode::Exact);
            return v;
        }
        case EnsembleQuantity::TrainTestDivergence:
            return Eigen::VectorXd::Constant(1, train_test_divergence(cfg.model, theta, real.train, real.test));
        case EnsembleQuantity::GradientShift: {
            const auto halves = partition(real.train, 2, cfg.seed, r);
            return gradient_shift(cfg.model, theta, halves[0], halves[1], eta, ShiftMode::Definition);
        }
        case EnsembleQuantity::SgdVsModifiedGd: {
            const auto halves = partition(real.train, 2, cfg.seed, r);
            // Both minibatch orders: the conditional mean over the random order.
            const ParamVector sgd = 0.5 * (two_step_exact(cfg.model, theta, halves[0], halves[1], eta) +
                                           two_step_exact(cfg.model, theta, halves[1], halves[0], eta));
            const auto source = cfg.use_oracle() ? TraceGradSource::Oracle : TraceGradSource::Estimator;
            const ParamVector t1 =
                regularized_gd_step(cfg.model, theta, real.train, eta, cfg.n_train, source, cfg.generator);
            const ParamVector t2 =
                regularized_gd_step(cfg.model, t1, real.train, eta, cfg.n_train, source, cfg.generator);
            return sgd - (t2 - theta);
        }
    }
    return {};
}

inline std::vector<std::string> member_columns(EnsembleQuantity q, Eigen::Index p) {
    switch (q) {
        case EnsembleQuantity::DeltaGap: return {"delta_gap_first_order", "delta_gap_exact"};
        case EnsembleQuantity::TrainTestDivergence: return {"train_test_divergence"};
        case EnsembleQuantity::GradientShift:
        case EnsembleQuantity::SgdVsModifiedGd: {
            std::vector<std::string> cols;
            const std::string prefix = q == EnsembleQuantity::GradientShift ? "dg_" : "diff_";
            for (Eigen::Index i = 0; i < p; ++i) cols.push_back(prefix + std::to_string(i));
            return cols;
        }
    }
    return {};
}

} // namespace detail

/// Monte Carlo ensemble of m realizations at the configured theta, reported as
/// mean +- SE against the leading-order prediction:
///
///   delta_gap              eta tr Sigma / N
///   gradient_shift         -1/2 grad(eta tr Sigma / N)
///   train_test_divergence  -tr Sigma / N
///   sgd_vs_modified_gd     0 (residual is O(eta^3))
///
/// Predictions use the closed-form oracle for the linear model and a large
/// fresh sample (cfg.stats_samples) otherwise. The result is a pure function of
/// (cfg, q, m); `threads` only changes wall time.
inline TheoryReport ensemble_report(const ExperimentConfig& cfg, EnsembleQuantity q, std::size_t m,
                                    std::size_t threads = 1) {
    detail::require(m >= 2, "ensemble needs at least two realizations");
    detail::require(m <= 0xFFFFFFFFull, "ensemble size exceeds the stream index range");
    cfg.validate();
    const ParamVector theta = cfg.resolved_theta();

    const auto members = parallel_map(m, threads, [&](std::size_t r) {
        return detail::ensemble_member(cfg, q, theta, static_cast<std::uint32_t>(r));
    });

    const auto pred = detail::predict(cfg, q, theta);
    const auto dim = pred.value.size();
    std::vector<Eigen::VectorXd> measured;
    measured.reserve(m);
    for (const auto& v : members) measured.push_back(v.head(dim));
    const auto stats = mean_and_se(measured);

    TheoryReport r;
    r.name = std::string(to_string(q));
    r.measured = to_std(stats.mean);
    r.se = to_std(stats.se);
    r.predicted = to_std(pred.value);
    r.predicted_se = to_std(pred.se);
    fill_z(r);
    r.meta = {cfg.learning_rate, cfg.n_train, m, cfg.seed, describe_model(cfg.model),
              describe_generator(cfg.generator)};
    r.sample_columns = detail::member_columns(q, cfg.model.param_count());
    r.samples.reserve(m);
    for (const auto& v : members) r.samples.push_back(to_std(v));
    return r;
}

} // namespace sgdgap
