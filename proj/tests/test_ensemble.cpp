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

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <atomic>

using namespace sgdgap;
using namespace sgdgap::testing;

namespace {

ExperimentConfig linear_config(std::size_t d, std::size_t n, double eta) {
    ExperimentConfig c;
    c.generator = GeneratorSpec::make(d, 1.0);
    c.model = ModelSpec::linear(d);
    c.n_train = c.n_test = n;
    c.learning_rate = eta;
    c.seed = 5;
    return c;
}

} // namespace

TEST(ParallelMap, OrderedAndThreadIndependent) {
    auto f = [](std::size_t i) { return static_cast<double>(i * i); };
    const auto a = parallel_map(1000, 1, f);
    const auto b = parallel_map(1000, 7, f);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a[31], 961.0);
}

TEST(ParallelMap, PropagatesExceptions) {
    EXPECT_THROW(parallel_map(100, 4,
                              [](std::size_t i) {
                                  if (i == 57) throw std::runtime_error("boom");
                                  return i;
                              }),
                 std::runtime_error);
}

TEST(ParallelMap, EveryIndexOnce) {
    std::atomic<int> calls{0};
    const auto r = parallel_map(500, 8, [&](std::size_t i) {
        ++calls;
        return i;
    });
    EXPECT_EQ(calls.load(), 500);
    for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(r[i], i);
}

TEST(Ensemble, ReportIsBitIdenticalAcrossThreadCounts) {
    const auto c = linear_config(2, 10, 1e-2);
    const auto a = ensemble_report(c, EnsembleQuantity::GradientShift, 300, 1);
    const auto b = ensemble_report(c, EnsembleQuantity::GradientShift, 300, 5);
    EXPECT_EQ(a.measured, b.measured);
    EXPECT_EQ(a.se, b.se);
    EXPECT_EQ(a.samples, b.samples);
}

TEST(Ensemble, DeltaGapMatchesOracle) {
    const auto c = linear_config(3, 20, 1e-3);
    const auto r = ensemble_report(c, EnsembleQuantity::DeltaGap, 20000, 4);
    ASSERT_EQ(r.measured.size(), 1u);
    EXPECT_DOUBLE_EQ(r.predicted[0], 1e-3 * (4.0 + 3.0) / 20.0);
    EXPECT_LT(r.max_abs_z(), 4.0);
    EXPECT_EQ(r.sample_columns.size(), 2u);
}

TEST(Ensemble, TrainTestDivergenceMatchesOracle) {
    const auto c = linear_config(2, 10, 1e-3);
    const auto r = ensemble_report(c, EnsembleQuantity::TrainTestDivergence, 20000, 4);
    EXPECT_DOUBLE_EQ(r.predicted[0], -(3.0 + 2.0) / 10.0);
    EXPECT_LT(r.max_abs_z(), 4.0);
}

TEST(Ensemble, GradientShiftMatchesOracle) {
    const auto c = linear_config(2, 10, 1e-3);
    const auto r = ensemble_report(c, EnsembleQuantity::GradientShift, 40000, 4);
    // -1/2 (eta / N) 2 (d + 1) w with w = e1
    EXPECT_DOUBLE_EQ(r.predicted[0], -0.5 * 1e-4 * 6.0);
    EXPECT_EQ(r.predicted[1], 0.0);
    EXPECT_LT(r.max_abs_z(), 4.0);
}

TEST(Ensemble, GradientShiftMlpUsesEstimatedPrediction) {
    auto c = linear_config(2, 10, 1e-3);
    c.model = ModelSpec::mlp(2, 3, 2);
    c.stats_samples = 20000;
    const auto r = ensemble_report(c, EnsembleQuantity::GradientShift, 20000, 4);
    ASSERT_EQ(r.measured.size(), static_cast<std::size_t>(c.model.param_count()));
    for (double s : r.predicted_se) EXPECT_GT(s, 0.0);
    EXPECT_LT(r.max_abs_z(), 4.5);
}

// k disjoint batches: mean shift -eta (k - 1) / (2N) grad tr Sigma.
TEST(EpochShift, ScalesWithBatchCount) {
    const std::size_t n = 48;
    const double eta = 1e-3;
    const auto gen = GeneratorSpec::make(2, 1.0);
    const auto m = ModelSpec::linear(2);
    const ParamVector theta = gen.teacher + basis(2, 0);
    const ParamVector grad_tr = oracle_grad_trace(theta, gen);
    for (std::size_t k : {2u, 4u}) {
        const auto members = parallel_map(20000, 4, [&](std::size_t r) -> Eigen::VectorXd {
            const auto real = sample_realization(gen, n, 1, 17, static_cast<std::uint32_t>(r));
            const auto parts = partition(real.train, k, 17, static_cast<std::uint32_t>(r));
            return epoch_gradient_shift(m, theta, parts, eta);
        });
        const auto s = mean_and_se(members);
        const ParamVector expect = -eta * (static_cast<double>(k) - 1.0) / (2.0 * n) * grad_tr;
        for (Eigen::Index i = 0; i < 2; ++i) {
            EXPECT_LT(std::abs(s.mean(i) - expect(i)) / s.se(i), 4.0) << "k=" << k << " i=" << i;
        }
    }
}

TEST(Ensemble, SgdVsModifiedGdResidualShrinksFasterThanEta) {
    auto c = linear_config(5, 50, 0.1);
    c.ensemble_size = 2000;
    std::vector<std::pair<double, double>> pts;
    for (double eta : {0.1, 0.2, 0.4}) {
        c.learning_rate = eta;
        const auto r = ensemble_report(c, EnsembleQuantity::SgdVsModifiedGd, c.ensemble_size, 4);
        double n2 = 0.0;
        for (double v : r.measured) n2 += v * v;
        pts.emplace_back(eta, std::sqrt(n2));
    }
    EXPECT_GT(order_exponent(pts), 2.5);
}

TEST(Ensemble, RejectsTooFewMembers) {
    EXPECT_THROW(ensemble_report(linear_config(1, 4, 0.1), EnsembleQuantity::DeltaGap, 1), std::invalid_argument);
}

TEST(Training, GdDecreasesTrainLoss) {
    auto c = linear_config(3, 20, 0.05);
    c.steps = 50;
    const auto t = run_training(c, Algorithm::Gd);
    ASSERT_EQ(t.steps.size(), 51u);
    EXPECT_LT(t.steps.back().train_loss, t.steps.front().train_loss);
    for (const auto& r : t.steps) EXPECT_NEAR(r.gap, r.test_loss - r.train_loss, 1e-15);
}

TEST(Training, AllAlgorithmsRunAndRecordTheta) {
    auto c = linear_config(2, 12, 0.05);
    c.steps = 8;
    c.minibatches = 3;
    c.record_theta = true;
    for (auto alg : c.algorithms) {
        const auto t = run_training(c, alg);
        ASSERT_EQ(t.steps.size(), 9u);
        EXPECT_TRUE(t.steps[3].theta.has_value());
        for (const auto& r : t.steps) EXPECT_TRUE(std::isfinite(r.train_loss));
    }
}

TEST(Training, MonitorTraceHandEvaluated) {
    // gradients 1 and 3: mean square 5, squared mean 4.
    const auto m = ModelSpec::linear(1);
    EXPECT_DOUBLE_EQ(monitor_trace(m, vec1(1), batch_of({ex1(1, 0), ex1(1, -2)})), 1.0);
}

TEST(Training, PreconditionedSgdMatchesPlainSgdWhenNoSpread) {
    // Noise-free data at the teacher: every gradient is zero, so both stay put.
    auto c = linear_config(2, 8, 0.1);
    c.generator.noise_std = 0.0;
    c.theta = c.generator.teacher;
    c.steps = 4;
    const auto a = run_training(c, Algorithm::SgdPreconditioned);
    EXPECT_EQ(a.steps.back().train_loss, 0.0);
}
