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

#include <Eigen/Eigenvalues>

using namespace sgdgap;
using namespace sgdgap::testing;

namespace {

Matrix random_psd(Gen& g, Eigen::Index p, Eigen::Index rank) {
    Matrix a(p, rank);
    for (Eigen::Index i = 0; i < p; ++i) {
        for (Eigen::Index j = 0; j < rank; ++j) a(i, j) = g.normal();
    }
    return a * a.transpose();
}

} // namespace

TEST(MomentsFromSamples, HandEvaluated) {
    // rows (1, 0), (3, 2): mean (2, 1), covariance [[2, 2], [2, 2]] with divisor n - 1.
    Matrix g(2, 2);
    g << 1, 0, 3, 2;
    const auto s = moments_from_samples(g);
    EXPECT_EQ(s.mean, (ParamVector(2) << 2, 1).finished());
    ASSERT_TRUE(s.is_full());
    EXPECT_DOUBLE_EQ(s.matrix()(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(s.matrix()(0, 1), 2.0);
    EXPECT_DOUBLE_EQ(s.trace(), 4.0);
    EXPECT_EQ(*s.sample_count, 2u);
}

TEST(MomentsFromSamples, CompressedKeepsTrace) {
    Gen gen(1);
    Matrix g(30, 6);
    for (Eigen::Index i = 0; i < 30; ++i) g.row(i) = gen.vec(6).transpose();
    const auto full = moments_from_samples(g);
    const auto small = moments_from_samples(g, 4);
    EXPECT_FALSE(small.is_full());
    EXPECT_NEAR(small.trace(), full.trace(), 1e-12 * full.trace());
    EXPECT_EQ(small.mean, full.mean);
}

TEST(EstimateMoments, MeanEqualsBatchGradient) {
    Gen gen(3);
    const auto m = ModelSpec::mlp(3, 4, 2);
    const ParamVector theta = initial_params(m);
    const auto b = gen.batch(3, 10);
    const auto s = estimate_moments(m, theta, b);
    EXPECT_LT((s.mean - batch_grad(m, theta, b)).norm(), 1e-14);
    EXPECT_THROW(estimate_moments(m, theta, b.slice(0, 1)), std::invalid_argument);
    const Matrix c = s.matrix();
    EXPECT_LT((c - c.transpose()).norm(), 1e-15);
    Eigen::SelfAdjointEigenSolver<Matrix> es(c);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12 * es.eigenvalues().maxCoeff());
}

TEST(SampleCovariance, MatchesDenseEstimate) {
    Gen gen(5);
    const auto m = ModelSpec::mlp(2, 3, 4);
    const ParamVector theta = initial_params(m);
    const auto b = gen.batch(2, 25);
    const SampleCovariance op(m, theta, b);
    const auto s = estimate_moments(m, theta, b);
    for (int k = 0; k < 5; ++k) {
        const ParamVector v = gen.vec(m.param_count());
        EXPECT_LT((op.apply(v) - s.matrix() * v).norm(), 1e-12 * (1.0 + (s.matrix() * v).norm()));
    }
    EXPECT_NEAR(op.trace(), s.trace(), 1e-12 * s.trace());
}

TEST(PowerDeflation, MatchesEigenSolverOnRandomPsd) {
    Gen gen(7);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::Index p = 6 + static_cast<Eigen::Index>(gen.index(5));
        const Matrix c = random_psd(gen, p, p);
        Eigen::SelfAdjointEigenSolver<Matrix> es(c);
        const auto pairs = top_eigenpairs(c, 3, 1e-10, 100000, 1);
        for (std::size_t j = 0; j < 3; ++j) {
            const auto idx = p - 1 - static_cast<Eigen::Index>(j);
            EXPECT_NEAR(pairs[j].value, es.eigenvalues()(idx), 1e-7 * es.eigenvalues()(p - 1));
            const double align = std::abs(pairs[j].vector.dot(es.eigenvectors().col(idx)));
            EXPECT_NEAR(align, 1.0, 1e-6);
            const double residual = (c * pairs[j].vector - pairs[j].value * pairs[j].vector).norm();
            EXPECT_LE(residual, 1e-10 * es.eigenvalues()(p - 1));
        }
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < 3; ++j) {
                EXPECT_NEAR(pairs[i].vector.dot(pairs[j].vector), i == j ? 1.0 : 0.0, 1e-8);
            }
        }
    }
}

TEST(PowerDeflation, DiagonalHandCase) {
    const Matrix c = (Eigen::VectorXd(3) << 1.0, 5.0, 2.0).finished().asDiagonal();
    const auto pairs = top_eigenpairs(c, 3);
    EXPECT_NEAR(pairs[0].value, 5.0, 1e-7);
    EXPECT_NEAR(pairs[1].value, 2.0, 1e-7);
    EXPECT_NEAR(pairs[2].value, 1.0, 1e-7);
    EXPECT_NEAR(pairs[0].vector(1), 1.0, 1e-6);  // sign fixed positive
}

TEST(PowerDeflation, SameSeedSameVectors) {
    Gen gen(9);
    const Matrix c = random_psd(gen, 5, 5);
    const auto a = top_eigenpairs(c, 2, 1e-8, 10000, 3);
    const auto b = top_eigenpairs(c, 2, 1e-8, 10000, 3);
    EXPECT_EQ(a[0].vector, b[0].vector);
    EXPECT_EQ(a[1].value, b[1].value);
}

TEST(PowerDeflation, FlagsNearDegeneratePairs) {
    const Matrix c = (Eigen::VectorXd(3) << 3.0, 3.0, 1.0).finished().asDiagonal();
    const auto pairs = top_eigenpairs(c, 3);
    EXPECT_TRUE(pairs[0].near_degenerate);
    EXPECT_FALSE(pairs[1].near_degenerate);
    EXPECT_FALSE(pairs[2].near_degenerate);
}

TEST(PowerDeflation, LowRankReturnsZeroTail) {
    Gen gen(11);
    const Matrix c = random_psd(gen, 6, 2);
    const auto pairs = top_eigenpairs(c, 4, 1e-8, 20000, 0);
    EXPECT_GT(pairs[1].value, 0.0);
    EXPECT_LE(pairs[2].value, 1e-8 * pairs[0].value);
    EXPECT_LE(pairs[3].value, 1e-8 * pairs[0].value);
}

TEST(PowerDeflation, ThrowsWhenBudgetTooSmall) {
    Gen gen(13);
    const Matrix c = random_psd(gen, 8, 8);
    try {
        top_eigenpairs(c, 2, 1e-14, 1, 0);
        FAIL() << "expected ConvergenceError";
    } catch (const ConvergenceError& e) {
        EXPECT_GT(e.best_residual(), 0.0);
    }
    const auto r = power_deflation(DenseCovariance(c), 2, 1e-14, 1, 0);
    EXPECT_FALSE(r.converged);
    EXPECT_EQ(r.pairs.size(), 2u);
}

TEST(PowerDeflation, RejectsBadArguments) {
    const Matrix c = Matrix::Identity(3, 3);
    EXPECT_THROW(top_eigenpairs(c, 0), std::invalid_argument);
    EXPECT_THROW(top_eigenpairs(c, 4), std::invalid_argument);
}

TEST(JointCovariance, DisjointBatchesAreUncorrelated) {
    const auto gen = GeneratorSpec::make(2, 1.0);
    const ParamVector theta = gen.teacher + basis(2, 1);
    const auto r = joint_covariance_check(ModelSpec::linear(2), theta, gen, 2, 3, 0, 20000, 5, 20000);
    for (double p : r.predicted) EXPECT_EQ(p, 0.0);
    EXPECT_LT(r.max_abs_z(), 4.0);
    EXPECT_EQ(r.samples.size(), 20000u);
    EXPECT_EQ(r.sample_columns.size(), 4u);
}

TEST(JointCovariance, SharedExampleScalesCovariance) {
    const auto gen = GeneratorSpec::make(2, 0.5);
    const ParamVector theta = gen.teacher + basis(2, 0);
    const auto r = joint_covariance_check(ModelSpec::linear(2), theta, gen, 2, 2, 1, 40000, 8, 40000);
    // Oracle: f Sigma with f = 1/4 and Sigma = (|w|^2 + s^2) I + w w^T.
    const auto o = oracle_stats(theta, gen);
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            const std::size_t k = static_cast<std::size_t>(2 * i + j);
            EXPECT_NEAR(r.predicted[k], 0.25 * o.matrix()(i, j), 4.0 * r.predicted_se[k] + 1e-12);
        }
    }
    EXPECT_LT(r.max_abs_z(), 4.0);
    EXPECT_THROW(joint_covariance_check(ModelSpec::linear(2), theta, gen, 2, 2, 3, 100, 0), std::invalid_argument);
    EXPECT_THROW(joint_covariance_check(ModelSpec::linear(2), theta, gen, 2, 2, 1, 99, 0), std::invalid_argument);
}

TEST(GradTraceCov, LinearAgainstOracle) {
    const auto gen = gen_with_teacher((ParamVector(3) << 0.2, -1.0, 0.5).finished(), 0.7);
    const ParamVector theta = gen.teacher + (ParamVector(3) << 1.0, 0.5, -0.3).finished();
    Stream rng(3, 0, StreamTag::Draw);
    const auto b = sample_batch(gen, 40000, rng, 0);
    const auto est = grad_trace_cov(ModelSpec::linear(3), theta, b);
    const ParamVector truth = 2.0 * 4.0 * (theta - gen.teacher);
    for (Eigen::Index i = 0; i < 3; ++i) {
        ASSERT_GT(est.se(i), 0.0);
        EXPECT_LT(std::abs(est.value(i) - truth(i)) / est.se(i), 4.0) << i;
    }
}

TEST(GradTraceCov, SeCalibratedAcrossReplicates) {
    // Spread of independent estimates should match the reported SE.
    const auto gen = GeneratorSpec::make(2, 1.0);
    const ParamVector theta = gen.teacher + basis(2, 0);
    const auto m = ModelSpec::linear(2);
    std::vector<double> vals, ses;
    for (std::uint32_t r = 0; r < 200; ++r) {
        Stream rng(21, r, StreamTag::Draw);
        const auto est = grad_trace_cov(m, theta, sample_batch(gen, 200, rng, 0));
        vals.push_back(est.value(0));
        ses.push_back(est.se(0));
    }
    double mean = 0.0, var = 0.0, mse = 0.0;
    for (double v : vals) mean += v;
    mean /= 200.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= 199.0;
    for (double s : ses) mse += s * s;
    mse /= 200.0;
    const double ratio = std::sqrt(mse / var);
    EXPECT_GT(ratio, 0.7);
    EXPECT_LT(ratio, 1.4);
    EXPECT_NEAR(mean, 2.0 * 3.0, 4.0 * std::sqrt(var / 200.0));
}

TEST(GradTraceCov, MlpAgainstFiniteDifferenceOfLargeSampleTrace) {
    const auto gen = GeneratorSpec::make(2, 0.5);
    const auto m = ModelSpec::mlp(2, 3, 6);
    const ParamVector theta = initial_params(m);
    Stream rng(4, 0, StreamTag::Draw);
    const auto b = sample_batch(gen, 60000, rng, 0);
    const auto est = grad_trace_cov(m, theta, b);
    const ParamVector fd =
        fd_gradient([&](const ParamVector& t) { return estimate_moments(m, t, b).trace(); }, theta);
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        EXPECT_LT(std::abs(est.value(i) - fd(i)), 4.0 * est.se(i) + 1e-6) << i;
    }
}

TEST(GradTraceCov, RejectsOddOrTinyBatches) {
    Gen gen(1);
    const auto m = ModelSpec::linear(1);
    EXPECT_THROW(grad_trace_cov(m, vec1(0), gen.batch(1, 5)), std::invalid_argument);
    EXPECT_THROW(grad_trace_cov(m, vec1(0), gen.batch(1, 2)), std::invalid_argument);
}

TEST(TrainTestDivergence, HandEvaluated) {
    // train gradients 1 and 3 (mean 2), test gradient 0: 2 * (0 - 2) = -4
    const auto m = ModelSpec::linear(1);
    const auto train = batch_of({ex1(1, 0), ex1(1, -2)});
    const auto test = batch_of({ex1(1, 1)}, 10);
    EXPECT_DOUBLE_EQ(train_test_divergence(m, vec1(1), train, test), -4.0);
}
