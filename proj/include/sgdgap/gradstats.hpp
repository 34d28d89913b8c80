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
#include "sgdgap/data.hpp"
#include "sgdgap/models.hpp"
#include "sgdgap/report.hpp"
#include "sgdgap/rng.hpp"

#include <concepts>
#include <limits>
#include <optional>
#include <variant>

namespace sgdgap {

/// Models with more parameters than this keep only the covariance trace.
inline constexpr Eigen::Index kMaxDenseParams = 512;

struct EigenPair {
    double value = 0.0;
    ParamVector vector;
    /// Set when the gap to the next returned eigenvalue is below 1e-6 * sigma_1;
    /// the vector is then one seed-dependent member of a (near) eigenspace.
    bool near_degenerate = false;
};

struct CompressedCovariance {
    double trace = 0.0;
    std::vector<EigenPair> eigenpairs;
};

/// Gradient mean G and covariance Sigma, estimated from samples or exact.
struct GradientStats {
    ParamVector mean;
    std::variant<Matrix, CompressedCovariance> covariance;
    /// Number of samples; empty for exact (closed-form) statistics.
    std::optional<std::size_t> sample_count;
    ParamVector se_mean;
    /// Standard errors of the dense covariance entries (empty when exact or compressed).
    Matrix se_covariance;
    double se_trace = 0.0;

    bool is_full() const { return std::holds_alternative<Matrix>(covariance); }
    const Matrix& matrix() const { return std::get<Matrix>(covariance); }

    double trace() const {
        if (is_full()) return matrix().trace();
        return std::get<CompressedCovariance>(covariance).trace;
    }
};

// -----------------------------------------------------------------------------
// Covariance operators and the eigensolver
// -----------------------------------------------------------------------------

template <class Op>
concept CovarianceOperator = requires(const Op& op, const ParamVector& v) {
    { op.dim() } -> std::convertible_to<Eigen::Index>;
    { op.apply(v) } -> std::convertible_to<ParamVector>;
    { op.trace() } -> std::convertible_to<double>;
};

class DenseCovariance {
public:
    explicit DenseCovariance(Matrix m) : m_(std::move(m)) {
        detail::require(m_.rows() == m_.cols() && m_.rows() >= 1, "covariance must be square and nonempty");
    }
    Eigen::Index dim() const { return m_.rows(); }
    ParamVector apply(const ParamVector& v) const { return m_ * v; }
    double trace() const { return m_.trace(); }

private:
    Matrix m_;
};

/// Matrix-free sample covariance over stored per-example gradients:
/// Sigma v = C^T (C v) / (n - 1) with C the centered gradient rows.
class SampleCovariance {
public:
    explicit SampleCovariance(const Matrix& per_example) {
        detail::require(per_example.rows() >= 2, "sample covariance needs at least two samples");
        centered_ = per_example.rowwise() - per_example.colwise().mean();
        denom_ = static_cast<double>(per_example.rows() - 1);
    }
    SampleCovariance(const ModelSpec& model, const ParamVector& theta, const Batch& batch)
        : SampleCovariance(per_example_grads(model, theta, batch)) {}

    Eigen::Index dim() const { return centered_.cols(); }
    ParamVector apply(const ParamVector& v) const { return centered_.transpose() * (centered_ * v) / denom_; }
    double trace() const { return centered_.squaredNorm() / denom_; }

private:
    Matrix centered_;
    double denom_ = 1.0;
};

struct EigenSolveResult {
    std::vector<EigenPair> pairs;
    bool converged = true;
    double worst_residual = 0.0;
};

namespace detail {

inline void orthogonalize(ParamVector& v, const std::vector<EigenPair>& found) {
    // Two passes of classical Gram-Schmidt.
    for (int pass = 0; pass < 2; ++pass) {
        for (const auto& p : found) v -= p.vector.dot(v) * p.vector;
    }
}

inline void fix_sign(ParamVector& v) {
    Eigen::Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    if (v(imax) < 0.0) v = -v;
}

} // namespace detail

/// Power iteration with deflation. Pairs that fail to converge within max_iter
/// are still returned (best iterate), with converged = false.
template <CovarianceOperator Op>
EigenSolveResult power_deflation(const Op& op, std::size_t k, double tol = 1e-8, std::size_t max_iter = 10000,
                                 std::uint64_t seed = 0) {
    const Eigen::Index p = op.dim();
    detail::require(k >= 1, "need k >= 1 eigenpairs");
    detail::require(static_cast<Eigen::Index>(k) <= p, "cannot request more eigenpairs than the dimension");
    detail::require(tol > 0.0 && max_iter >= 1, "tolerance and iteration budget must be positive");

    const double trace_scale = op.trace() / static_cast<double>(p);
    EigenSolveResult out;

    for (std::size_t j = 0; j < k; ++j) {
        Stream rng(seed, static_cast<std::uint32_t>(j), StreamTag::EigenStart);
        ParamVector v(p);
        for (Eigen::Index i = 0; i < p; ++i) v(i) = rng.normal();
        detail::orthogonalize(v, out.pairs);
        v.normalize();

        double best_residual = std::numeric_limits<double>::infinity();
        ParamVector best_v = v;
        double best_sigma = 0.0;
        bool converged = false;

        for (std::size_t it = 0; it < max_iter; ++it) {
            const ParamVector av = op.apply(v);
            const double sigma = v.dot(av);
            const double residual = (av - sigma * v).norm();
            const double sigma1 = out.pairs.empty() ? sigma : out.pairs.front().value;
            const double scale = std::max(sigma1, trace_scale);
            if (residual < best_residual) {
                best_residual = residual;
                best_v = v;
                best_sigma = sigma;
            }
            if (residual <= tol * scale) {
                converged = true;
                break;
            }
            ParamVector next = av;
            detail::orthogonalize(next, out.pairs);
            const double nn = next.norm();
            if (nn == 0.0) break;  // operator vanishes on the complement
            v = next / nn;
        }
        if (!converged) {
            out.converged = false;
        }
        out.worst_residual = std::max(out.worst_residual, best_residual);
        detail::fix_sign(best_v);
        out.pairs.push_back({std::max(best_sigma, 0.0), best_v, false});
    }

    const double sigma1 = out.pairs.front().value;
    for (std::size_t j = 0; j + 1 < out.pairs.size(); ++j) {
        out.pairs[j].near_degenerate = out.pairs[j].value - out.pairs[j + 1].value < 1e-6 * sigma1;
    }
    return out;
}

/// Top-k eigenpairs, descending, by power iteration with deflation from seeded
/// start vectors. Each pair satisfies |Sigma v - sigma v| <= tol * max(sigma_1, tr/P).
template <CovarianceOperator Op>
std::vector<EigenPair> top_eigenpairs(const Op& op, std::size_t k, double tol = 1e-8, std::size_t max_iter = 10000,
                                      std::uint64_t seed = 0) {
    auto r = power_deflation(op, k, tol, max_iter, seed);
    if (!r.converged) {
        throw ConvergenceError("power iteration did not converge", r.worst_residual);
    }
    return std::move(r.pairs);
}

inline std::vector<EigenPair> top_eigenpairs(const Matrix& cov, std::size_t k, double tol = 1e-8,
                                             std::size_t max_iter = 10000, std::uint64_t seed = 0) {
    return top_eigenpairs(DenseCovariance(cov), k, tol, max_iter, seed);
}

inline std::vector<EigenPair> top_eigenpairs(const GradientStats& stats, std::size_t k, double tol = 1e-8,
                                             std::size_t max_iter = 10000, std::uint64_t seed = 0) {
    if (stats.is_full()) return top_eigenpairs(stats.matrix(), k, tol, max_iter, seed);
    const auto& c = std::get<CompressedCovariance>(stats.covariance);
    detail::require(c.eigenpairs.size() >= k,
                    "compressed statistics hold too few eigenpairs; use a SampleCovariance operator");
    return {c.eigenpairs.begin(), c.eigenpairs.begin() + static_cast<std::ptrdiff_t>(k)};
}

// -----------------------------------------------------------------------------
// Moment estimation
// -----------------------------------------------------------------------------

/// Moments of a sample of gradient rows (n x P).
inline GradientStats moments_from_samples(const Matrix& g, Eigen::Index max_dense = kMaxDenseParams) {
    const auto n = g.rows();
    detail::require(n >= 2, "moment estimation needs at least two samples");
    const double dn = static_cast<double>(n);

    GradientStats s;
    s.mean = g.colwise().mean().transpose();
    const Matrix c = g.rowwise() - s.mean.transpose();
    s.sample_count = static_cast<std::size_t>(n);

    const Eigen::VectorXd sq_norms = c.rowwise().squaredNorm();
    const double trace = sq_norms.sum() / (dn - 1.0);
    s.se_trace = std::sqrt((sq_norms.array() - sq_norms.mean()).square().sum() / (dn - 1.0) / dn);

    const Eigen::VectorXd var = c.colwise().squaredNorm().transpose() / (dn - 1.0);
    s.se_mean = (var / dn).cwiseSqrt();

    if (g.cols() <= max_dense) {
        Matrix cov = c.transpose() * c / (dn - 1.0);
        cov = (0.5 * (cov + cov.transpose())).eval();
        // SE of each entry from the spread of the per-sample products.
        Matrix se(g.cols(), g.cols());
        for (Eigen::Index a = 0; a < g.cols(); ++a) {
            for (Eigen::Index b = a; b < g.cols(); ++b) {
                const Eigen::ArrayXd prod = c.col(a).array() * c.col(b).array();
                const double m = prod.mean();
                const double sd2 = (prod - m).square().sum() / (dn - 1.0);
                se(a, b) = se(b, a) = std::sqrt(sd2 / dn);
            }
        }
        s.covariance = std::move(cov);
        s.se_covariance = std::move(se);
    } else {
        s.covariance = CompressedCovariance{trace, {}};
    }
    return s;
}

/// Sample mean (= batch_grad) and unbiased sample covariance of per-example
/// gradients over the batch. Dense covariance iff P <= max_dense.
inline GradientStats estimate_moments(const ModelSpec& model, const ParamVector& theta, const Batch& batch,
                                      Eigen::Index max_dense = kMaxDenseParams) {
    detail::require(batch.size() >= 2, "estimate_moments needs a batch of at least two examples");
    return moments_from_samples(per_example_grads(model, theta, batch), max_dense);
}

// -----------------------------------------------------------------------------
// Joint covariance of two batch gradients
// -----------------------------------------------------------------------------

/// Samples pairs of batches (A, B) with |A n B| = overlap from fresh data and
/// compares the empirical cross-covariance Cov(g^A, g^B) with
/// |A n B| / (|A||B|) * Sigma, Sigma estimated on sigma_samples fresh examples.
/// Entries are reported row-major over the P x P matrix.
inline TheoryReport joint_covariance_check(const ModelSpec& model, const ParamVector& theta, const GeneratorSpec& gen,
                                           std::size_t size_a, std::size_t size_b, std::size_t overlap,
                                           std::size_t trials, std::uint64_t seed,
                                           std::size_t sigma_samples = 100000) {
    detail::require(size_a >= 1 && size_b >= 1, "batch sizes must be >= 1");
    detail::require(overlap <= std::min(size_a, size_b), "overlap exceeds a batch size");
    detail::require(trials >= 100, "joint covariance check needs at least 100 trials");
    detail::require(sigma_samples >= 2, "sigma_samples must be >= 2");
    gen.validate();
    const auto p = theta.size();
    const std::size_t total = size_a + size_b - overlap;

    Matrix ga(static_cast<Eigen::Index>(trials), p);
    Matrix gb(static_cast<Eigen::Index>(trials), p);
    for (std::size_t t = 0; t < trials; ++t) {
        Stream rng(seed, static_cast<std::uint32_t>(t), StreamTag::Trials);
        const Batch all = sample_batch(gen, total, rng, 0);
        const Batch a = all.slice(0, size_a);
        const Batch b = all.slice(size_a - overlap, size_b);
        ga.row(static_cast<Eigen::Index>(t)) = batch_grad(model, theta, a).transpose();
        gb.row(static_cast<Eigen::Index>(t)) = batch_grad(model, theta, b).transpose();
    }

    const double dt = static_cast<double>(trials);
    const Matrix ca = ga.rowwise() - ga.colwise().mean();
    const Matrix cb = gb.rowwise() - gb.colwise().mean();

    Stream stats_rng(seed, 0, StreamTag::Stats);
    const Batch big = sample_batch(gen, sigma_samples, stats_rng, 0);
    const auto sigma = estimate_moments(model, theta, big);
    detail::require(sigma.is_full(), "joint covariance check requires a dense covariance");
    const double f = static_cast<double>(overlap) / (static_cast<double>(size_a) * static_cast<double>(size_b));

    TheoryReport r;
    r.name = "joint_covariance";
    for (Eigen::Index i = 0; i < p; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) {
            const Eigen::ArrayXd prod = ca.col(i).array() * cb.col(j).array();
            const double cross = prod.sum() / (dt - 1.0);
            const double m = prod.mean();
            const double se = std::sqrt((prod - m).square().sum() / (dt - 1.0) / dt);
            r.measured.push_back(cross);
            r.se.push_back(se);
            r.predicted.push_back(f * sigma.matrix()(i, j));
            r.predicted_se.push_back(f * sigma.se_covariance(i, j));
        }
    }
    fill_z(r);
    r.meta.m = trials;
    r.meta.seed = seed;
    r.meta.n = size_a;
    r.meta.model = std::string(to_string(model.kind));

    for (Eigen::Index i = 0; i < p; ++i) r.sample_columns.push_back("gA_" + std::to_string(i));
    for (Eigen::Index i = 0; i < p; ++i) r.sample_columns.push_back("gB_" + std::to_string(i));
    r.samples.reserve(trials);
    for (std::size_t t = 0; t < trials; ++t) {
        std::vector<double> row(static_cast<std::size_t>(2 * p));
        for (Eigen::Index i = 0; i < p; ++i) {
            row[static_cast<std::size_t>(i)] = ga(static_cast<Eigen::Index>(t), i);
            row[static_cast<std::size_t>(p + i)] = gb(static_cast<Eigen::Index>(t), i);
        }
        r.samples.push_back(std::move(row));
    }
    return r;
}

// -----------------------------------------------------------------------------
// Gradient of tr Sigma
// -----------------------------------------------------------------------------

struct TraceGradEstimate {
    ParamVector value;
    ParamVector se;
};

namespace detail {

inline ParamVector split_trace_grad(const ModelSpec& model, const ParamVector& theta, const Batch& batch,
                                    const std::vector<ParamVector>& hg, const Matrix& g,
                                    const std::vector<bool>& keep) {
    const std::size_t n = batch.size();
    const std::size_t m = n / 2;
    ParamVector sum_hg = ParamVector::Zero(theta.size());
    std::size_t n_all = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!keep[i]) continue;
        sum_hg += hg[i];
        ++n_all;
    }
    ParamVector g2 = ParamVector::Zero(theta.size());
    std::size_t n2 = 0;
    for (std::size_t j = m; j < n; ++j) {
        if (!keep[j]) continue;
        g2 += g.row(static_cast<Eigen::Index>(j)).transpose();
        ++n2;
    }
    g2 /= static_cast<double>(n2);
    ParamVector cross = ParamVector::Zero(theta.size());
    std::size_t n1 = 0;
    for (std::size_t i = 0; i < m; ++i) {
        if (!keep[i]) continue;
        cross += hvp(model, theta, batch[i], g2);
        ++n1;
    }
    return 2.0 * (sum_hg / static_cast<double>(n_all) - cross / static_cast<double>(n1));
}

} // namespace detail

/// Estimates d tr Sigma / d theta = 2 (E[h g] - E[h] G).
///
/// E[h g] is the mean of hvp(x, grad(x)) over the whole batch. The cross term
/// E[h] G uses Hessians from the first half and the gradient mean from the
/// second half, so the two factors are independent. The standard error is a
/// delete-a-group jackknife over interleaved groups.
inline TraceGradEstimate grad_trace_cov(const ModelSpec& model, const ParamVector& theta, const Batch& batch) {
    const std::size_t n = batch.size();
    detail::require(n >= 4 && n % 2 == 0, "grad_trace_cov needs an even batch of at least four examples");

    std::vector<ParamVector> hg(n);
    const Matrix g = per_example_grads(model, theta, batch);
    for (std::size_t i = 0; i < n; ++i) {
        hg[i] = hvp(model, theta, batch[i], g.row(static_cast<Eigen::Index>(i)).transpose());
    }

    std::vector<bool> keep(n, true);
    TraceGradEstimate out;
    out.value = detail::split_trace_grad(model, theta, batch, hg, g, keep);

    const std::size_t groups = std::min<std::size_t>(20, n / 2);
    std::vector<ParamVector> reps;
    reps.reserve(groups);
    for (std::size_t k = 0; k < groups; ++k) {
        for (std::size_t i = 0; i < n; ++i) keep[i] = (i % groups) != k;
        reps.push_back(detail::split_trace_grad(model, theta, batch, hg, g, keep));
    }
    ParamVector mean = ParamVector::Zero(theta.size());
    for (const auto& r : reps) mean += r;
    mean /= static_cast<double>(groups);
    ParamVector ss = ParamVector::Zero(theta.size());
    for (const auto& r : reps) ss += (r - mean).cwiseAbs2();
    const double kk = static_cast<double>(groups);
    out.se = (ss * (kk - 1.0) / kk).cwiseSqrt();
    return out;
}

/// g^(train) . (g^(test) - g^(train)): the mean-gradient divergence correction
/// to the generalization gap, with batch means in place of distribution means.
inline double train_test_divergence(const ModelSpec& model, const ParamVector& theta, const Batch& train,
                                    const Batch& test) {
    const ParamVector g_tr = batch_grad(model, theta, train);
    const ParamVector g_te = batch_grad(model, theta, test);
    return g_tr.dot(g_te - g_tr);
}

} // namespace sgdgap
