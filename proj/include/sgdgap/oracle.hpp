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

// Closed-form gradient statistics of the linear model with squared loss under
// the Gaussian teacher-student generator. With w = theta - teacher, the
// per-example gradient is g = (w.x - s eps) x, x ~ N(0, I), eps ~ N(0, 1), so
//
//   G     = w
//   Sigma = (|w|^2 + s^2) I + w w^T
//   tr    = (d + 1) |w|^2 + d s^2
//
// (Isserlis: E[(w.x)^2 x x^T] = |w|^2 I + 2 w w^T.)

#include "sgdgap/core.hpp"
#include "sgdgap/gradstats.hpp"

namespace sgdgap {

inline constexpr std::size_t kMaxOracleDim = 64;

namespace detail {

inline ParamVector oracle_offset(const ParamVector& theta, const GeneratorSpec& gen) {
    gen.validate();
    require(gen.d <= kMaxOracleDim, "oracle dimension is limited to 64");
    require(static_cast<std::size_t>(theta.size()) == gen.d, "theta length must equal the generator dimension");
    return theta - gen.teacher;
}

} // namespace detail

inline double oracle_trace(const ParamVector& theta, const GeneratorSpec& gen) {
    const ParamVector w = detail::oracle_offset(theta, gen);
    const double d = static_cast<double>(gen.d);
    return (d + 1.0) * w.squaredNorm() + d * gen.noise_std * gen.noise_std;
}

inline GradientStats oracle_stats(const ParamVector& theta, const GeneratorSpec& gen) {
    const ParamVector w = detail::oracle_offset(theta, gen);
    const auto d = static_cast<Eigen::Index>(gen.d);
    GradientStats s;
    s.mean = w;
    Matrix cov = (w.squaredNorm() + gen.noise_std * gen.noise_std) * Matrix::Identity(d, d) + w * w.transpose();
    s.covariance = std::move(cov);
    s.sample_count = std::nullopt;
    s.se_mean = ParamVector::Zero(d);
    return s;
}

/// d tr Sigma / d theta = 2 (d + 1) w: an L2-type pull toward the teacher.
inline ParamVector oracle_grad_trace(const ParamVector& theta, const GeneratorSpec& gen) {
    const ParamVector w = detail::oracle_offset(theta, gen);
    return 2.0 * (static_cast<double>(gen.d) + 1.0) * w;
}

/// eta tr Sigma / n.
inline double oracle_delta_gap(const ParamVector& theta, const GeneratorSpec& gen, double eta, std::size_t n) {
    detail::require(eta > 0.0, "learning rate must be positive");
    detail::require(n >= 1, "n must be >= 1");
    return eta * oracle_trace(theta, gen) / static_cast<double>(n);
}

} // namespace sgdgap
