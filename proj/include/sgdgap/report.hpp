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

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace sgdgap {

struct ReportMetadata {
    double eta = 0.0;
    std::size_t n = 0;
    std::size_t m = 0;
    std::uint64_t seed = 0;
    std::string model;
    std::string generator;
};

/// A measured quantity with standard errors, its predicted value, and
/// per-entry z-scores z = (measured - predicted) / sqrt(se^2 + predicted_se^2).
/// predicted_se is zero for closed-form predictions.
struct TheoryReport {
    std::string name;
    std::vector<double> measured;
    std::vector<double> se;
    std::vector<double> predicted;
    std::vector<double> predicted_se;
    std::vector<double> z;
    ReportMetadata meta;

    /// Raw per-member rows (one per realization or trial) for CSV export.
    std::vector<std::string> sample_columns;
    std::vector<std::vector<double>> samples;

    double max_abs_z() const {
        double mz = 0.0;
        for (double v : z) mz = std::max(mz, std::abs(v));
        return mz;
    }

    bool passes(double threshold) const { return max_abs_z() < threshold; }
};

inline double z_score(double measured, double predicted, double se, double predicted_se) {
    const double denom = std::sqrt(se * se + predicted_se * predicted_se);
    const double diff = measured - predicted;
    if (denom > 0.0) return diff / denom;
    if (diff == 0.0) return 0.0;
    return diff > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
}

inline void fill_z(TheoryReport& r) {
    const auto n = r.measured.size();
    detail::require(r.se.size() == n && r.predicted.size() == n, "report shapes differ");
    if (r.predicted_se.empty()) r.predicted_se.assign(n, 0.0);
    detail::require(r.predicted_se.size() == n, "report shapes differ");
    r.z.resize(n);
    for (std::size_t i = 0; i < n; ++i) r.z[i] = z_score(r.measured[i], r.predicted[i], r.se[i], r.predicted_se[i]);
}

inline std::vector<double> to_std(const Eigen::Ref<const Eigen::VectorXd>& v) {
    return {v.data(), v.data() + v.size()};
}

/// Sample mean and standard error (unbiased SD / sqrt(m)) of vector samples,
/// accumulated in index order.
struct MeanSe {
    Eigen::VectorXd mean;
    Eigen::VectorXd se;
};

inline MeanSe mean_and_se(const std::vector<Eigen::VectorXd>& xs) {
    detail::require(xs.size() >= 2, "need at least two samples for a standard error");
    const auto p = xs.front().size();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
    for (const auto& x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    Eigen::VectorXd ss = Eigen::VectorXd::Zero(p);
    for (const auto& x : xs) ss += (x - mean).cwiseAbs2();
    const double m = static_cast<double>(xs.size());
    return {mean, (ss / (m - 1.0) / m).cwiseSqrt()};
}

} // namespace sgdgap
