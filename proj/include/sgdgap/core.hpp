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

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sgdgap {

/// Flat parameter vector theta. Length P is fixed by the model.
using ParamVector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// -----------------------------------------------------------------------------
// Errors
// -----------------------------------------------------------------------------

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Thrown by iterative solvers; carries the smallest residual reached.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double best_residual)
        : std::runtime_error(what), best_residual_(best_residual) {}

    double best_residual() const noexcept { return best_residual_; }

private:
    double best_residual_;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline bool all_finite(const Eigen::Ref<const Eigen::VectorXd>& v) {
    return v.allFinite();
}

} // namespace detail

// -----------------------------------------------------------------------------
// Examples and batches
// -----------------------------------------------------------------------------

struct Example {
    Eigen::VectorXd input;
    double target = 0.0;
};

/// An ordered, nonempty set of examples with unique 64-bit identities.
/// Identity is by id, never by value. Immutable after construction.
class Batch {
public:
    Batch(std::vector<Example> examples, std::vector<std::uint64_t> ids)
        : examples_(std::move(examples)), ids_(std::move(ids)) {
        detail::require(!examples_.empty(), "batch must be nonempty");
        detail::require(examples_.size() == ids_.size(), "batch examples and ids differ in length");
        const auto d = examples_.front().input.size();
        for (const auto& e : examples_) {
            detail::require(e.input.size() == d, "batch examples have ragged input dimension");
            detail::require(detail::all_finite(e.input) && std::isfinite(e.target),
                            "batch example has a non-finite entry");
        }
        sorted_ids_ = ids_;
        std::sort(sorted_ids_.begin(), sorted_ids_.end());
        detail::require(std::adjacent_find(sorted_ids_.begin(), sorted_ids_.end()) == sorted_ids_.end(),
                        "batch ids must be unique");
    }

    std::size_t size() const noexcept { return examples_.size(); }
    Eigen::Index input_dim() const noexcept { return examples_.front().input.size(); }

    const Example& operator[](std::size_t i) const { return examples_[i]; }
    std::span<const Example> examples() const noexcept { return examples_; }
    std::span<const std::uint64_t> ids() const noexcept { return ids_; }
    std::span<const std::uint64_t> sorted_ids() const noexcept { return sorted_ids_; }

    /// Sub-batch of positions [first, first + count), order preserved.
    Batch slice(std::size_t first, std::size_t count) const {
        detail::require(first + count <= size(), "batch slice out of range");
        return Batch({examples_.begin() + first, examples_.begin() + first + count},
                     {ids_.begin() + first, ids_.begin() + first + count});
    }

    /// Sub-batch of the given positions, in the given order.
    Batch select(std::span<const std::size_t> positions) const {
        std::vector<Example> ex;
        std::vector<std::uint64_t> id;
        ex.reserve(positions.size());
        id.reserve(positions.size());
        for (auto p : positions) {
            detail::require(p < size(), "batch position out of range");
            ex.push_back(examples_[p]);
            id.push_back(ids_[p]);
        }
        return Batch(std::move(ex), std::move(id));
    }

    /// Concatenation; ids must remain unique.
    friend Batch concat(const Batch& a, const Batch& b) {
        std::vector<Example> ex(a.examples_);
        ex.insert(ex.end(), b.examples_.begin(), b.examples_.end());
        std::vector<std::uint64_t> id(a.ids_);
        id.insert(id.end(), b.ids_.begin(), b.ids_.end());
        return Batch(std::move(ex), std::move(id));
    }

private:
    std::vector<Example> examples_;
    std::vector<std::uint64_t> ids_;
    std::vector<std::uint64_t> sorted_ids_;
};

inline std::size_t intersection_size(const Batch& a, const Batch& b) {
    auto sa = a.sorted_ids();
    auto sb = b.sorted_ids();
    std::size_t n = 0;
    auto i = sa.begin();
    auto j = sb.begin();
    while (i != sa.end() && j != sb.end()) {
        if (*i < *j) {
            ++i;
        } else if (*j < *i) {
            ++j;
        } else {
            ++n;
            ++i;
            ++j;
        }
    }
    return n;
}

inline bool disjoint(const Batch& a, const Batch& b) { return intersection_size(a, b) == 0; }

/// |A n B| / (|A| |B|): the factor scaling the cross-covariance of two batch
/// gradient estimators.
inline double overlap_factor(const Batch& a, const Batch& b) {
    // Batch construction already forbids empty batches.
    const auto n = static_cast<double>(intersection_size(a, b));
    return n / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

// -----------------------------------------------------------------------------
// Data generation specs
// -----------------------------------------------------------------------------

/// Gaussian teacher-student generator: x ~ N(0, I_d), y = teacher . x + s * N(0, 1).
struct GeneratorSpec {
    std::size_t d = 1;
    ParamVector teacher;
    double noise_std = 0.0;

    /// Default teacher is the first basis vector.
    static GeneratorSpec make(std::size_t d, double noise_std) {
        detail::require(d >= 1, "generator dimension must be >= 1");
        GeneratorSpec g;
        g.d = d;
        g.teacher = ParamVector::Zero(static_cast<Eigen::Index>(d));
        g.teacher(0) = 1.0;
        g.noise_std = noise_std;
        g.validate();
        return g;
    }

    void validate() const {
        detail::require(d >= 1, "generator dimension must be >= 1");
        detail::require(static_cast<std::size_t>(teacher.size()) == d, "teacher length must equal d");
        detail::require(detail::all_finite(teacher), "teacher must be finite");
        detail::require(std::isfinite(noise_std) && noise_std >= 0.0, "noise_std must be finite and >= 0");
    }
};

struct DataRealization {
    Batch train;
    Batch test;
    std::uint64_t seed = 0;
    std::uint32_t index = 0;
    GeneratorSpec generator;
};

} // namespace sgdgap
