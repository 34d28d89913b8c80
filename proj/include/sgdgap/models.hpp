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
#include "sgdgap/rng.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace sgdgap {

enum class ModelKind { LinearQuadratic, MlpTanh };

inline std::string_view to_string(ModelKind k) {
    return k == ModelKind::LinearQuadratic ? "linear_quadratic" : "mlp_tanh";
}

inline ModelKind model_kind_from_string(std::string_view s) {
    if (s == "linear_quadratic") return ModelKind::LinearQuadratic;
    if (s == "mlp_tanh") return ModelKind::MlpTanh;
    throw std::invalid_argument("unknown model kind '" + std::string(s) + "'");
}

/// Model description. Both models use the squared loss 1/2 (f(x) - y)^2.
///
/// mlp_tanh is f(x) = w2 . tanh(W1 x + b1) + b2 with hidden width H. Parameters
/// are flattened as W1 (row-major, H x d), b1 (H), w2 (H), b2 (1).
struct ModelSpec {
    ModelKind kind = ModelKind::LinearQuadratic;
    std::size_t input_dim = 1;
    std::size_t hidden = 0;
    std::uint64_t init_seed = 0;

    static ModelSpec linear(std::size_t d) { return {ModelKind::LinearQuadratic, d, 0, 0}; }
    static ModelSpec mlp(std::size_t d, std::size_t h, std::uint64_t seed = 0) {
        return {ModelKind::MlpTanh, d, h, seed};
    }

    Eigen::Index param_count() const {
        const auto d = static_cast<Eigen::Index>(input_dim);
        const auto h = static_cast<Eigen::Index>(hidden);
        return kind == ModelKind::LinearQuadratic ? d : h * d + 2 * h + 1;
    }

    void validate() const {
        detail::require(input_dim >= 1, "model input dimension must be >= 1");
        if (kind == ModelKind::MlpTanh) detail::require(hidden >= 1, "mlp hidden width must be >= 1");
    }
};

/// Initial parameters: zeros for the linear model; for the MLP, zero biases and
/// Gaussian weights with variance 1/fan_in drawn from the model's init seed.
inline ParamVector initial_params(const ModelSpec& model) {
    model.validate();
    ParamVector theta = ParamVector::Zero(model.param_count());
    if (model.kind == ModelKind::LinearQuadratic) return theta;

    const auto d = static_cast<Eigen::Index>(model.input_dim);
    const auto h = static_cast<Eigen::Index>(model.hidden);
    Stream rng(model.init_seed, 0, StreamTag::Init);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(h));
    for (Eigen::Index i = 0; i < h * d; ++i) theta(i) = s1 * rng.normal();
    for (Eigen::Index j = 0; j < h; ++j) theta(h * d + h + j) = s2 * rng.normal();
    return theta;
}

namespace detail {

inline void check_dims(const ModelSpec& model, const ParamVector& theta, const Example& x) {
    require(theta.size() == model.param_count(), "parameter vector length does not match the model");
    require(static_cast<std::size_t>(x.input.size()) == model.input_dim,
            "example input dimension does not match the model");
}

/// Forward pass of the MLP: pre-activations, activations and output.
struct MlpPass {
    Eigen::VectorXd a;  // tanh(z)
    double f = 0.0;
};

inline MlpPass mlp_forward(const ModelSpec& m, const ParamVector& theta, const Eigen::VectorXd& x) {
    const auto d = static_cast<Eigen::Index>(m.input_dim);
    const auto h = static_cast<Eigen::Index>(m.hidden);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> W1(
        theta.data(), h, d);
    const auto b1 = theta.segment(h * d, h);
    const auto w2 = theta.segment(h * d + h, h);
    const double b2 = theta(h * d + 2 * h);
    MlpPass p;
    p.a = (W1 * x + b1).array().tanh().matrix();
    p.f = w2.dot(p.a) + b2;
    return p;
}

/// d f / d theta for the MLP.
inline ParamVector mlp_output_grad(const ModelSpec& m, const ParamVector& theta, const Eigen::VectorXd& x,
                                   const MlpPass& p) {
    const auto d = static_cast<Eigen::Index>(m.input_dim);
    const auto h = static_cast<Eigen::Index>(m.hidden);
    const auto w2 = theta.segment(h * d + h, h);
    ParamVector df(theta.size());
    for (Eigen::Index j = 0; j < h; ++j) {
        const double back = w2(j) * (1.0 - p.a(j) * p.a(j));
        df.segment(j * d, d) = back * x;
        df(h * d + j) = back;
        df(h * d + h + j) = p.a(j);
    }
    df(h * d + 2 * h) = 1.0;
    return df;
}

} // namespace detail

/// Per-example loss 1/2 (f_theta(x) - y)^2.
inline double loss(const ModelSpec& model, const ParamVector& theta, const Example& x) {
    detail::check_dims(model, theta, x);
    double r;
    if (model.kind == ModelKind::LinearQuadratic) {
        r = theta.dot(x.input) - x.target;
    } else {
        r = detail::mlp_forward(model, theta, x.input).f - x.target;
    }
    return 0.5 * r * r;
}

/// Per-example gradient of the loss.
inline ParamVector grad(const ModelSpec& model, const ParamVector& theta, const Example& x) {
    detail::check_dims(model, theta, x);
    if (model.kind == ModelKind::LinearQuadratic) {
        return (theta.dot(x.input) - x.target) * x.input;
    }
    const auto p = detail::mlp_forward(model, theta, x.input);
    return (p.f - x.target) * detail::mlp_output_grad(model, theta, x.input, p);
}

/// Exact per-example Hessian-vector product.
///
/// For the MLP the Hessian is J J^T + r * d2f, where J = df/dtheta and r is the
/// residual; d2f v is the directional derivative of J along v, formed in one
/// forward-over-reverse sweep.
inline ParamVector hvp(const ModelSpec& model, const ParamVector& theta, const Example& x, const ParamVector& v) {
    detail::check_dims(model, theta, x);
    detail::require(v.size() == theta.size(), "hvp direction length does not match the model");
    if (model.kind == ModelKind::LinearQuadratic) {
        return x.input.dot(v) * x.input;
    }

    const auto d = static_cast<Eigen::Index>(model.input_dim);
    const auto h = static_cast<Eigen::Index>(model.hidden);
    const auto& in = x.input;
    const auto p = detail::mlp_forward(model, theta, in);
    const ParamVector df = detail::mlp_output_grad(model, theta, in, p);
    const double r = p.f - x.target;

    const auto w2 = theta.segment(h * d + h, h);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> vW1(v.data(), h, d);
    const auto vb1 = v.segment(h * d, h);
    const auto vw2 = v.segment(h * d + h, h);

    // Tangent of the forward pass along v.
    const Eigen::VectorXd dz = vW1 * in + vb1;

    ParamVector ddf(theta.size());
    for (Eigen::Index j = 0; j < h; ++j) {
        const double s = 1.0 - p.a(j) * p.a(j);
        const double da = s * dz(j);
        const double ds = -2.0 * p.a(j) * da;
        const double dback = vw2(j) * s + w2(j) * ds;
        ddf.segment(j * d, d) = dback * in;
        ddf(h * d + j) = dback;
        ddf(h * d + h + j) = da;
    }
    ddf(h * d + 2 * h) = 0.0;

    return df.dot(v) * df + r * ddf;
}

/// Mean loss over the batch, accumulated in batch order.
inline double batch_loss(const ModelSpec& model, const ParamVector& theta, const Batch& batch) {
    double sum = 0.0;
    for (const auto& x : batch.examples()) sum += loss(model, theta, x);
    return sum / static_cast<double>(batch.size());
}

/// Mean gradient over the batch, accumulated in batch order.
inline ParamVector batch_grad(const ModelSpec& model, const ParamVector& theta, const Batch& batch) {
    ParamVector sum = ParamVector::Zero(theta.size());
    for (const auto& x : batch.examples()) sum += grad(model, theta, x);
    return sum / static_cast<double>(batch.size());
}

/// Mean Hessian-vector product over the batch.
inline ParamVector batch_hvp(const ModelSpec& model, const ParamVector& theta, const Batch& batch,
                             const ParamVector& v) {
    ParamVector sum = ParamVector::Zero(theta.size());
    for (const auto& x : batch.examples()) sum += hvp(model, theta, x, v);
    return sum / static_cast<double>(batch.size());
}

/// Per-example gradients as rows of an n x P matrix.
inline Matrix per_example_grads(const ModelSpec& model, const ParamVector& theta, const Batch& batch) {
    Matrix g(static_cast<Eigen::Index>(batch.size()), theta.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        g.row(static_cast<Eigen::Index>(i)) = grad(model, theta, batch[i]).transpose();
    }
    return g;
}

} // namespace sgdgap
