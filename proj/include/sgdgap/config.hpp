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
#include "sgdgap/models.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace sgdgap {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Algorithm { Gd, Sgd, GdRegularized, SgdPreconditioned };

inline std::string_view to_string(Algorithm a) {
    switch (a) {
        case Algorithm::Gd: return "gd";
        case Algorithm::Sgd: return "sgd";
        case Algorithm::GdRegularized: return "gd_regularized";
        case Algorithm::SgdPreconditioned: return "sgd_preconditioned";
    }
    return "?";
}

inline Algorithm algorithm_from_string(std::string_view s) {
    for (auto a : {Algorithm::Gd, Algorithm::Sgd, Algorithm::GdRegularized, Algorithm::SgdPreconditioned}) {
        if (to_string(a) == s) return a;
    }
    throw ConfigError("unknown algorithm '" + std::string(s) + "'");
}

/// All knobs of one experiment. Every field has a default; a JSON document
/// may override any of them but may not introduce unknown keys.
struct ExperimentConfig {
    ModelSpec model = ModelSpec::linear(1);
    GeneratorSpec generator = GeneratorSpec::make(1, 1.0);
    /// Explicit evaluation point. If absent: teacher + w for the linear model,
    /// initial_params for the MLP.
    std::optional<ParamVector> theta;
    /// Offset from the teacher (linear model only); default first basis vector.
    std::optional<ParamVector> w;

    double learning_rate = 1e-3;
    std::vector<double> learning_rates{1e-3, 2e-3, 4e-3};
    std::size_t n_train = 50;
    std::size_t n_test = 50;
    std::size_t minibatches = 2;
    std::size_t ensemble_size = 1000;
    std::uint64_t seed = 1;
    std::string out_dir = "out";

    // verify-cov-scaling
    std::size_t batch_a = 2;
    std::size_t batch_b = 2;
    std::vector<std::size_t> overlaps{0, 1, 2};
    std::size_t trials = 100000;

    std::size_t stats_samples = 100000;
    double z_threshold = 3.0;

    // train
    std::size_t steps = 100;
    std::vector<Algorithm> algorithms{Algorithm::Gd, Algorithm::Sgd, Algorithm::GdRegularized,
                                      Algorithm::SgdPreconditioned};
    std::size_t precond_k = 8;
    double precond_lambda_ratio = 0.1;
    /// "auto" (oracle for the linear model, estimator otherwise), "oracle" or "estimator".
    std::string trace_grad_source = "auto";
    bool record_theta = false;

    // stats
    std::size_t eigenpairs = 4;

    void validate() const {
        auto check = [](bool ok, const std::string& msg) {
            if (!ok) throw ConfigError(msg);
        };
        try {
            model.validate();
            generator.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        check(model.input_dim == generator.d, "model input dimension must equal generator.d");
        check(std::isfinite(learning_rate) && learning_rate > 0.0, "learning_rate must be > 0");
        check(learning_rates.size() >= 3, "learning_rates needs at least three values");
        for (std::size_t i = 0; i < learning_rates.size(); ++i) {
            check(learning_rates[i] > 0.0, "learning_rates must be positive");
            for (std::size_t j = 0; j < i; ++j) check(learning_rates[i] != learning_rates[j], "learning_rates must be distinct");
        }
        check(n_train >= 2, "n_train must be >= 2");
        check(n_test >= 1, "n_test must be >= 1");
        check(minibatches >= 1 && n_train % minibatches == 0, "minibatches must divide n_train");
        check(ensemble_size >= 1, "ensemble_size must be >= 1");
        check(batch_a >= 1 && batch_b >= 1, "batch sizes must be >= 1");
        for (auto o : overlaps) check(o <= std::min(batch_a, batch_b), "overlap exceeds a batch size");
        check(trials >= 100, "trials must be >= 100");
        check(stats_samples >= 4, "stats_samples must be >= 4");
        check(z_threshold > 0.0, "z_threshold must be > 0");
        check(precond_lambda_ratio > 0.0, "precond_lambda_ratio must be > 0");
        check(trace_grad_source == "auto" || trace_grad_source == "oracle" || trace_grad_source == "estimator",
              "trace_grad_source must be auto, oracle or estimator");
        check(!(trace_grad_source == "oracle" && model.kind != ModelKind::LinearQuadratic),
              "oracle trace gradient requires the linear model");
        if (w) {
            check(model.kind == ModelKind::LinearQuadratic, "w is only meaningful for the linear model");
            check(static_cast<std::size_t>(w->size()) == generator.d, "w length must equal generator.d");
        }
        if (theta) check(theta->size() == model.param_count(), "theta length must equal the parameter count");
        check(!(theta && w), "give theta or w, not both");
    }

    ParamVector resolved_theta() const {
        if (theta) return *theta;
        if (model.kind == ModelKind::MlpTanh) return initial_params(model);
        ParamVector off = ParamVector::Zero(static_cast<Eigen::Index>(generator.d));
        if (w) {
            off = *w;
        } else {
            off(0) = 1.0;
        }
        return generator.teacher + off;
    }

    bool use_oracle() const {
        if (trace_grad_source == "oracle") return true;
        if (trace_grad_source == "estimator") return false;
        return model.kind == ModelKind::LinearQuadratic;
    }
};

namespace detail {

inline ParamVector json_vector(const nlohmann::json& j, const std::string& key) {
    if (!j.is_array()) throw ConfigError(key + " must be an array of numbers");
    ParamVector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw ConfigError(key + " must be an array of numbers");
        v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    }
    return v;
}

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [k, v] : j.items()) {
        if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
    }
}

template <class T>
T json_get(const nlohmann::json& j, const std::string& key) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("invalid value for '" + key + "'");
    }
}

} // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    using detail::json_get;
    detail::reject_unknown(j,
                           {"model", "generator", "theta", "w", "learning_rate", "learning_rates", "n_train", "n_test",
                            "minibatches", "ensemble_size", "seed", "out_dir", "batch_a", "batch_b", "overlaps",
                            "trials", "stats_samples", "z_threshold", "steps", "algorithms", "precond_k",
                            "precond_lambda_ratio", "trace_grad_source", "record_theta", "eigenpairs"},
                           "config");
    ExperimentConfig c;

    std::size_t d = 1;
    double noise = 1.0;
    std::optional<ParamVector> teacher;
    if (j.contains("generator")) {
        const auto& g = j.at("generator");
        detail::reject_unknown(g, {"d", "teacher", "noise_std"}, "generator");
        if (g.contains("d")) d = json_get<std::size_t>(g, "d");
        if (g.contains("noise_std")) noise = json_get<double>(g, "noise_std");
        if (g.contains("teacher")) teacher = detail::json_vector(g.at("teacher"), "generator.teacher");
    }
    if (d < 1) throw ConfigError("generator.d must be >= 1");
    c.generator = GeneratorSpec::make(d, std::max(noise, 0.0));
    c.generator.noise_std = noise;
    if (teacher) c.generator.teacher = *teacher;

    c.model = ModelSpec::linear(d);
    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::reject_unknown(m, {"kind", "hidden", "init_seed"}, "model");
        if (m.contains("kind")) {
            try {
                c.model.kind = model_kind_from_string(json_get<std::string>(m, "kind"));
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
        }
        if (m.contains("hidden")) c.model.hidden = json_get<std::size_t>(m, "hidden");
        if (m.contains("init_seed")) c.model.init_seed = json_get<std::uint64_t>(m, "init_seed");
    }

    if (j.contains("theta")) c.theta = detail::json_vector(j.at("theta"), "theta");
    if (j.contains("w")) c.w = detail::json_vector(j.at("w"), "w");
    if (j.contains("learning_rate")) c.learning_rate = json_get<double>(j, "learning_rate");
    if (j.contains("learning_rates")) c.learning_rates = json_get<std::vector<double>>(j, "learning_rates");
    if (j.contains("n_train")) {
        c.n_train = json_get<std::size_t>(j, "n_train");
        c.n_test = c.n_train;
    }
    if (j.contains("n_test")) c.n_test = json_get<std::size_t>(j, "n_test");
    if (j.contains("minibatches")) c.minibatches = json_get<std::size_t>(j, "minibatches");
    if (j.contains("ensemble_size")) c.ensemble_size = json_get<std::size_t>(j, "ensemble_size");
    if (j.contains("seed")) c.seed = json_get<std::uint64_t>(j, "seed");
    if (j.contains("out_dir")) c.out_dir = json_get<std::string>(j, "out_dir");
    if (j.contains("batch_a")) c.batch_a = json_get<std::size_t>(j, "batch_a");
    if (j.contains("batch_b")) c.batch_b = json_get<std::size_t>(j, "batch_b");
    if (j.contains("overlaps")) c.overlaps = json_get<std::vector<std::size_t>>(j, "overlaps");
    if (j.contains("trials")) c.trials = json_get<std::size_t>(j, "trials");
    if (j.contains("stats_samples")) c.stats_samples = json_get<std::size_t>(j, "stats_samples");
    if (j.contains("z_threshold")) c.z_threshold = json_get<double>(j, "z_threshold");
    if (j.contains("steps")) c.steps = json_get<std::size_t>(j, "steps");
    if (j.contains("algorithms")) {
        c.algorithms.clear();
        for (const auto& a : json_get<std::vector<std::string>>(j, "algorithms")) {
            c.algorithms.push_back(algorithm_from_string(a));
        }
    }
    if (j.contains("precond_k")) c.precond_k = json_get<std::size_t>(j, "precond_k");
    if (j.contains("precond_lambda_ratio")) c.precond_lambda_ratio = json_get<double>(j, "precond_lambda_ratio");
    if (j.contains("trace_grad_source")) c.trace_grad_source = json_get<std::string>(j, "trace_grad_source");
    if (j.contains("record_theta")) c.record_theta = json_get<bool>(j, "record_theta");
    if (j.contains("eigenpairs")) c.eigenpairs = json_get<std::size_t>(j, "eigenpairs");

    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return config_from_json(j);
}

inline nlohmann::json to_json_array(const Eigen::VectorXd& v) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

/// Fully resolved configuration, including the evaluation point. The output
/// directory is deliberately left out so reports do not depend on where they
/// were written.
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["model"] = {{"kind", std::string(to_string(c.model.kind))},
                  {"hidden", c.model.hidden},
                  {"init_seed", c.model.init_seed}};
    j["generator"] = {{"d", c.generator.d},
                      {"teacher", to_json_array(c.generator.teacher)},
                      {"noise_std", c.generator.noise_std}};
    j["theta"] = to_json_array(c.resolved_theta());
    j["learning_rate"] = c.learning_rate;
    j["learning_rates"] = c.learning_rates;
    j["n_train"] = c.n_train;
    j["n_test"] = c.n_test;
    j["minibatches"] = c.minibatches;
    j["ensemble_size"] = c.ensemble_size;
    j["seed"] = c.seed;
    j["batch_a"] = c.batch_a;
    j["batch_b"] = c.batch_b;
    j["overlaps"] = c.overlaps;
    j["trials"] = c.trials;
    j["stats_samples"] = c.stats_samples;
    j["z_threshold"] = c.z_threshold;
    j["steps"] = c.steps;
    nlohmann::json algs = nlohmann::json::array();
    for (auto a : c.algorithms) algs.push_back(std::string(to_string(a)));
    j["algorithms"] = algs;
    j["precond_k"] = c.precond_k;
    j["precond_lambda_ratio"] = c.precond_lambda_ratio;
    j["trace_grad_source"] = c.trace_grad_source;
    j["record_theta"] = c.record_theta;
    j["eigenpairs"] = c.eigenpairs;
    return j;
}

inline std::string describe_generator(const GeneratorSpec& g) {
    std::string s = "gaussian(d=" + std::to_string(g.d) + ", noise_std=" + nlohmann::json(g.noise_std).dump() +
                    ", teacher=" + to_json_array(g.teacher).dump() + ")";
    return s;
}

inline std::string describe_model(const ModelSpec& m) {
    std::string s(to_string(m.kind));
    s += "(d=" + std::to_string(m.input_dim);
    if (m.kind == ModelKind::MlpTanh) s += ", hidden=" + std::to_string(m.hidden) + ", init_seed=" + std::to_string(m.init_seed);
    return s + ")";
}

} // namespace sgdgap
