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

// Experiment runner. Every subcommand writes raw per-member CSV files and a
// summary.json into the output directory. Exit codes: 0 every verdict passed,
// 1 some verification failed (reports still written), 2 usage/config/io error.

#include "sgdgap/config.hpp"
#include "sgdgap/ensemble.hpp"
#include "sgdgap/gradstats.hpp"
#include "sgdgap/oracle.hpp"
#include "sgdgap/theory.hpp"
#include "sgdgap/training.hpp"

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

namespace sgdgap::cli {

inline constexpr int kExitPass = 0;
inline constexpr int kExitFail = 1;
inline constexpr int kExitUsage = 2;

namespace detail {

using nlohmann::json;

inline std::string fmt(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header) : out_(path) {
        if (!out_) throw IoError("cannot write '" + path.string() + "'");
        for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
        out_ << '\n';
    }

    void row(const std::vector<std::string>& lead, const std::vector<double>& values) {
        bool first = true;
        for (const auto& s : lead) {
            out_ << (first ? "" : ",") << s;
            first = false;
        }
        for (double v : values) {
            out_ << (first ? "" : ",") << fmt(v);
            first = false;
        }
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json vec_json(const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(finite_or_null(x));
    return a;
}

inline json report_check(const std::string& name, const TheoryReport& r, double threshold) {
    const bool pass = r.passes(threshold);
    return {{"name", name},
            {"quantity", r.name},
            {"measured", vec_json(r.measured)},
            {"se", vec_json(r.se)},
            {"predicted", vec_json(r.predicted)},
            {"predicted_se", vec_json(r.predicted_se)},
            {"z", vec_json(r.z)},
            {"max_abs_z", finite_or_null(r.max_abs_z())},
            {"threshold", threshold},
            {"metadata",
             {{"eta", r.meta.eta},
              {"n", r.meta.n},
              {"m", r.meta.m},
              {"seed", r.meta.seed},
              {"model", r.meta.model},
              {"generator", r.meta.generator}}},
            {"verdict", pass ? "pass" : "fail"}};
}

inline json order_check(const std::string& name, const std::vector<std::pair<double, double>>& pts, double lo,
                        double hi) {
    json etas = json::array(), res = json::array();
    for (const auto& [e, r] : pts) {
        etas.push_back(e);
        res.push_back(finite_or_null(r));
    }
    double slope = std::numeric_limits<double>::quiet_NaN();
    std::string note;
    try {
        slope = order_exponent(pts);
    } catch (const std::invalid_argument& e) {
        note = e.what();
    }
    const bool pass = std::isfinite(slope) && slope >= lo && slope <= hi;
    json j = {{"name", name}, {"etas", etas}, {"residuals", res}, {"exponent", finite_or_null(slope)},
              {"window", {lo, hi}}, {"verdict", pass ? "pass" : "fail"}};
    if (!note.empty()) j["note"] = note;
    return j;
}

inline json bound_check(const std::string& name, double value, double bound) {
    const bool pass = std::isfinite(value) && value <= bound;
    return {{"name", name}, {"value", finite_or_null(value)}, {"bound", bound}, {"verdict", pass ? "pass" : "fail"}};
}

struct Context {
    ExperimentConfig cfg;
    std::filesystem::path out;
    std::size_t threads = 1;
    std::string command;
    json checks = json::array();
    json extra = json::object();

    int finish() const {
        bool pass = true;
        for (const auto& c : checks) pass = pass && c.at("verdict") == "pass";
        json summary;
        summary["command"] = command;
        summary["config"] = config_to_json(cfg);
        summary["seed"] = cfg.seed;
        summary["checks"] = checks;
        for (const auto& [k, v] : extra.items()) summary[k] = v;
        summary["verdict"] = pass ? "pass" : "fail";
        std::ofstream f(out / "summary.json");
        if (!f) throw IoError("cannot write summary.json");
        f << summary.dump(2) << '\n';
        return pass ? kExitPass : kExitFail;
    }
};

inline ExperimentConfig with_eta(ExperimentConfig c, double eta) {
    c.learning_rate = eta;
    return c;
}

inline void write_members(CsvWriter& csv, const TheoryReport& r, const std::vector<std::string>& lead_extra = {}) {
    for (std::size_t i = 0; i < r.samples.size(); ++i) {
        auto lead = lead_extra;
        lead.push_back(std::to_string(i));
        csv.row(lead, r.samples[i]);
    }
}

// --- subcommands -------------------------------------------------------------

inline int verify_cov_scaling(Context& ctx) {
    const auto& c = ctx.cfg;
    const ParamVector theta = c.resolved_theta();
    std::vector<std::string> header{"overlap", "trial"};
    for (Eigen::Index i = 0; i < theta.size(); ++i) header.push_back("gA_" + std::to_string(i));
    for (Eigen::Index i = 0; i < theta.size(); ++i) header.push_back("gB_" + std::to_string(i));
    CsvWriter csv(ctx.out / "cov_scaling.csv", header);
    for (auto o : c.overlaps) {
        auto r = joint_covariance_check(c.model, theta, c.generator, c.batch_a, c.batch_b, o, c.trials, c.seed + o,
                                        c.stats_samples);
        if (c.model.kind == ModelKind::LinearQuadratic) {
            // Closed-form Sigma replaces the sampled estimate.
            const Matrix sigma = oracle_stats(theta, c.generator).matrix();
            const double f = static_cast<double>(o) / (static_cast<double>(c.batch_a) * static_cast<double>(c.batch_b));
            for (Eigen::Index i = 0; i < theta.size(); ++i) {
                for (Eigen::Index j = 0; j < theta.size(); ++j) {
                    const auto k = static_cast<std::size_t>(i * theta.size() + j);
                    r.predicted[k] = f * sigma(i, j);
                    r.predicted_se[k] = 0.0;
                }
            }
            fill_z(r);
        }
        write_members(csv, r, {std::to_string(o)});
        auto chk = report_check("cov_scaling_overlap_" + std::to_string(o), r, c.z_threshold);
        chk["overlap_factor"] =
            static_cast<double>(o) / (static_cast<double>(c.batch_a) * static_cast<double>(c.batch_b));
        ctx.checks.push_back(chk);
    }
    return ctx.finish();
}

inline int verify_gap(Context& ctx) {
    const auto& c = ctx.cfg;
    const auto m = c.ensemble_size;
    const auto gap = ensemble_report(c, EnsembleQuantity::DeltaGap, m, ctx.threads);
    const auto div = ensemble_report(c, EnsembleQuantity::TrainTestDivergence, m, ctx.threads);
    {
        CsvWriter csv(ctx.out / "gap_realizations.csv",
                      {"member", "delta_gap_first_order", "delta_gap_exact", "train_test_divergence"});
        for (std::size_t i = 0; i < m; ++i) {
            auto row = gap.samples[i];
            row.push_back(div.samples[i][0]);
            csv.row({std::to_string(i)}, row);
        }
    }
    ctx.checks.push_back(report_check("delta_gap", gap, c.z_threshold));
    ctx.checks.push_back(report_check("train_test_divergence", div, c.z_threshold));

    // Exact minus first-order gap, averaged in absolute value over realizations.
    const ParamVector theta = c.resolved_theta();
    const std::size_t m_order = std::min<std::size_t>(m, 100);
    std::vector<std::pair<double, double>> pts;
    CsvWriter ocsv(ctx.out / "gap_order.csv", {"eta", "mean_abs_residual"});
    for (double eta : c.learning_rates) {
        const auto res = parallel_map(m_order, ctx.threads, [&](std::size_t r) {
            const auto real = sample_realization(c.generator, c.n_train, c.n_test, c.seed, static_cast<std::uint32_t>(r));
            return std::abs(delta_gap(c.model, theta, real.train, real.test, eta, GapMode::Exact) -
                            delta_gap(c.model, theta, real.train, real.test, eta, GapMode::FirstOrder));
        });
        double sum = 0.0;
        for (double v : res) sum += v;
        pts.emplace_back(eta, sum / static_cast<double>(m_order));
        ocsv.row({}, {eta, pts.back().second});
    }
    ctx.checks.push_back(order_check("delta_gap_exact_residual_order", pts, 1.8, 2.2));
    return ctx.finish();
}

inline int verify_main(Context& ctx) {
    const auto& c = ctx.cfg;
    const auto r = ensemble_report(c, EnsembleQuantity::GradientShift, c.ensemble_size, ctx.threads);
    std::vector<std::string> header{"member"};
    for (const auto& col : r.sample_columns) header.push_back(col);
    CsvWriter csv(ctx.out / "main_realizations.csv", header);
    write_members(csv, r);
    ctx.checks.push_back(report_check("gradient_shift", r, c.z_threshold));
    return ctx.finish();
}

inline int verify_taylor(Context& ctx) {
    const auto& c = ctx.cfg;
    const ParamVector theta = c.resolved_theta();
    sgdgap::detail::require(c.n_train % 2 == 0, "verify-taylor needs an even n_train");
    const auto real = sample_realization(c.generator, c.n_train, c.n_test, c.seed, 0);
    const auto halves = partition(real.train, 2, c.seed, 0);
    const bool linear = c.model.kind == ModelKind::LinearQuadratic;

    CsvWriter csv(ctx.out / "taylor.csv", {"eta", "two_step_residual", "two_step_relative", "shift_residual",
                                           "shift_relative", "delta_loss_residual"});
    std::vector<std::pair<double, double>> two, shift, dl;
    double worst_two_rel = 0.0, worst_shift_rel = 0.0;
    for (double eta : c.learning_rates) {
        const ParamVector ex = two_step_exact(c.model, theta, halves[0], halves[1], eta);
        const ParamVector ta = two_step_taylor(c.model, theta, halves[0], halves[1], eta);
        const ParamVector def = gradient_shift(c.model, theta, halves[0], halves[1], eta, ShiftMode::Definition);
        const ParamVector cf = gradient_shift(c.model, theta, halves[0], halves[1], eta, ShiftMode::ClosedForm);
        const ParamVector g = batch_grad(c.model, theta, real.train);
        const double r_two = (ex - ta).norm();
        const double r_shift = (def - cf).norm();
        const double r_dl = std::abs(delta_loss_exact(c.model, theta, real.train, real.train, eta) -
                                     delta_loss_first_order(g, g, eta));
        const double rel_two = r_two / ex.norm();
        const double rel_shift = r_shift / cf.norm();
        worst_two_rel = std::max(worst_two_rel, rel_two);
        worst_shift_rel = std::max(worst_shift_rel, rel_shift);
        two.emplace_back(eta, r_two);
        shift.emplace_back(eta, r_shift);
        dl.emplace_back(eta, r_dl);
        csv.row({}, {eta, r_two, rel_two, r_shift, rel_shift, r_dl});
    }
    if (linear) {
        ctx.checks.push_back(bound_check("two_step_taylor_exact_for_quadratic", worst_two_rel, 1e-12));
        ctx.checks.push_back(bound_check("gradient_shift_modes_agree_for_quadratic", worst_shift_rel, 1e-10));
    } else {
        ctx.checks.push_back(order_check("two_step_taylor_residual_order", two, 2.7, 3.3));
        ctx.checks.push_back(order_check("gradient_shift_mode_difference_order", shift, 1.7, 2.3));
    }
    ctx.checks.push_back(order_check("delta_loss_residual_order", dl, 1.8, 2.2));
    return ctx.finish();
}

inline int verify_emulation(Context& ctx) {
    const auto& c = ctx.cfg;
    std::vector<std::pair<double, double>> pts;
    std::vector<std::string> header{"eta", "member"};
    for (Eigen::Index i = 0; i < c.model.param_count(); ++i) header.push_back("diff_" + std::to_string(i));
    CsvWriter csv(ctx.out / "emulation_realizations.csv", header);
    CsvWriter ocsv(ctx.out / "emulation_order.csv", {"eta", "mean_difference_norm"});
    json per_eta = json::array();
    for (double eta : c.learning_rates) {
        const auto r = ensemble_report(with_eta(c, eta), EnsembleQuantity::SgdVsModifiedGd, c.ensemble_size,
                                       ctx.threads);
        write_members(csv, r, {fmt(eta)});
        double norm2 = 0.0;
        for (double v : r.measured) norm2 += v * v;
        pts.emplace_back(eta, std::sqrt(norm2));
        ocsv.row({}, {eta, pts.back().second});
        per_eta.push_back({{"eta", eta}, {"measured", vec_json(r.measured)}, {"se", vec_json(r.se)}});
    }
    ctx.extra["emulation_means"] = per_eta;
    ctx.checks.push_back(order_check("sgd_vs_regularized_gd_order", pts, 2.5, 3.5));
    return ctx.finish();
}

inline int train(Context& ctx) {
    const auto& c = ctx.cfg;
    json finals = json::array();
    for (auto alg : c.algorithms) {
        const auto traj = run_training(c, alg);
        std::vector<std::string> header{"step", "train_loss", "test_loss", "gap", "trace"};
        if (c.record_theta) {
            for (Eigen::Index i = 0; i < c.model.param_count(); ++i) header.push_back("theta_" + std::to_string(i));
        }
        CsvWriter csv(ctx.out / ("trajectory_" + std::string(to_string(alg)) + ".csv"), header);
        bool finite = true;
        for (const auto& rec : traj.steps) {
            std::vector<double> row{rec.train_loss, rec.test_loss, rec.gap, rec.trace};
            if (rec.theta) row.insert(row.end(), rec.theta->data(), rec.theta->data() + rec.theta->size());
            for (double v : row) finite = finite && std::isfinite(v);
            csv.row({std::to_string(rec.step)}, row);
        }
        const auto& last = traj.steps.back();
        finals.push_back({{"algorithm", std::string(to_string(alg))},
                          {"train_loss", finite_or_null(last.train_loss)},
                          {"test_loss", finite_or_null(last.test_loss)},
                          {"gap", finite_or_null(last.gap)},
                          {"trace", finite_or_null(last.trace)}});
        ctx.checks.push_back({{"name", "trajectory_finite_" + std::string(to_string(alg))},
                              {"verdict", finite ? "pass" : "fail"}});
    }
    ctx.extra["final"] = finals;
    ctx.extra["preconditioner"] = {{"k", c.precond_k}, {"lambda_ratio", c.precond_lambda_ratio}};
    return ctx.finish();
}

inline int stats(Context& ctx) {
    const auto& c = ctx.cfg;
    const ParamVector theta = c.resolved_theta();
    Stream rng(c.seed, 0, StreamTag::Stats);
    const Batch sample = sample_batch(c.generator, c.stats_samples, rng, 0);
    const auto st = estimate_moments(c.model, theta, sample);
    const SampleCovariance op(c.model, theta, sample);
    const auto k = std::min<std::size_t>(c.eigenpairs, static_cast<std::size_t>(theta.size()));
    const auto eig = power_deflation(op, k, 1e-8, 10000, c.seed);

    std::vector<std::string> header{"index", "eigenvalue", "near_degenerate"};
    for (Eigen::Index i = 0; i < theta.size(); ++i) header.push_back("v_" + std::to_string(i));
    CsvWriter csv(ctx.out / "eigenpairs.csv", header);
    json pairs = json::array();
    for (std::size_t i = 0; i < eig.pairs.size(); ++i) {
        const auto& p = eig.pairs[i];
        csv.row({std::to_string(i), fmt(p.value), p.near_degenerate ? "1" : "0"}, to_std(p.vector));
        pairs.push_back({{"value", p.value}, {"near_degenerate", p.near_degenerate}});
    }

    json s;
    s["sample_count"] = *st.sample_count;
    s["mean"] = vec_json(to_std(st.mean));
    s["se_mean"] = vec_json(to_std(st.se_mean));
    s["trace"] = st.trace();
    s["se_trace"] = st.se_trace;
    s["dense"] = st.is_full();
    if (st.is_full()) {
        json rows = json::array();
        for (Eigen::Index i = 0; i < st.matrix().rows(); ++i) rows.push_back(vec_json(to_std(st.matrix().row(i).transpose())));
        s["covariance"] = rows;
    }
    s["eigenpairs"] = pairs;
    s["eigensolver_worst_residual"] = eig.worst_residual;
    if (c.model.kind == ModelKind::LinearQuadratic) {
        const auto o = oracle_stats(theta, c.generator);
        double mz = 0.0;
        for (Eigen::Index i = 0; i < theta.size(); ++i) {
            mz = std::max(mz, std::abs(z_score(st.mean(i), o.mean(i), st.se_mean(i), 0.0)));
            for (Eigen::Index j = 0; j < theta.size(); ++j) {
                mz = std::max(mz, std::abs(z_score(st.matrix()(i, j), o.matrix()(i, j), st.se_covariance(i, j), 0.0)));
            }
        }
        s["oracle"] = {{"mean", vec_json(to_std(o.mean))}, {"trace", o.trace()}, {"max_abs_z", finite_or_null(mz)}};
    }
    ctx.extra["stats"] = s;
    ctx.checks.push_back({{"name", "eigensolver_converged"}, {"verdict", eig.converged ? "pass" : "fail"}});
    return ctx.finish();
}

} // namespace detail

/// Entry point shared by the executable and the tests. args excludes argv[0].
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Gradient-statistics experiments for SGD versus GD"};
    app.require_subcommand(1);

    struct Options {
        std::string config;
        std::optional<std::uint64_t> seed;
        std::string out;
        std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
    };
    Options opt;

    struct Command {
        const char* name;
        const char* help;
        bool needs_config;
        int (*fn)(detail::Context&);
    };
    const std::vector<Command> commands{
        {"verify-cov-scaling", "cross-covariance of overlapping batch gradients", true, detail::verify_cov_scaling},
        {"verify-gap", "ensemble change of the generalization gap after one step", true, detail::verify_gap},
        {"verify-main", "ensemble SGD-vs-GD gradient shift against the gap gradient", true, detail::verify_main},
        {"verify-taylor", "learning-rate order of the two-step and gradient-shift expansions", true,
         detail::verify_taylor},
        {"verify-emulation", "two-step SGD against GD on the trace-regularized loss", true, detail::verify_emulation},
        {"train", "training trajectories for gd, sgd, gd_regularized, sgd_preconditioned", true, detail::train},
        {"stats", "gradient mean, covariance and leading eigenpairs at the configured point", false, detail::stats},
    };
    std::vector<CLI::App*> subs;
    for (const auto& c : commands) {
        auto* sub = app.add_subcommand(c.name, c.help);
        auto* cfg_opt = sub->add_option("--config", opt.config, "JSON experiment configuration");
        if (c.needs_config) cfg_opt->required();
        sub->add_option("--seed", opt.seed, "override the master seed");
        sub->add_option("--out", opt.out, "output directory (default ./out)");
        sub->add_option("--threads", opt.threads, "worker threads; never changes results")->check(CLI::PositiveNumber);
        subs.push_back(sub);
    }

    std::vector<std::string> argv_store{"sgdgap"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : argv_store) argv.push_back(s.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitPass;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitPass;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return kExitUsage;
    }

    std::size_t which = 0;
    while (which < subs.size() && !subs[which]->parsed()) ++which;
    if (which == subs.size()) {
        err << "error: no subcommand\n";
        return kExitUsage;
    }

    detail::Context ctx;
    ctx.command = commands[which].name;
    ctx.threads = opt.threads;
    try {
        if (!opt.config.empty()) ctx.cfg = load_config(opt.config);
        if (opt.seed) ctx.cfg.seed = *opt.seed;
        ctx.cfg.validate();
        ctx.out = opt.out.empty() ? std::filesystem::path(ctx.cfg.out_dir) : std::filesystem::path(opt.out);
        std::filesystem::create_directories(ctx.out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const IoError& e) {
        err << "io error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "io error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        const int code = commands[which].fn(ctx);
        out << ctx.command << ": " << (code == kExitPass ? "pass" : "FAIL") << " (" << (ctx.out / "summary.json").string()
            << ")\n";
        return code;
    } catch (const IoError& e) {
        err << "io error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        err << "invalid configuration for " << ctx.command << ": " << e.what() << "\n";
        return kExitUsage;
    }
}

} // namespace sgdgap::cli
