#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "mhetd/analysis.hpp"
#include "mhetd/config.hpp"
#include "mhetd/errors.hpp"
#include "mhetd/estimators.hpp"
#include "mhetd/experiments.hpp"

namespace fs = std::filesystem;
using namespace mhetd;

namespace {

constexpr int kExitNumerical = 1;
constexpr int kExitConfig = 2;

struct Options {
    std::string config;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
    std::optional<int> runs;
    bool quick = false;
    std::optional<std::string> rho_mode;
    std::string trajectory;
};

Config load_config(const Options& opt) {
    auto cfg = Config::load(opt.config, config_schema());
    if (opt.seed) {
        cfg.set("seed", std::to_string(*opt.seed));
    }
    if (opt.quick) {
        cfg.set("experiment.runs", "100");
    }
    if (opt.runs) {
        cfg.set("experiment.runs", std::to_string(*opt.runs));
    }
    if (opt.rho_mode) {
        cfg.set("rho_mode", *opt.rho_mode);
    }
    return cfg;
}

std::ofstream open_output(const Options& opt, const std::string& name) {
    std::error_code ec;
    fs::create_directories(opt.out, ec);
    const auto path = fs::path(opt.out) / name;
    std::ofstream out(path);
    if (!out) {
        throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
    }
    std::cout << "wrote " << path.string() << '\n';
    return out;
}

void report(const std::vector<std::string>& diagnostics) {
    for (const auto& d : diagnostics) {
        std::cerr << "warning: " << d << '\n';
    }
}

int cmd_simulate(const Options& opt) {
    const auto cfg = experiment_config(load_config(opt));
    std::vector<OutlierOverride> outliers;
    if (cfg.outlier) {
        outliers.push_back({cfg.outlier->k, cfg.outlier->value});
    }
    const auto traj = run_trajectory(cfg, 0, cfg.horizon, outliers);
    auto out = open_output(opt, "trajectory.csv");
    CsvWriter csv(out, {"k", "u", "y", "e"});
    for (std::size_t i = 0; i < traj.y.size(); ++i) {
        csv.cell(static_cast<int>(i) + 1).cell(traj.u[i]).cell(traj.y[i]).cell(traj.e[i]);
        csv.end_row();
    }
    return 0;
}

EstimatorSpec estimator_spec(const Config& cfg) {
    EstimatorSpec spec;
    spec.kind = parse_estimator_kind(cfg.str("estimator.kind"));
    const bool windowed = spec.kind == EstimatorKind::MheTd || spec.kind == EstimatorKind::Mwlse ||
                          spec.kind == EstimatorKind::Mle;
    if (windowed) {
        spec.N = cfg.integer("estimator.N");
        spec.reanchor_interval = cfg.integer_or("estimator.reanchor", spec.N);
    }
    spec.particles = cfg.integer_or("estimator.particles", spec.particles);
    spec.pf_init_std = cfg.number_or("estimator.pf_init_std", spec.pf_init_std);
    spec.kalman_prior = cfg.number_or("estimator.kalman_prior", spec.kalman_prior);
    spec.mle.full_history = cfg.flag_or("mle.full_history", false);
    spec.mle.max_iterations = cfg.integer_or("mle.max_iterations", spec.mle.max_iterations);
    spec.mle.gradient_tolerance = cfg.number_or("mle.gradient_tolerance", spec.mle.gradient_tolerance);
    return spec;
}

int cmd_estimate(const Options& opt) {
    const auto raw = load_config(opt);
    const auto cfg = experiment_config(raw);
    const auto spec = estimator_spec(raw);
    if (opt.trajectory.empty()) {
        throw Error(ErrorCode::Config, "estimate needs --trajectory");
    }
    const auto table = read_csv(opt.trajectory);
    const auto ky = table.column("y");
    const auto ku = table.column("u");
    // The estimator sees the design noise; the Kalman filter uses its variance.
    auto model = cfg.model;
    model.noise = cfg.design;
    auto est = make_estimator(model, spec, cfg.seed);

    auto out = open_output(opt, "estimate.csv");
    out << "# y_hat is empty until the estimator has a full window\n";
    CsvWriter csv(out, {"k", "y", "y_hat", "estimator"});
    int k = 0;
    for (const auto& row : table.rows) {
        ++k;
        const double y = std::stod(row[ky]);
        const double u = std::stod(row[ku]);
        const bool ready = est->observe(y, u);
        csv.cell(k).cell(y);
        if (ready) {
            csv.cell(est->y_hat());
        } else {
            csv.blank();
        }
        csv.cell(est->name());
        csv.end_row();
    }
    return 0;
}

int cmd_table2(const Options& opt) {
    const auto cfg = experiment_config(load_config(opt));
    const auto table = run_variance_experiment(cfg);
    report(table.diagnostics);
    auto out = open_output(opt, "table2.csv");
    write_variance_csv(out, table);
    return 0;
}

int cmd_outlier(const Options& opt) {
    const auto cfg = experiment_config(load_config(opt));
    const auto result = run_outlier_experiment(cfg);
    report(result.diagnostics);
    {
        auto out = open_output(opt, "outlier.csv");
        write_outlier_csv(out, result);
    }
    {
        auto out = open_output(opt, "outlier_runs.csv");
        write_outlier_runs_csv(out, result);
    }
    auto out = open_output(opt, "deflection.csv");
    CsvWriter csv(out, {"scale", "e_k1", "peak_mhe_td", "peak_mwlse"});
    for (const auto& d : result.deflections) {
        csv.cell(d.scale).cell(d.scale * result.spec.value).cell(d.peak_mhe_td).cell(d.peak_mwlse);
        csv.end_row();
        std::cout << "scale " << d.scale << ": peak deflection mhe_td " << d.peak_mhe_td << ", mwlse "
                  << d.peak_mwlse << '\n';
    }
    return 0;
}

int cmd_pfcompare(const Options& opt) {
    const auto cfg = experiment_config(load_config(opt));
    const auto report_ = run_pf_comparison(cfg);
    report(report_.diagnostics);
    auto out = open_output(opt, "index_report.csv");
    write_index_csv(out, report_);
    for (const auto& r : report_.rows) {
        std::cout << r.estimator << ": I_" << r.k << " = " << r.I_k << ", median step " << r.median_step_us
                  << " us\n";
    }
    return 0;
}

int cmd_analyze(const Options& opt) {
    const auto cfg = experiment_config(load_config(opt));
    if (cfg.N_values.empty()) {
        throw Error(ErrorCode::Config, "missing key 'estimator.N'");
    }
    const auto ss = build_state_space(cfg.model);
    const auto moments = moments_for(cfg.rho_mode, cfg.design, cfg.model.noise);
    const double rho3 = cfg.rho_mode == RhoMode::Paper ? worked_example_moments().rho3 : cfg.model.noise.variance();
    auto k_values = cfg.k_values;
    if (k_values.empty()) {
        k_values = {cfg.horizon};
    }
    auto out = open_output(opt, "analysis.csv");
    CsvWriter csv(out, {"estimator", "N", "k", "var_theoretical", "term1", "term2", "term3", "coef1", "coef2",
                        "coef3"});
    for (int N : cfg.N_values) {
        const auto gains = compute_gains(ss, N);
        for (int k : k_values) {
            if (k < N) {
                continue;
            }
            const auto robust = variance_from_moments(ss, gains, moments, k);
            const auto ls = variance_gaussian(ss, gains, rho3, k);
            for (const auto* r : {&robust, &ls}) {
                csv.cell(r == &robust ? "mhe_td" : "mwlse").cell(N).cell(k).cell(r->var_y);
                csv.cell(r->weighted.window).cell(r->weighted.cross).cell(r->weighted.dynamic);
                csv.cell(r->coefficients.window).cell(r->coefficients.cross).cell(r->coefficients.dynamic);
                csv.end_row();
            }
        }
    }
    std::cout << "rho1 " << moments.rho1 << " rho2 " << moments.rho2 << " rho3 " << moments.rho3 << " rho4 "
              << moments.rho4 << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Moving horizon estimation for ARMAX processes with Student-t noise"};
    app.require_subcommand(1);
    app.fallthrough();

    Options opt;
    app.add_option("--config", opt.config, "key = value configuration file")->check(CLI::ExistingFile);
    app.add_option("--out", opt.out, "output directory");
    app.add_option("--seed", opt.seed, "master seed override");
    app.add_option("--runs", opt.runs, "Monte Carlo run count override")->check(CLI::PositiveNumber);
    app.add_flag("--quick", opt.quick, "100 runs instead of the configured count");
    app.add_option("--rho-mode", opt.rho_mode, "paper or analytic noise moments")
        ->check(CLI::IsMember({"paper", "analytic"}));

    auto* simulate = app.add_subcommand("simulate", "write one simulated trajectory (k,u,y,e)");
    auto* estimate = app.add_subcommand("estimate", "run estimator.kind over a trajectory file");
    estimate->add_option("--trajectory", opt.trajectory, "CSV with columns k,u,y")
        ->required()
        ->check(CLI::ExistingFile);
    auto* table2 = app.add_subcommand("table2", "Monte Carlo variance table with closed-form values");
    auto* outlier = app.add_subcommand("outlier", "outlier response means against the closed form");
    auto* pfcompare = app.add_subcommand("pfcompare", "accuracy index and step time against particle filters");
    auto* analyze = app.add_subcommand("analyze", "closed-form variance terms only");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }
    if (opt.config.empty()) {
        std::cerr << "error: --config is required\n";
        return kExitConfig;
    }

    try {
        if (*simulate) return cmd_simulate(opt);
        if (*estimate) return cmd_estimate(opt);
        if (*table2) return cmd_table2(opt);
        if (*outlier) return cmd_outlier(opt);
        if (*pfcompare) return cmd_pfcompare(opt);
        if (*analyze) return cmd_analyze(opt);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.is_config_error() ? kExitConfig : kExitNumerical;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: malformed number in input: " << e.what() << '\n';
        return kExitConfig;
    }
    return kExitConfig;
}
