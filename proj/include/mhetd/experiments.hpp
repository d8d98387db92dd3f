#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mhetd/analysis.hpp"
#include "mhetd/armax.hpp"
#include "mhetd/config.hpp"
#include "mhetd/estimators.hpp"
#include "mhetd/t_noise.hpp"

namespace mhetd {

enum class InputKind { Zero, Gaussian };

struct OutlierSpec {
    int k = 30;
    double value = -10.0;
    /// Magnitude multipliers; every scale reuses the same noise draws.
    std::vector<double> scales{1.0};
};

struct ExperimentConfig {
    ExperimentConfig(ArmaxModel m, TDistribution d) : model(std::move(m)), design(d) {}

    ArmaxModel model;
    TDistribution design;  ///< design noise of the robust estimators
    std::vector<EstimatorKind> estimators;
    std::vector<int> N_values;
    std::vector<int> k_values;
    int horizon = 60;  ///< record length T for simulate / outlier / estimate
    int runs = 1000;
    std::uint64_t seed = 1;
    RhoMode rho_mode = RhoMode::Analytic;
    InputKind input = InputKind::Zero;
    double input_std = 1.0;
    int reanchor = -1;  ///< re-anchor interval of the recursive filters; -1 means N
    double kalman_prior = 1e6;
    std::optional<OutlierSpec> outlier;
    std::vector<int> pf_particles{100, 1000};
    double pf_init_std = 1.0;
    int index_k = 50;
    int timing_runs = 20;
    MleOptions mle;
    int bootstrap = 200;
    int threads = 0;  ///< 0: hardware concurrency
};

/// Keys accepted in experiment config files.
const std::set<std::string, std::less<>>& config_schema();

/// Throws Config for missing required keys (model.a, model.c, noise.sigma)
/// or inconsistent values.
ExperimentConfig experiment_config(const Config& cfg);

/// Runs fn(0..count-1) on a pool; the first exception is rethrown after all
/// workers stop.
void parallel_for(int count, int threads, const std::function<void(int)>& fn);

/// Per-run input sequence u_1..u_T (stream 1 of the run seed).
std::vector<double> run_inputs(const ExperimentConfig& cfg, int run, int T);

/// Trajectory of run `run` with the configured inputs, noise stream 0 and
/// optional outlier overrides.
Trajectory run_trajectory(const ExperimentConfig& cfg, int run, int T,
                          std::span<const OutlierOverride> outliers = {});

/// Unbiased sample variance; NaN below two samples.
double sample_variance(std::span<const double> xs);

/// Standard error of the sample variance from `resamples` bootstrap draws.
double bootstrap_variance_se(std::span<const double> xs, int resamples, std::uint64_t seed);

struct VarianceCell {
    EstimatorKind estimator = EstimatorKind::MheTd;
    int N = 0;  ///< 0 for growing-memory estimators
    int k = 0;
    double var_theoretical = 0.0;  ///< NaN where no formula exists
    VarianceTerms terms;           ///< weighted terms of var_theoretical
    double var_mc = 0.0;           ///< NaN below two completed runs
    double se = 0.0;
    int runs = 0;
    std::vector<double> samples;   ///< y_hat_k per completed run
};

struct VarianceTable {
    std::vector<VarianceCell> cells;
    std::vector<std::string> diagnostics;

    [[nodiscard]] const VarianceCell* find(EstimatorKind e, int N, int k) const;
};

/// Empirical Var(y_hat_k) across runs for each (estimator, N, k), paired with
/// the closed-form value for mhe_td and mwlse. Windowed estimators are
/// evaluated in batch form at each k.
VarianceTable run_variance_experiment(const ExperimentConfig& cfg);

void write_variance_csv(std::ostream& out, const VarianceTable& table);

struct OutlierRow {
    int k = 0;
    double theory_mhe_td = 0.0;
    double theory_mwlse = 0.0;
    OutlierRegime regime = OutlierRegime::Before;
    double mc_mean_mhe_td = 0.0;
    double mc_mean_mwlse = 0.0;
    double mc_se_mhe_td = 0.0;
    double mc_se_mwlse = 0.0;
};

struct DeflectionSummary {
    double scale = 1.0;
    double peak_mhe_td = 0.0;  ///< max_k>=k1 |mean(y_hat_k - H x_k)|
    double peak_mwlse = 0.0;
};

struct OutlierResult {
    int N = 0;
    OutlierSpec spec;
    std::vector<OutlierRow> rows;  ///< k = N..horizon at scale 1
    std::vector<DeflectionSummary> deflections;
    /// y_hat per run at scale 1: [run][k - N] for mhe_td then mwlse.
    std::vector<std::vector<double>> runs_mhe_td;
    std::vector<std::vector<double>> runs_mwlse;
    int completed = 0;
    std::vector<std::string> diagnostics;
};

/// Recursive MHE-TD and MWLSE (window N_values[0]) on common noise draws with
/// the outlier injected, against outlier_expectation.
OutlierResult run_outlier_experiment(const ExperimentConfig& cfg);

void write_outlier_csv(std::ostream& out, const OutlierResult& result);
void write_outlier_runs_csv(std::ostream& out, const OutlierResult& result);

struct IndexRow {
    std::string estimator;
    int k = 0;
    double I_k = 0.0;
    double median_step_us = 0.0;
    int runs = 0;
};

struct IndexReport {
    std::vector<IndexRow> rows;
    int mle_unconverged = 0;
    int pf_degenerate_resets = 0;
    std::vector<std::string> diagnostics;

    [[nodiscard]] const IndexRow* find(const std::string& estimator) const;
};

/// I_k = mean ||x_mle - x_hat||^2 at k = index_k for mhe_td and each particle
/// count, plus median per-step wall time over timing_runs sequential runs
/// (the first excluded).
IndexReport run_pf_comparison(const ExperimentConfig& cfg);

void write_index_csv(std::ostream& out, const IndexReport& report);

}  // namespace mhetd
