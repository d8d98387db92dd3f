#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mhetd/errors.hpp"
#include "mhetd/experiments.hpp"

using namespace mhetd;

namespace {

const char* kExample2 = R"(
model.a = 1, -0.9
model.b = 0, 1
model.c = 1, -0.85
noise.nu = 3
noise.sigma = 1
seed = 7
estimator.N = 3
experiment.horizon = 40
experiment.runs = 200
outlier.k = 20
outlier.value = -10
outlier.scales = 1, 10
)";

ExperimentConfig parse(const std::string& text) { return experiment_config(Config::parse(text, config_schema())); }

}  // namespace

TEST(ExperimentConfig, ReadsKeysAndDefaults) {
    const auto cfg = parse(kExample2);
    EXPECT_EQ(cfg.N_values, std::vector<int>{3});
    EXPECT_EQ(cfg.horizon, 40);
    EXPECT_EQ(cfg.runs, 200);
    EXPECT_EQ(cfg.seed, 7U);
    ASSERT_TRUE(cfg.outlier.has_value());
    EXPECT_EQ(cfg.outlier->scales, (std::vector<double>{1.0, 10.0}));
    // Design noise defaults to the true noise.
    EXPECT_DOUBLE_EQ(cfg.design.sigma(), 1.0);
    EXPECT_EQ(cfg.rho_mode, RhoMode::Analytic);
    EXPECT_EQ(cfg.reanchor, -1);
}

TEST(ExperimentConfig, RejectsBadValues) {
    EXPECT_THROW(parse("model.a = 1, -0.5\nmodel.c = 1\n"), Error);  // no noise.sigma
    EXPECT_THROW(parse(std::string(kExample2) + "rng = minstd\n"), Error);
    EXPECT_THROW(parse(std::string(kExample2) + "rho_mode = exact\n"), Error);
    EXPECT_THROW(parse(std::string(kExample2) + "input.kind = square\n"), Error);
    EXPECT_THROW(parse(std::string(kExample2) + "experiment.bootstrap = 1\n"), Error);
    EXPECT_THROW(parse("model.a = 1, -0.5\nmodel.c = 1\nnoise.sigma = -1\n"), Error);
    try {
        parse(std::string(kExample2) + "bogus = 1\n");
        FAIL();
    } catch (const Error& e) {
        EXPECT_TRUE(e.is_config_error());
    }
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
    std::vector<std::atomic<int>> hits(1000);
    parallel_for(1000, 4, [&](int i) { ++hits[static_cast<std::size_t>(i)]; });
    for (const auto& h : hits) {
        EXPECT_EQ(h.load(), 1);
    }
    parallel_for(0, 4, [](int) { FAIL(); });
}

TEST(ParallelFor, RethrowsWorkerException) {
    EXPECT_THROW(parallel_for(100, 3,
                              [](int i) {
                                  if (i == 37) {
                                      throw std::runtime_error("boom");
                                  }
                              }),
                 std::runtime_error);
}

TEST(Statistics, SampleVarianceAndBootstrap) {
    const std::vector<double> xs = {1.0, 2.0, 3.0, 4.0};
    EXPECT_DOUBLE_EQ(sample_variance(xs), 5.0 / 3.0);
    EXPECT_TRUE(std::isnan(sample_variance(std::vector<double>{1.0})));

    // Bootstrap SE of a variance shrinks like 1/sqrt(n).
    Rng rng(3);
    std::vector<double> big(4000);
    for (auto& v : big) {
        v = rng.normal();
    }
    const double se_small = bootstrap_variance_se(std::span(big).first(250), 400, 11);
    const double se_large = bootstrap_variance_se(big, 400, 11);
    EXPECT_GT(se_small / se_large, 2.5);
    EXPECT_LT(se_small / se_large, 6.0);
    // Normal data: SE of s^2 is about sqrt(2/(n-1)).
    EXPECT_NEAR(se_large, std::sqrt(2.0 / 3999.0), 0.3 * std::sqrt(2.0 / 3999.0));
}

TEST(Trajectories, DeterministicPerRunAndIndependentAcrossRuns) {
    const auto cfg = parse(kExample2);
    const auto a = run_trajectory(cfg, 5, 30);
    const auto b = run_trajectory(cfg, 5, 30);
    const auto c = run_trajectory(cfg, 6, 30);
    EXPECT_EQ(a.y, b.y);
    EXPECT_NE(a.y, c.y);
    for (double u : a.u) {
        EXPECT_EQ(u, 0.0);
    }
}

TEST(Trajectories, OutlierOverrideSharesOtherNoise) {
    const auto cfg = parse(kExample2);
    const OutlierOverride o{20, -10.0};
    const auto clean = run_trajectory(cfg, 2, 30);
    const auto hit = run_trajectory(cfg, 2, 30, std::span(&o, 1));
    EXPECT_EQ(hit.e[19], -10.0);
    for (std::size_t i = 0; i < 30; ++i) {
        if (i != 19) {
            EXPECT_EQ(hit.e[i], clean.e[i]);
        }
    }
}

TEST(VarianceExperiment, CsvIsDeterministicAcrossThreadCounts) {
    auto cfg = parse(std::string(kExample2) + "experiment.estimators = mhe_td, mwlse, armax_filter\nexperiment.k = 3, 10\n");
    cfg.runs = 60;
    auto render = [&](int threads) {
        cfg.threads = threads;
        std::ostringstream out;
        write_variance_csv(out, run_variance_experiment(cfg));
        return out.str();
    };
    const auto one = render(1);
    EXPECT_EQ(one, render(4));
    EXPECT_EQ(one.substr(0, one.find('\n')), "estimator,N,k,var_theoretical,var_mc,term1,term2,term3,se,runs");
}

TEST(VarianceExperiment, MatchesTheoryAndOrdersEstimators) {
    auto cfg = parse(std::string(kExample2) + "experiment.estimators = mhe_td, mwlse\nexperiment.k = 10\n");
    cfg.runs = 1000;
    const auto table = run_variance_experiment(cfg);
    EXPECT_TRUE(table.diagnostics.empty());
    const auto* robust = table.find(EstimatorKind::MheTd, 3, 10);
    const auto* ls = table.find(EstimatorKind::Mwlse, 3, 10);
    ASSERT_TRUE(robust && ls);
    EXPECT_EQ(robust->runs, 1000);
    EXPECT_LT(std::abs(robust->var_mc - robust->var_theoretical), 4.0 * robust->se);
    EXPECT_LT(std::abs(ls->var_mc - ls->var_theoretical), 4.0 * ls->se);
    EXPECT_LT(robust->var_theoretical, ls->var_theoretical);
    EXPECT_NEAR(robust->terms.sum(), robust->var_theoretical, 1e-12);
}

TEST(VarianceExperiment, RequiresWindowAndCells) {
    auto cfg = parse(std::string(kExample2) + "experiment.estimators = mhe_td\n");
    EXPECT_THROW(run_variance_experiment(cfg), Error);  // no experiment.k
    cfg.k_values = {5};
    cfg.N_values.clear();
    EXPECT_THROW(run_variance_experiment(cfg), Error);
}

TEST(OutlierExperiment, RowsRegimesAndBoundedInfluence) {
    auto cfg = parse(kExample2);
    const auto result = run_outlier_experiment(cfg);
    ASSERT_EQ(result.rows.size(), static_cast<std::size_t>(40 - 3 + 1));
    EXPECT_EQ(result.completed, 200);
    for (const auto& r : result.rows) {
        const auto expected = r.k < 20 ? OutlierRegime::Before : r.k < 20 + 3 ? OutlierRegime::Window : OutlierRegime::After;
        EXPECT_EQ(r.regime, expected) << r.k;
        EXPECT_LT(std::abs(r.mc_mean_mhe_td - r.theory_mhe_td), 4.5 * r.mc_se_mhe_td) << r.k;
        EXPECT_LT(std::abs(r.mc_mean_mwlse - r.theory_mwlse), 4.5 * r.mc_se_mwlse) << r.k;
    }
    ASSERT_EQ(result.deflections.size(), 2U);
    const auto& d1 = result.deflections[0];
    const auto& d10 = result.deflections[1];
    EXPECT_LT(d1.peak_mhe_td, d1.peak_mwlse);
    EXPECT_NEAR(d10.peak_mwlse / d1.peak_mwlse, 10.0, 1.0);
    EXPECT_LT(d10.peak_mhe_td, 2.0 * d1.peak_mhe_td);

    std::ostringstream a;
    std::ostringstream b;
    write_outlier_csv(a, result);
    write_outlier_csv(b, run_outlier_experiment(cfg));
    EXPECT_EQ(a.str(), b.str());
}

TEST(PfComparison, ReportsEveryEstimator) {
    auto cfg = parse(std::string(kExample2) + "pf.particles = 20, 50\npf.index_k = 15\npf.timing_runs = 3\n");
    cfg.runs = 20;
    const auto report = run_pf_comparison(cfg);
    ASSERT_EQ(report.rows.size(), 3U);
    for (const char* name : {"mhe_td", "pf20", "pf50"}) {
        const auto* row = report.find(name);
        ASSERT_NE(row, nullptr) << name;
        EXPECT_EQ(row->k, 15);
        EXPECT_EQ(row->runs, 20);
        EXPECT_TRUE(std::isfinite(row->I_k));
        EXPECT_GT(row->median_step_us, 0.0);
    }
    cfg.index_k = 2;
    EXPECT_THROW(run_pf_comparison(cfg), Error);
}
