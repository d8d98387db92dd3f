#include "mhetd/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include "mhetd/errors.hpp"

namespace mhetd {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

TDistribution noise_from(const Config& cfg, const std::string& prefix, std::optional<TDistribution> fallback) {
    if (!cfg.has(prefix + ".sigma") && !cfg.has(prefix + ".nu")) {
        if (fallback) {
            return *fallback;
        }
        throw Error(ErrorCode::Config, "missing key '" + prefix + ".sigma'");
    }
    const double sigma = cfg.number(prefix + ".sigma");
    const double nu = cfg.number_or(prefix + ".nu", std::numeric_limits<double>::infinity());
    if (!(sigma > 0.0) || !(nu > 0.0)) {
        throw Error(ErrorCode::Config, "'" + prefix + "' needs sigma > 0 and nu > 0");
    }
    return std::isinf(nu) ? TDistribution::gaussian(sigma) : TDistribution::student(nu, sigma);
}

bool windowed(EstimatorKind e) { return e == EstimatorKind::MheTd || e == EstimatorKind::Mwlse; }

int reanchor_for(const ExperimentConfig& cfg, int N) { return cfg.reanchor < 0 ? N : cfg.reanchor; }

int worker_count(int requested, int count) {
    const int hw = static_cast<int>(std::max(1U, std::thread::hardware_concurrency()));
    return std::max(1, std::min(requested > 0 ? requested : hw, count));
}

double mean_of(std::span<const double> xs) {
    double s = 0.0;
    for (double x : xs) {
        s += x;
    }
    return s / static_cast<double>(xs.size());
}

double standard_error(std::span<const double> xs) {
    return xs.size() < 2 ? kNaN : std::sqrt(sample_variance(xs) / static_cast<double>(xs.size()));
}

}  // namespace

const std::set<std::string, std::less<>>& config_schema() {
    static const std::set<std::string, std::less<>> keys = {
        "model.a",          "model.b",          "model.c",          "noise.nu",
        "noise.sigma",      "design.nu",        "design.sigma",     "seed",
        "rng",              "rho_mode",         "input.kind",       "input.std",
        "estimator.kind",   "estimator.N",      "estimator.reanchor", "estimator.particles",
        "estimator.pf_init_std", "estimator.kalman_prior", "experiment.estimators", "experiment.N",
        "experiment.k",     "experiment.runs",  "experiment.horizon", "experiment.bootstrap",
        "experiment.threads", "outlier.k",      "outlier.value",    "outlier.scales",
        "pf.particles",     "pf.init_std",      "pf.index_k",       "pf.timing_runs",
        "mle.full_history", "mle.max_iterations", "mle.gradient_tolerance",
    };
    return keys;
}

ExperimentConfig experiment_config(const Config& cfg) {
    if (cfg.has("rng") && cfg.str("rng") != kRngName) {
        throw Error(ErrorCode::Config, "key 'rng': only '" + std::string(kRngName) + "' is available");
    }
    const auto noise = noise_from(cfg, "noise", std::nullopt);
    auto model = ArmaxModel::make(Polynomial{cfg.numbers("model.a")},
                                  Polynomial{cfg.has("model.b") ? cfg.numbers("model.b") : std::vector<double>{0.0}},
                                  Polynomial{cfg.numbers("model.c")}, noise);
    ExperimentConfig out(std::move(model), noise_from(cfg, "design", noise));

    if (cfg.has("experiment.estimators")) {
        for (const auto& name : cfg.strings("experiment.estimators")) {
            out.estimators.push_back(parse_estimator_kind(name));
        }
    }
    if (cfg.has("experiment.N")) {
        out.N_values = cfg.integers("experiment.N");
    } else if (cfg.has("estimator.N")) {
        out.N_values = {cfg.integer("estimator.N")};
    }
    if (cfg.has("experiment.k")) {
        out.k_values = cfg.integers("experiment.k");
    }
    out.horizon = cfg.integer_or("experiment.horizon", out.horizon);
    out.runs = cfg.integer_or("experiment.runs", out.runs);
    out.seed = cfg.has("seed") ? cfg.u64("seed") : out.seed;
    const auto rho = cfg.str_or("rho_mode", "analytic");
    if (rho == "paper") {
        out.rho_mode = RhoMode::Paper;
    } else if (rho != "analytic") {
        throw Error(ErrorCode::Config, "key 'rho_mode': expected paper or analytic");
    }
    const auto input = cfg.str_or("input.kind", "zero");
    if (input == "gaussian") {
        out.input = InputKind::Gaussian;
    } else if (input != "zero") {
        throw Error(ErrorCode::Config, "key 'input.kind': expected zero or gaussian");
    }
    out.input_std = cfg.number_or("input.std", out.input_std);
    out.reanchor = cfg.integer_or("estimator.reanchor", out.reanchor);
    out.kalman_prior = cfg.number_or("estimator.kalman_prior", out.kalman_prior);
    if (cfg.has("outlier.k") || cfg.has("outlier.value")) {
        OutlierSpec spec;
        spec.k = cfg.integer("outlier.k");
        spec.value = cfg.number("outlier.value");
        if (cfg.has("outlier.scales")) {
            spec.scales = cfg.numbers("outlier.scales");
        }
        out.outlier = spec;
    }
    if (cfg.has("pf.particles")) {
        out.pf_particles = cfg.integers("pf.particles");
    }
    out.pf_init_std = cfg.number_or("pf.init_std", out.pf_init_std);
    out.index_k = cfg.integer_or("pf.index_k", out.index_k);
    out.timing_runs = cfg.integer_or("pf.timing_runs", out.timing_runs);
    out.mle.full_history = cfg.flag_or("mle.full_history", false);
    out.mle.max_iterations = cfg.integer_or("mle.max_iterations", out.mle.max_iterations);
    out.mle.gradient_tolerance = cfg.number_or("mle.gradient_tolerance", out.mle.gradient_tolerance);
    out.bootstrap = cfg.integer_or("experiment.bootstrap", out.bootstrap);
    out.threads = cfg.integer_or("experiment.threads", out.threads);

    if (out.runs < 1) {
        throw Error(ErrorCode::Config, "key 'experiment.runs' must be >= 1");
    }
    if (out.horizon < 1) {
        throw Error(ErrorCode::Config, "key 'experiment.horizon' must be >= 1");
    }
    if (out.bootstrap < 2) {
        throw Error(ErrorCode::Config, "key 'experiment.bootstrap' must be >= 2");
    }
    return out;
}

void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (int i = next++; i < count; i = next++) {
            try {
                fn(i);
            } catch (...) {
                const std::lock_guard lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
                next = count;
            }
        }
    };
    const int workers = worker_count(threads, count);
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back(worker);
        }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

std::vector<double> run_inputs(const ExperimentConfig& cfg, int run, int T) {
    std::vector<double> u(static_cast<std::size_t>(T), 0.0);
    if (cfg.input == InputKind::Gaussian) {
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(run), 1));
        for (auto& v : u) {
            v = cfg.input_std * rng.normal();
        }
    }
    return u;
}

Trajectory run_trajectory(const ExperimentConfig& cfg, int run, int T, std::span<const OutlierOverride> outliers) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(run), 0));
    return simulate(cfg.model, run_inputs(cfg, run, T), T, rng, outliers);
}

double sample_variance(std::span<const double> xs) {
    if (xs.size() < 2) {
        return kNaN;
    }
    const double m = mean_of(xs);
    double ss = 0.0;
    for (double x : xs) {
        ss += (x - m) * (x - m);
    }
    return ss / static_cast<double>(xs.size() - 1);
}

double bootstrap_variance_se(std::span<const double> xs, int resamples, std::uint64_t seed) {
    if (xs.size() < 2 || resamples < 2) {
        return kNaN;
    }
    Rng rng(seed);
    std::vector<double> draw(xs.size());
    std::vector<double> stats(static_cast<std::size_t>(resamples));
    for (auto& stat : stats) {
        for (auto& d : draw) {
            d = xs[static_cast<std::size_t>(rng.next_u64() % xs.size())];
        }
        stat = sample_variance(draw);
    }
    return std::sqrt(sample_variance(stats));
}

const VarianceCell* VarianceTable::find(EstimatorKind e, int N, int k) const {
    for (const auto& c : cells) {
        if (c.estimator == e && c.N == N && c.k == k) {
            return &c;
        }
    }
    return nullptr;
}

VarianceTable run_variance_experiment(const ExperimentConfig& cfg) {
    const auto ss = build_state_space(cfg.model);
    require_stable(ss);
    if (cfg.k_values.empty() || cfg.estimators.empty()) {
        throw Error(ErrorCode::Config, "variance experiment needs experiment.k and experiment.estimators");
    }
    for (auto e : cfg.estimators) {
        if (!windowed(e) && e != EstimatorKind::ArmaxFilter && e != EstimatorKind::Kalman) {
            throw Error(ErrorCode::Config, "variance experiment supports mhe_td, mwlse, armax_filter, kalman");
        }
        if (windowed(e) && cfg.N_values.empty()) {
            throw Error(ErrorCode::Config, "missing key 'experiment.N'");
        }
    }
    const int T = *std::max_element(cfg.k_values.begin(), cfg.k_values.end());

    std::vector<std::shared_ptr<const FilterGains>> gains;
    for (int N : cfg.N_values) {
        gains.push_back(std::make_shared<const FilterGains>(compute_gains(ss, N)));
    }

    VarianceTable table;
    auto add_cell = [&](EstimatorKind e, int N, int k) {
        VarianceCell cell;
        cell.estimator = e;
        cell.N = N;
        cell.k = k;
        table.cells.push_back(std::move(cell));
    };
    for (auto e : cfg.estimators) {
        if (windowed(e)) {
            for (std::size_t g = 0; g < gains.size(); ++g) {
                for (int k : cfg.k_values) {
                    if (k >= cfg.N_values[g]) {
                        add_cell(e, cfg.N_values[g], k);
                    }
                }
            }
        } else {
            for (int k : cfg.k_values) {
                add_cell(e, 0, k);
            }
        }
    }

    // values[run][cell]; NaN marks a failed run or a cell without an estimate.
    std::vector<std::vector<double>> values(static_cast<std::size_t>(cfg.runs));
    std::vector<std::string> failures(static_cast<std::size_t>(cfg.runs));
    const double R = cfg.model.noise.has_finite_variance() ? cfg.model.noise.variance() : kNaN;

    parallel_for(cfg.runs, cfg.threads, [&](int run) {
        auto& row = values[static_cast<std::size_t>(run)];
        row.assign(table.cells.size(), kNaN);
        try {
            const auto traj = run_trajectory(cfg, run, T);
            std::vector<std::vector<double>> growing;
            for (auto e : cfg.estimators) {
                if (windowed(e)) {
                    continue;
                }
                std::unique_ptr<StateEstimator> est;
                if (e == EstimatorKind::ArmaxFilter) {
                    est = std::make_unique<ArmaxFilter>(ss, cfg.design);
                } else {
                    if (std::isnan(R)) {
                        throw Error(ErrorCode::NonFiniteVariance, "kalman needs finite noise variance");
                    }
                    est = std::make_unique<KalmanFilter>(ss, R, cfg.kalman_prior);
                }
                std::vector<double> yh(static_cast<std::size_t>(T) + 1, kNaN);
                for (int k = 1; k <= T; ++k) {
                    const auto idx = static_cast<std::size_t>(k - 1);
                    if (est->observe(traj.y[idx], traj.u[idx])) {
                        yh[static_cast<std::size_t>(k)] = est->y_hat();
                    }
                }
                growing.push_back(std::move(yh));
            }
            for (std::size_t c = 0; c < table.cells.size(); ++c) {
                const auto& cell = table.cells[c];
                if (windowed(cell.estimator)) {
                    const auto g = static_cast<std::size_t>(
                        std::find(cfg.N_values.begin(), cfg.N_values.end(), cell.N) - cfg.N_values.begin());
                    const auto est = cell.estimator == EstimatorKind::MheTd
                                         ? batch_mhe_td(ss, *gains[g], cfg.design, traj.u, traj.y, cell.k)
                                         : batch_mwlse(ss, *gains[g], traj.u, traj.y, cell.k);
                    row[c] = est.y_hat;
                } else {
                    std::size_t slot = 0;
                    for (auto e : cfg.estimators) {
                        if (e == cell.estimator) {
                            break;
                        }
                        slot += windowed(e) ? 0 : 1;
                    }
                    row[c] = growing[slot][static_cast<std::size_t>(cell.k)];
                }
            }
        } catch (const Error& err) {
            row.assign(table.cells.size(), kNaN);
            failures[static_cast<std::size_t>(run)] = "run " + std::to_string(run) + ": " + err.what();
        }
    });
    for (auto& f : failures) {
        if (!f.empty()) {
            table.diagnostics.push_back(std::move(f));
        }
    }

    std::optional<NoiseMoments> moments;
    for (std::size_t c = 0; c < table.cells.size(); ++c) {
        auto& cell = table.cells[c];
        for (const auto& row : values) {
            if (std::isfinite(row[c])) {
                cell.samples.push_back(row[c]);
            }
        }
        cell.runs = static_cast<int>(cell.samples.size());
        cell.var_mc = sample_variance(cell.samples);
        cell.se = bootstrap_variance_se(cell.samples, cfg.bootstrap, derive_seed(cfg.seed, 0xB0075u, c));
        cell.var_theoretical = kNaN;
        cell.terms = {kNaN, kNaN, kNaN};
        if (windowed(cell.estimator)) {
            const auto g = static_cast<std::size_t>(
                std::find(cfg.N_values.begin(), cfg.N_values.end(), cell.N) - cfg.N_values.begin());
            VarianceReport report;
            if (cell.estimator == EstimatorKind::MheTd) {
                if (!moments) {
                    moments = moments_for(cfg.rho_mode, cfg.design, cfg.model.noise);
                }
                report = variance_from_moments(ss, *gains[g], *moments, cell.k);
            } else {
                const double rho3 =
                    cfg.rho_mode == RhoMode::Paper ? worked_example_moments().rho3 : cfg.model.noise.variance();
                report = variance_gaussian(ss, *gains[g], rho3, cell.k);
            }
            cell.var_theoretical = report.var_y;
            cell.terms = report.weighted;
        }
    }
    return table;
}

void write_variance_csv(std::ostream& out, const VarianceTable& table) {
    CsvWriter csv(out, {"estimator", "N", "k", "var_theoretical", "var_mc", "term1", "term2", "term3", "se", "runs"});
    for (const auto& c : table.cells) {
        csv.cell(to_string(c.estimator));
        if (c.N > 0) {
            csv.cell(c.N);
        } else {
            csv.blank();
        }
        csv.cell(c.k);
        auto maybe = [&](double v) -> CsvWriter& { return std::isnan(v) ? csv.blank() : csv.cell(v); };
        maybe(c.var_theoretical);
        maybe(c.var_mc);
        maybe(c.terms.window);
        maybe(c.terms.cross);
        maybe(c.terms.dynamic);
        maybe(c.se);
        csv.cell(c.runs);
        csv.end_row();
    }
}

OutlierResult run_outlier_experiment(const ExperimentConfig& cfg) {
    if (!cfg.outlier) {
        throw Error(ErrorCode::Config, "missing key 'outlier.k'");
    }
    if (cfg.N_values.empty()) {
        throw Error(ErrorCode::Config, "missing key 'estimator.N'");
    }
    const auto ss = build_state_space(cfg.model);
    require_stable(ss);
    const int N = cfg.N_values.front();
    const int T = cfg.horizon;
    const auto& spec = *cfg.outlier;
    if (spec.k < 1 || spec.k > T) {
        throw Error(ErrorCode::Config, "key 'outlier.k' must lie in 1..experiment.horizon");
    }
    auto gains = std::make_shared<const FilterGains>(compute_gains(ss, N));
    const auto width = static_cast<std::size_t>(T - N + 1);
    const std::size_t scales = spec.scales.size();

    // Per run and scale: y_hat and estimation error over k = N..T.
    struct RunData {
        std::vector<std::vector<double>> yh_robust, yh_ls, err_robust, err_ls;
        bool ok = false;
    };
    std::vector<RunData> data(static_cast<std::size_t>(cfg.runs));
    std::vector<std::string> failures(static_cast<std::size_t>(cfg.runs));

    parallel_for(cfg.runs, cfg.threads, [&](int run) {
        auto& d = data[static_cast<std::size_t>(run)];
        try {
            for (std::size_t s = 0; s < scales; ++s) {
                const OutlierOverride o{spec.k, spec.value * spec.scales[s]};
                const auto traj = run_trajectory(cfg, run, T, std::span(&o, 1));
                MheTdFilter robust(ss, gains, cfg.design);
                MwlseFilter ls(ss, gains);
                robust.set_reanchor_interval(reanchor_for(cfg, N));
                ls.set_reanchor_interval(reanchor_for(cfg, N));
                std::vector<double> yr(width), yl(width), er(width), el(width);
                for (int k = 1; k <= T; ++k) {
                    const auto idx = static_cast<std::size_t>(k - 1);
                    const bool a = robust.observe(traj.y[idx], traj.u[idx]);
                    const bool b = ls.observe(traj.y[idx], traj.u[idx]);
                    if (a && b) {
                        const auto j = static_cast<std::size_t>(k - N);
                        const double truth = traj.x[idx](0);
                        yr[j] = robust.y_hat();
                        yl[j] = ls.y_hat();
                        er[j] = yr[j] - truth;
                        el[j] = yl[j] - truth;
                    }
                }
                d.yh_robust.push_back(std::move(yr));
                d.yh_ls.push_back(std::move(yl));
                d.err_robust.push_back(std::move(er));
                d.err_ls.push_back(std::move(el));
            }
            d.ok = true;
        } catch (const Error& err) {
            failures[static_cast<std::size_t>(run)] = "run " + std::to_string(run) + ": " + err.what();
        }
    });

    OutlierResult result;
    result.N = N;
    result.spec = spec;
    for (auto& f : failures) {
        if (!f.empty()) {
            result.diagnostics.push_back(std::move(f));
        }
    }
    std::vector<const RunData*> good;
    for (const auto& d : data) {
        if (d.ok) {
            good.push_back(&d);
        }
    }
    result.completed = static_cast<int>(good.size());
    if (good.empty()) {
        throw Error(ErrorCode::NoConvergence, "every outlier run failed");
    }

    // Common inputs only matter for the theory when they are deterministic.
    const auto u = run_inputs(cfg, 0, T);
    const std::span<const double> u_theory =
        cfg.input == InputKind::Zero ? std::span<const double>(u) : std::span<const double>();
    const double rho4 = cfg.design.is_gaussian() ? 1.0 : rho_moments(cfg.design, cfg.model.noise).rho4;
    const auto robust_theory = outlier_expectation(ss, *gains, cfg.design, rho4, spec.k, spec.value, u_theory, N, T);
    const auto ls_theory =
        outlier_expectation(ss, *gains, TDistribution::gaussian(1.0), 1.0, spec.k, spec.value, u_theory, N, T);

    std::vector<double> column(good.size());
    auto gather = [&](auto member, std::size_t s, std::size_t j) {
        for (std::size_t r = 0; r < good.size(); ++r) {
            column[r] = ((*good[r]).*member)[s][j];
        }
        return std::span<const double>(column);
    };
    for (std::size_t j = 0; j < width; ++j) {
        OutlierRow row;
        row.k = N + static_cast<int>(j);
        row.theory_mhe_td = robust_theory.points[j].expected_y;
        row.theory_mwlse = ls_theory.points[j].expected_y;
        row.regime = robust_theory.points[j].regime;
        auto xs = gather(&RunData::yh_robust, 0, j);
        row.mc_mean_mhe_td = mean_of(xs);
        row.mc_se_mhe_td = standard_error(xs);
        xs = gather(&RunData::yh_ls, 0, j);
        row.mc_mean_mwlse = mean_of(xs);
        row.mc_se_mwlse = standard_error(xs);
        result.rows.push_back(row);
    }
    for (std::size_t s = 0; s < scales; ++s) {
        DeflectionSummary summary{.scale = spec.scales[s]};
        for (std::size_t j = 0; j < width; ++j) {
            if (N + static_cast<int>(j) < spec.k) {
                continue;
            }
            summary.peak_mhe_td = std::max(summary.peak_mhe_td, std::abs(mean_of(gather(&RunData::err_robust, s, j))));
            summary.peak_mwlse = std::max(summary.peak_mwlse, std::abs(mean_of(gather(&RunData::err_ls, s, j))));
        }
        result.deflections.push_back(summary);
    }
    for (const auto* d : good) {
        result.runs_mhe_td.push_back(d->yh_robust.front());
        result.runs_mwlse.push_back(d->yh_ls.front());
    }
    return result;
}

void write_outlier_csv(std::ostream& out, const OutlierResult& result) {
    CsvWriter csv(out, {"k", "E_yhat_mhe_td", "E_yhat_mwlse", "mc_mean_mhe_td", "mc_mean_mwlse", "theory_regime",
                        "mc_se_mhe_td", "mc_se_mwlse"});
    for (const auto& r : result.rows) {
        csv.cell(r.k).cell(r.theory_mhe_td).cell(r.theory_mwlse).cell(r.mc_mean_mhe_td).cell(r.mc_mean_mwlse);
        csv.cell(to_string(r.regime)).cell(r.mc_se_mhe_td).cell(r.mc_se_mwlse);
        csv.end_row();
    }
}

void write_outlier_runs_csv(std::ostream& out, const OutlierResult& result) {
    CsvWriter csv(out, {"run", "k", "y_hat_mhe_td", "y_hat_mwlse"});
    for (std::size_t r = 0; r < result.runs_mhe_td.size(); ++r) {
        for (std::size_t j = 0; j < result.runs_mhe_td[r].size(); ++j) {
            csv.cell(static_cast<std::int64_t>(r)).cell(result.N + static_cast<int>(j));
            csv.cell(result.runs_mhe_td[r][j]).cell(result.runs_mwlse[r][j]);
            csv.end_row();
        }
    }
}

const IndexRow* IndexReport::find(const std::string& estimator) const {
    for (const auto& r : rows) {
        if (r.estimator == estimator) {
            return &r;
        }
    }
    return nullptr;
}

IndexReport run_pf_comparison(const ExperimentConfig& cfg) {
    if (cfg.N_values.empty()) {
        throw Error(ErrorCode::Config, "missing key 'estimator.N'");
    }
    if (cfg.pf_particles.empty()) {
        throw Error(ErrorCode::Config, "missing key 'pf.particles'");
    }
    const auto ss = build_state_space(cfg.model);
    require_stable(ss);
    const int N = cfg.N_values.front();
    const int K = cfg.index_k;
    if (K < N) {
        throw Error(ErrorCode::Config, "key 'pf.index_k' must be >= N");
    }
    auto gains = std::make_shared<const FilterGains>(compute_gains(ss, N));
    const std::size_t P = cfg.pf_particles.size();
    const auto pf_seed = [&](int run, std::size_t i) {
        return derive_seed(cfg.seed, static_cast<std::uint64_t>(run), 2 + i);
    };

    // Squared deviation from the MLE at k = K: column 0 is mhe_td, then one per particle count.
    std::vector<std::vector<double>> sq(static_cast<std::size_t>(cfg.runs), std::vector<double>(P + 1, kNaN));
    std::vector<int> unconverged(static_cast<std::size_t>(cfg.runs), 0);
    std::vector<int> resets(static_cast<std::size_t>(cfg.runs), 0);
    std::vector<std::string> failures(static_cast<std::size_t>(cfg.runs));

    parallel_for(cfg.runs, cfg.threads, [&](int run) {
        const auto r = static_cast<std::size_t>(run);
        try {
            const auto traj = run_trajectory(cfg, run, K);
            MheTdFilter mhe(ss, gains, cfg.design);
            mhe.set_reanchor_interval(reanchor_for(cfg, N));
            std::vector<ParticleFilter> pfs;
            for (std::size_t i = 0; i < P; ++i) {
                pfs.emplace_back(ss, cfg.model.noise, cfg.pf_particles[i], cfg.pf_init_std, pf_seed(run, i));
            }
            for (int k = 1; k <= K; ++k) {
                const auto idx = static_cast<std::size_t>(k - 1);
                mhe.observe(traj.y[idx], traj.u[idx]);
                for (auto& pf : pfs) {
                    pf.observe(traj.y[idx], traj.u[idx]);
                }
            }
            MleOptions opts = cfg.mle;
            opts.extra_start = mhe.x_hat();
            const auto mle = solve_windowed_mle(ss, cfg.model.noise, traj.u, traj.y, K, N, opts);
            unconverged[r] = mle.converged ? 0 : 1;
            sq[r][0] = (mle.x_hat - mhe.x_hat()).squaredNorm();
            for (std::size_t i = 0; i < P; ++i) {
                sq[r][i + 1] = (mle.x_hat - pfs[i].x_hat()).squaredNorm();
                resets[r] += pfs[i].cloud().degenerate_resets;
            }
        } catch (const Error& err) {
            std::fill(sq[r].begin(), sq[r].end(), kNaN);
            failures[r] = "run " + std::to_string(run) + ": " + err.what();
        }
    });

    IndexReport report;
    for (std::size_t r = 0; r < sq.size(); ++r) {
        report.mle_unconverged += unconverged[r];
        report.pf_degenerate_resets += resets[r];
        if (!failures[r].empty()) {
            report.diagnostics.push_back(failures[r]);
        }
    }
    if (report.mle_unconverged > 0) {
        report.diagnostics.push_back(std::to_string(report.mle_unconverged) +
                                     " MLE solves stopped short of the gradient tolerance");
    }

    // Timing: sequential, first run discarded as warm-up.
    std::vector<std::vector<double>> step_us(P + 1);
    const int timed = std::min(cfg.timing_runs, cfg.runs);
    for (int run = 0; run < timed; ++run) {
        const auto traj = run_trajectory(cfg, run, K);
        auto time_steps = [&](StateEstimator& est, std::vector<double>& sink) {
            for (int k = 1; k <= K; ++k) {
                const auto idx = static_cast<std::size_t>(k - 1);
                const auto start = std::chrono::steady_clock::now();
                est.observe(traj.y[idx], traj.u[idx]);
                const auto stop = std::chrono::steady_clock::now();
                if (run > 0) {
                    sink.push_back(std::chrono::duration<double, std::micro>(stop - start).count());
                }
            }
        };
        MheTdFilter mhe(ss, gains, cfg.design);
        mhe.set_reanchor_interval(reanchor_for(cfg, N));
        time_steps(mhe, step_us[0]);
        for (std::size_t i = 0; i < P; ++i) {
            ParticleFilter pf(ss, cfg.model.noise, cfg.pf_particles[i], cfg.pf_init_std, pf_seed(run, i));
            time_steps(pf, step_us[i + 1]);
        }
    }
    auto median = [](std::vector<double> xs) {
        if (xs.empty()) {
            return kNaN;
        }
        const auto mid = xs.begin() + static_cast<std::ptrdiff_t>(xs.size() / 2);
        std::nth_element(xs.begin(), mid, xs.end());
        return *mid;
    };

    for (std::size_t c = 0; c <= P; ++c) {
        IndexRow row;
        row.estimator = c == 0 ? "mhe_td" : "pf" + std::to_string(cfg.pf_particles[c - 1]);
        row.k = K;
        std::vector<double> xs;
        for (const auto& r : sq) {
            if (std::isfinite(r[c])) {
                xs.push_back(r[c]);
            }
        }
        row.runs = static_cast<int>(xs.size());
        row.I_k = xs.empty() ? kNaN : mean_of(xs);
        row.median_step_us = median(step_us[c]);
        report.rows.push_back(row);
    }
    return report;
}

void write_index_csv(std::ostream& out, const IndexReport& report) {
    CsvWriter csv(out, {"estimator", "k", "I_k", "median_step_us", "runs"});
    for (const auto& r : report.rows) {
        csv.cell(r.estimator).cell(r.k).cell(r.I_k).cell(r.median_step_us).cell(r.runs);
        csv.end_row();
    }
}

}  // namespace mhetd
