#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "mhetd/analysis.hpp"
#include "mhetd/armax.hpp"
#include "mhetd/errors.hpp"
#include "mhetd/estimators.hpp"
#include "mhetd/experiments.hpp"
#include "mhetd/random.hpp"
#include "mhetd/t_noise.hpp"

namespace py = pybind11;
using namespace mhetd;

namespace {

using Vec = std::vector<double>;

py::dict trajectory_dict(const Trajectory& t) {
    Eigen::MatrixXd x(t.length(), t.x.empty() ? 0 : t.x.front().size());
    for (int k = 0; k < x.rows(); ++k) {
        x.row(k) = t.x[static_cast<std::size_t>(k)].transpose();
    }
    py::dict d;
    d["u"] = t.u;
    d["y"] = t.y;
    d["e"] = t.e;
    d["x"] = x;
    return d;
}

template <class Table, class Writer>
std::string to_csv(const Table& table, Writer write) {
    std::ostringstream out;
    write(out, table);
    return out.str();
}

ExperimentConfig experiment_from_text(const std::string& text) {
    return experiment_config(Config::parse(text, config_schema()));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Robust moving-horizon state estimation for ARMAX models with Student-t noise.";

    static py::exception<Error> error_type(m, "MhetdError", PyExc_RuntimeError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) {
                std::rethrow_exception(p);
            }
        } catch (const Error& e) {
            py::object exc = py::reinterpret_borrow<py::object>(error_type)(e.what());
            exc.attr("code") = std::string(to_string(e.code()));
            PyErr_SetObject(error_type.ptr(), exc.ptr());
        }
    });

    py::enum_<RhoMode>(m, "RhoMode").value("Analytic", RhoMode::Analytic).value("Paper", RhoMode::Paper);

    py::class_<TDistribution>(m, "TDistribution")
        .def_static("student", &TDistribution::student, py::arg("nu"), py::arg("sigma"))
        .def_static("gaussian", &TDistribution::gaussian, py::arg("sigma"))
        .def_property_readonly("nu", &TDistribution::nu)
        .def_property_readonly("sigma", &TDistribution::sigma)
        .def_property_readonly("is_gaussian", &TDistribution::is_gaussian)
        .def_property_readonly("variance", &TDistribution::variance)
        .def("sample", [](const TDistribution& d, int count, std::uint64_t seed) {
            Rng rng(seed);
            Vec out(static_cast<std::size_t>(count));
            for (auto& v : out) {
                v = sample(d, rng);
            }
            return out;
        }, py::arg("count"), py::arg("seed"))
        .def("__repr__", [](const TDistribution& d) {
            return d.is_gaussian() ? "TDistribution.gaussian(" + std::to_string(d.sigma()) + ")"
                                   : "TDistribution.student(" + std::to_string(d.nu()) + ", " +
                                         std::to_string(d.sigma()) + ")";
        });

    m.def("psi_transform", &psi_transform, py::arg("design"), py::arg("residual"),
          "Residual map of the robust window; identity for a Gaussian design.");
    m.def("score_kernel", &score_kernel, py::arg("design"), py::arg("e"));

    py::class_<NoiseMoments>(m, "NoiseMoments")
        .def_readonly("rho1", &NoiseMoments::rho1)
        .def_readonly("rho2", &NoiseMoments::rho2)
        .def_readonly("rho3", &NoiseMoments::rho3)
        .def_readonly("rho4", &NoiseMoments::rho4);
    m.def("moments", &moments_for, py::arg("mode"), py::arg("design"), py::arg("actual"));

    py::class_<ArmaxModel>(m, "ArmaxModel")
        .def(py::init([](const Vec& a, const Vec& b, const Vec& c, const TDistribution& noise) {
                 return ArmaxModel::make(Polynomial{a}, Polynomial{b}, Polynomial{c}, noise);
             }),
             py::arg("a"), py::arg("b"), py::arg("c"), py::arg("noise"))
        .def_property_readonly("a", [](const ArmaxModel& mdl) { return mdl.a.coeffs; })
        .def_property_readonly("b", [](const ArmaxModel& mdl) { return mdl.b.coeffs; })
        .def_property_readonly("c", [](const ArmaxModel& mdl) { return mdl.c.coeffs; })
        .def_readonly("noise", &ArmaxModel::noise)
        .def_property_readonly("order", &ArmaxModel::order);

    py::class_<StateSpace>(m, "StateSpace")
        .def(py::init(&build_state_space), py::arg("model"))
        .def_readonly("phi_a", &StateSpace::phi_a)
        .def_readonly("gamma", &StateSpace::gamma)
        .def_readonly("omega", &StateSpace::omega)
        .def_readonly("h", &StateSpace::h)
        .def_readonly("phi", &StateSpace::phi)
        .def_property_readonly("order", &StateSpace::order)
        .def("spectral_radii", [](const StateSpace& ss) {
            const auto r = stability(ss);
            return py::make_tuple(r.radius_phi_a, r.radius_phi);
        });

    m.def("simulate", [](const ArmaxModel& model, int T, std::uint64_t seed, const Vec& u,
                         const std::vector<std::pair<int, double>>& outliers) {
        std::vector<OutlierOverride> ov;
        for (const auto& [k, v] : outliers) {
            ov.push_back({k, v});
        }
        Rng rng(seed);
        return trajectory_dict(simulate(model, u, T, rng, ov));
    }, py::arg("model"), py::arg("T"), py::arg("seed"), py::arg("u") = Vec{},
       py::arg("outliers") = std::vector<std::pair<int, double>>{},
       "Simulates T samples from rest. Returns a dict with u, y, e and x (T x n).");

    py::class_<FilterGains, std::shared_ptr<FilterGains>>(m, "FilterGains")
        .def(py::init([](const StateSpace& ss, int N) { return std::make_shared<FilterGains>(compute_gains(ss, N)); }),
             py::arg("ss"), py::arg("N"))
        .def_readonly("N", &FilterGains::N)
        .def_readonly("P", &FilterGains::P)
        .def_readonly("M", &FilterGains::M)
        .def_readonly("L", &FilterGains::L)
        .def_readonly("L_tilde", &FilterGains::L_tilde)
        .def_readonly("condition", &FilterGains::condition);

    py::class_<Estimate>(m, "Estimate")
        .def_readonly("x_hat", &Estimate::x_hat)
        .def_readonly("y_hat", &Estimate::y_hat);

    m.def("batch_mhe_td", [](const StateSpace& ss, const FilterGains& g, const TDistribution& design, const Vec& u,
                             const Vec& y, int T) { return batch_mhe_td(ss, g, design, u, y, T); },
          py::arg("ss"), py::arg("gains"), py::arg("design"), py::arg("u"), py::arg("y"), py::arg("T"));
    m.def("batch_mwlse", [](const StateSpace& ss, const FilterGains& g, const Vec& u, const Vec& y, int T) {
        return batch_mwlse(ss, g, u, y, T);
    }, py::arg("ss"), py::arg("gains"), py::arg("u"), py::arg("y"), py::arg("T"));

    py::class_<StateEstimator>(m, "StateEstimator")
        .def("observe", &StateEstimator::observe, py::arg("y"), py::arg("u") = 0.0,
             "Feeds y_k, then the input u_k applied after it. True once an estimate exists.")
        .def_property_readonly("x_hat", &StateEstimator::x_hat)
        .def_property_readonly("y_hat", &StateEstimator::y_hat)
        .def_property_readonly("time", &StateEstimator::time)
        .def_property_readonly("name", [](const StateEstimator& e) { return std::string(e.name()); })
        .def("run", [](StateEstimator& e, const Vec& y, const Vec& u) {
            Vec out;
            out.reserve(y.size());
            for (std::size_t k = 0; k < y.size(); ++k) {
                const bool ready = e.observe(y[k], k < u.size() ? u[k] : 0.0);
                out.push_back(ready ? e.y_hat() : std::numeric_limits<double>::quiet_NaN());
            }
            return out;
        }, py::arg("y"), py::arg("u") = Vec{}, "y_hat per sample, NaN before the first estimate.");

    py::class_<MovingWindowFilter, StateEstimator>(m, "MovingWindowFilter")
        .def_property("reanchor_interval", &MovingWindowFilter::reanchor_interval,
                      &MovingWindowFilter::set_reanchor_interval)
        .def_property_readonly("warmed_up", &MovingWindowFilter::warmed_up);
    py::class_<MheTdFilter, MovingWindowFilter>(m, "MheTdFilter")
        .def(py::init<const StateSpace&, int, const TDistribution&>(), py::arg("ss"), py::arg("N"), py::arg("design"));
    py::class_<MwlseFilter, MovingWindowFilter>(m, "MwlseFilter")
        .def(py::init<const StateSpace&, int>(), py::arg("ss"), py::arg("N"));
    py::class_<ArmaxFilter, StateEstimator>(m, "ArmaxFilter")
        .def(py::init<const StateSpace&, const TDistribution&>(), py::arg("ss"), py::arg("design"))
        .def_property_readonly("gain", &ArmaxFilter::gain);
    py::class_<KalmanFilter, StateEstimator>(m, "KalmanFilter")
        .def(py::init<const StateSpace&, double, double>(), py::arg("ss"), py::arg("measurement_variance"),
             py::arg("prior_variance") = 1e6)
        .def_property_readonly("covariance", &KalmanFilter::covariance);
    py::class_<ParticleFilter, StateEstimator>(m, "ParticleFilter")
        .def(py::init<const StateSpace&, const TDistribution&, int, double, std::uint64_t>(), py::arg("ss"),
             py::arg("noise"), py::arg("particles"), py::arg("init_std") = 1.0, py::arg("seed") = 1);

    py::class_<MleResult>(m, "MleResult")
        .def_readonly("x_hat", &MleResult::x_hat)
        .def_readonly("objective", &MleResult::objective)
        .def_readonly("gradient_norm", &MleResult::gradient_norm)
        .def_readonly("iterations", &MleResult::iterations)
        .def_readonly("converged", &MleResult::converged);
    m.def("windowed_mle", [](const StateSpace& ss, const TDistribution& noise, const Vec& u, const Vec& y, int T, int N,
                             bool full_history) {
        MleOptions opts;
        opts.full_history = full_history;
        return solve_windowed_mle(ss, noise, u, y, T, N, opts);
    }, py::arg("ss"), py::arg("noise"), py::arg("u"), py::arg("y"), py::arg("T"), py::arg("N"),
       py::arg("full_history") = false);

    py::class_<VarianceTerms>(m, "VarianceTerms")
        .def_readonly("window", &VarianceTerms::window)
        .def_readonly("cross", &VarianceTerms::cross)
        .def_readonly("dynamic", &VarianceTerms::dynamic)
        .def("sum", &VarianceTerms::sum);
    py::class_<VarianceReport>(m, "VarianceReport")
        .def_readonly("var_x", &VarianceReport::var_x)
        .def_readonly("var_y", &VarianceReport::var_y)
        .def_readonly("coefficients", &VarianceReport::coefficients)
        .def_readonly("weighted", &VarianceReport::weighted)
        .def_readonly("moments", &VarianceReport::moments);
    m.def("variance_yhat", &variance_yhat, py::arg("ss"), py::arg("design"), py::arg("actual"), py::arg("N"),
          py::arg("T"), py::arg("mode") = RhoMode::Analytic, "Closed-form Var(y_hat_T) of the windowed estimate.");
    m.def("outlier_expectation", [](const StateSpace& ss, const TDistribution& design, const TDistribution& actual,
                                    int N, int k1, double e_k1, int first, int last) {
        const auto trace = outlier_expectation(ss, design, actual, N, k1, e_k1, {}, first, last);
        std::vector<std::pair<int, double>> out;
        for (const auto& p : trace.points) {
            out.emplace_back(p.T, p.expected_y);
        }
        return out;
    }, py::arg("ss"), py::arg("design"), py::arg("actual"), py::arg("N"), py::arg("k1"), py::arg("e_k1"),
       py::arg("first"), py::arg("last"), "[(T, E y_hat_T)] with zero input.");

    py::class_<ExperimentConfig>(m, "ExperimentConfig")
        .def_static("from_text", &experiment_from_text, py::arg("text"))
        .def_static("load", [](const std::string& path) { return experiment_config(Config::load(path, config_schema())); },
                    py::arg("path"))
        .def_readwrite("runs", &ExperimentConfig::runs)
        .def_readwrite("seed", &ExperimentConfig::seed)
        .def_readwrite("threads", &ExperimentConfig::threads)
        .def_readwrite("horizon", &ExperimentConfig::horizon)
        .def_readwrite("N_values", &ExperimentConfig::N_values)
        .def_readwrite("k_values", &ExperimentConfig::k_values)
        .def_readwrite("rho_mode", &ExperimentConfig::rho_mode)
        .def_readonly("model", &ExperimentConfig::model)
        .def_readonly("design", &ExperimentConfig::design);

    m.def("variance_experiment", [](const ExperimentConfig& cfg) {
        return to_csv(run_variance_experiment(cfg), write_variance_csv);
    }, py::arg("config"), "Runs the variance table and returns its CSV text.");
    m.def("outlier_experiment", [](const ExperimentConfig& cfg) {
        return to_csv(run_outlier_experiment(cfg), write_outlier_csv);
    }, py::arg("config"), "Runs the outlier experiment and returns its CSV text.");
    m.def("pf_comparison", [](const ExperimentConfig& cfg) {
        return to_csv(run_pf_comparison(cfg), write_index_csv);
    }, py::arg("config"), "Runs the particle-filter comparison and returns its CSV text.");
}
