#include <cmath>
#include <sstream>

#include "mhetd/errors.hpp"
#include "mhetd/estimators.hpp"

namespace mhetd {

namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxHalvings = 60;

struct Run {
    Eigen::VectorXd offset;
    double objective = 0.0;
    double gradient_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

double fisher_information(const TDistribution& d) {
    const double s2 = d.sigma() * d.sigma();
    return d.is_gaussian() ? 1.0 / s2 : (d.nu() + 1.0) / ((d.nu() + 3.0) * s2);
}

Run newton(const WindowObjective& obj, Eigen::VectorXd x, const MleOptions& options) {
    const Eigen::MatrixXd gram = obj.rows.transpose() * obj.rows;
    const double fisher = fisher_information(obj.noise);
    Run run;
    double f = obj.value(x);
    Eigen::VectorXd g = obj.gradient(x);
    int it = 0;
    for (; it < options.max_iterations; ++it) {
        if (g.norm() < options.gradient_tolerance) {
            break;
        }
        Eigen::LLT<Eigen::MatrixXd> llt(obj.hessian(x));
        Eigen::VectorXd p;
        if (llt.info() == Eigen::Success) {
            p = -llt.solve(g);
        } else {
            p = -(fisher * gram).ldlt().solve(g);
        }
        const double slope = g.dot(p);
        if (!(slope < 0.0)) {
            p = -g;
        }
        double alpha = 1.0;
        bool accepted = false;
        Eigen::VectorXd trial;
        double f_trial = 0.0;
        for (int h = 0; h < kMaxHalvings; ++h) {
            trial = x + alpha * p;
            f_trial = obj.value(trial);
            if (f_trial <= f + kArmijo * alpha * g.dot(p)) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            // Near the optimum the objective is flat to rounding; a full step
            // that shrinks the gradient is still progress.
            trial = x + p;
            const Eigen::VectorXd g_trial = obj.gradient(trial);
            if (g_trial.norm() < g.norm() && obj.value(trial) <= f + 1e-12 * std::max(1.0, std::abs(f))) {
                x = trial;
                f = obj.value(x);
                g = g_trial;
                continue;
            }
            break;
        }
        x = trial;
        f = f_trial;
        g = obj.gradient(x);
    }
    run.offset = x;
    run.objective = f;
    run.gradient_norm = g.norm();
    run.iterations = it;
    run.converged = run.gradient_norm < options.gradient_tolerance;
    return run;
}

}  // namespace

WindowObjective::WindowObjective(const StateSpace& ss, const TDistribution& noise_model,
                                 std::span<const double> u, std::span<const double> y, int T, int window)
    : noise(noise_model), phi(ss.phi) {
    const int n = ss.order();
    if (window < n) {
        throw Error(ErrorCode::SingularInformation, "MLE window shorter than the model order");
    }
    if (T < window || static_cast<int>(y.size()) < T || static_cast<int>(u.size()) < T - 1) {
        throw Error(ErrorCode::InsufficientData, "MLE needs T >= window and the full record up to T");
    }
    const int k0 = T - window + 1;
    residuals.resize(window);
    rows.resize(window, n);
    Eigen::VectorXd s = Eigen::VectorXd::Zero(n);
    Eigen::RowVectorXd row = ss.h;
    for (int k = 1; k <= T; ++k) {
        if (k >= k0) {
            residuals(k - k0) = y[static_cast<std::size_t>(k - 1)] - ss.h.dot(s);
            rows.row(k - k0) = row;
            row = row * ss.phi;
        }
        if (k < T) {
            s = propagate_s(ss, s, u[static_cast<std::size_t>(k - 1)], y[static_cast<std::size_t>(k - 1)]);
        }
    }
    s_T = s;
    phi_span = matrix_power(ss.phi, window - 1);
}

double WindowObjective::value(const Eigen::VectorXd& offset) const {
    const Eigen::VectorXd e = residuals - rows * offset;
    double total = 0.0;
    for (Eigen::Index j = 0; j < e.size(); ++j) {
        total -= noise.log_pdf(e(j));
    }
    return total;
}

Eigen::VectorXd WindowObjective::gradient(const Eigen::VectorXd& offset) const {
    const Eigen::VectorXd e = residuals - rows * offset;
    Eigen::VectorXd k(e.size());
    for (Eigen::Index j = 0; j < e.size(); ++j) {
        k(j) = score_kernel(noise, e(j));
    }
    return -(rows.transpose() * k);
}

Eigen::MatrixXd WindowObjective::hessian(const Eigen::VectorXd& offset) const {
    const Eigen::VectorXd e = residuals - rows * offset;
    Eigen::VectorXd d(e.size());
    for (Eigen::Index j = 0; j < e.size(); ++j) {
        d(j) = score_kernel_derivative(noise, e(j));
    }
    return rows.transpose() * d.asDiagonal() * rows;
}

Eigen::VectorXd WindowObjective::state(const Eigen::VectorXd& offset) const { return s_T + phi_span * offset; }

Eigen::VectorXd WindowObjective::offset_for(const Eigen::VectorXd& x_T) const {
    return inverse_power(phi, static_cast<int>(residuals.size()) - 1) * (x_T - s_T);
}

MleResult solve_windowed_mle(const StateSpace& ss, const TDistribution& noise, std::span<const double> u,
                             std::span<const double> y, int T, int N, const MleOptions& options) {
    const int window = options.full_history ? T : N;
    const WindowObjective obj(ss, noise, u, y, T, window);

    const Eigen::MatrixXd gram = obj.rows.transpose() * obj.rows;
    std::vector<Eigen::VectorXd> starts;
    starts.push_back(gram.ldlt().solve(obj.rows.transpose() * obj.residuals));
    starts.push_back(Eigen::VectorXd::Zero(ss.order()));
    if (options.extra_start) {
        if (options.extra_start->size() != ss.order()) {
            throw Error(ErrorCode::DimensionMismatch, "MLE extra start has the wrong length");
        }
        starts.push_back(obj.offset_for(*options.extra_start));
    }

    Run best;
    bool have = false;
    for (const auto& start : starts) {
        Run run = newton(obj, start, options);
        const bool better = !have || (run.converged && !best.converged) ||
                            (run.converged == best.converged && run.objective < best.objective);
        if (better) {
            best = std::move(run);
            have = true;
        }
    }

    MleResult out;
    out.offset = best.offset;
    out.x_hat = obj.state(best.offset);
    out.objective = best.objective;
    out.gradient_norm = best.gradient_norm;
    out.iterations = best.iterations;
    out.converged = best.converged;
    if (!out.converged) {
        std::ostringstream msg;
        msg << to_string(ErrorCode::NoConvergence) << ": gradient norm " << out.gradient_norm << " after "
            << out.iterations << " iterations";
        out.diagnostic = msg.str();
    }
    return out;
}

MleEstimator::MleEstimator(const StateSpace& ss, const TDistribution& noise, int N, MleOptions options)
    : ss_(ss), noise_(noise), N_(N), options_(std::move(options)) {
    if (!options_.full_history && N_ < ss_.order()) {
        throw Error(ErrorCode::SingularInformation, "MLE window shorter than the model order");
    }
    x_hat_ = Eigen::VectorXd::Zero(ss_.order());
}

bool MleEstimator::observe(double y, double u) {
    y_hist_.push_back(y);
    u_hist_.push_back(u);
    ++t_;
    const int needed = options_.full_history ? ss_.order() : N_;
    if (t_ < needed) {
        return false;
    }
    last_ = solve_windowed_mle(ss_, noise_, u_hist_, y_hist_, t_, N_, options_);
    x_hat_ = last_.x_hat;
    return true;
}

}  // namespace mhetd
