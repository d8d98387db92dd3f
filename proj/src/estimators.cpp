#include "mhetd/estimators.hpp"

#include <algorithm>
#include <sstream>

#include "mhetd/errors.hpp"

namespace mhetd {

namespace {

constexpr double kMaxCondition = 1e12;

double condition_of(const Eigen::MatrixXd& sym) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 0.0)) {
        return std::numeric_limits<double>::infinity();
    }
    return hi / lo;
}

Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& sym) {
    const Eigen::MatrixXd inv = sym.ldlt().solve(Eigen::MatrixXd::Identity(sym.rows(), sym.cols()));
    return 0.5 * (inv + inv.transpose());
}

void check_information(const Eigen::MatrixXd& gram, double& condition) {
    condition = condition_of(gram);
    if (!(condition <= kMaxCondition)) {
        std::ostringstream msg;
        msg << "information matrix condition number " << condition << " exceeds " << kMaxCondition;
        throw Error(ErrorCode::SingularInformation, msg.str());
    }
}

Estimate batch_window(const StateSpace& ss, const FilterGains& gains, const TDistribution* design,
                      std::span<const double> u, std::span<const double> y, int T) {
    const int N = gains.N;
    if (T < N) {
        throw Error(ErrorCode::InsufficientData, "batch estimate needs T >= N");
    }
    if (static_cast<int>(y.size()) < T || static_cast<int>(u.size()) < T - 1) {
        throw Error(ErrorCode::InsufficientData, "record shorter than T");
    }
    const int n = ss.order();
    Eigen::VectorXd s = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd w(N);
    const int k0 = T - N + 1;
    for (int k = 1; k <= T; ++k) {
        if (k >= k0) {
            const double r = y[static_cast<std::size_t>(k - 1)] - ss.h.dot(s);
            w(k - k0) = design != nullptr ? psi_transform(*design, r) : r;
        }
        if (k < T) {
            s = propagate_s(ss, s, u[static_cast<std::size_t>(k - 1)], y[static_cast<std::size_t>(k - 1)]);
        }
    }
    Estimate out;
    out.x_hat = s + gains.window_solve * w;
    out.y_hat = ss.h.dot(out.x_hat);
    return out;
}

}  // namespace

FilterGains compute_gains(const StateSpace& ss, int N) {
    const int n = ss.order();
    if (N < n) {
        std::ostringstream msg;
        msg << "window N = " << N << " is shorter than the model order " << n;
        throw Error(ErrorCode::SingularInformation, msg.str());
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(ss.phi);
    if (!lu.isInvertible()) {
        throw Error(ErrorCode::PhiSingular, "phi is singular (c_n = 0)");
    }

    FilterGains g;
    g.N = N;
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
    Eigen::RowVectorXd row = ss.h;  // H phi^{i-1}
    for (int i = 1; i <= N; ++i) {
        gram.noalias() += row.transpose() * row;
        row = row * ss.phi;
    }
    check_information(gram, g.condition);
    g.P = spd_inverse(gram);

    Eigen::FullPivLU<Eigen::MatrixXd> lu_t(ss.phi.transpose());
    g.window_rows.resize(N, n);
    g.window_rows.row(N - 1) = ss.h;
    for (int i = N - 2; i >= 0; --i) {
        g.window_rows.row(i) = lu_t.solve(g.window_rows.row(i + 1).transpose()).transpose();
    }
    // M, L and L_tilde from the QR solve of the window rows: their errors then
    // scale with cond(window_rows), not with its square as P's do.
    g.window_solve = g.window_rows.colPivHouseholderQr().solve(Eigen::MatrixXd::Identity(N, N));
    g.M = g.window_solve * g.window_solve.transpose();
    g.L = g.window_solve.col(N - 1);
    const Eigen::VectorXd before_window = lu_t.solve(g.window_rows.row(0).transpose());  // (H phi^{-N})'
    g.L_tilde = g.M * before_window;
    g.phi_inv_pow = inverse_power(ss.phi, N - 1);

    g.xi_u.resize(n, N - 1);
    g.xi_y.resize(n, N - 1);
    if (N > 1) {
        g.xi_u.col(N - 2) = ss.gamma;
        g.xi_y.col(N - 2) = ss.omega;
        for (int j = N - 3; j >= 0; --j) {
            g.xi_u.col(j) = ss.phi * g.xi_u.col(j + 1);
            g.xi_y.col(j) = ss.phi * g.xi_y.col(j + 1);
        }
    }

    return g;
}

Estimate batch_mhe_td(const StateSpace& ss, const FilterGains& gains, const TDistribution& design,
                      std::span<const double> u, std::span<const double> y, int T) {
    return batch_window(ss, gains, &design, u, y, T);
}

Estimate batch_mwlse(const StateSpace& ss, const FilterGains& gains, std::span<const double> u,
                     std::span<const double> y, int T) {
    return batch_window(ss, gains, nullptr, u, y, T);
}

// ===========================================================================
// Moving-window recursion
// ===========================================================================

MovingWindowFilter::MovingWindowFilter(StateSpace ss, std::shared_ptr<const FilterGains> gains,
                                       std::optional<TDistribution> design)
    : ss_(std::move(ss)), gains_(std::move(gains)), design_(design) {
    if (!gains_) {
        throw Error(ErrorCode::InvalidArgument, "filter gains missing");
    }
    const int n = ss_.order();
    const int N = gains_->N;
    if (gains_->M.rows() != n) {
        throw Error(ErrorCode::DimensionMismatch, "gains were computed for a different model order");
    }
    h_phi_inv_pow_ = ss_.h * gains_->phi_inv_pow;
    back_u_ = h_phi_inv_pow_ * gains_->xi_u;
    back_y_ = h_phi_inv_pow_ * gains_->xi_y;
    x_hat_ = Eigen::VectorXd::Zero(n);
    s_ = Eigen::VectorXd::Zero(n);
    pred_ = Eigen::VectorXd::Zero(n);
    scratch_ = Eigen::VectorXd::Zero(n);
    z_buf_.assign(static_cast<std::size_t>(N), 0.0);
    w_buf_.assign(static_cast<std::size_t>(N), 0.0);
    u_buf_.assign(static_cast<std::size_t>(N - 1), 0.0);
    y_buf_.assign(static_cast<std::size_t>(N - 1), 0.0);
    pending_u_.reserve(static_cast<std::size_t>(N));
    pending_y_.reserve(static_cast<std::size_t>(N));
}

double MovingWindowFilter::transformed(double y, double hs) const {
    return design_ ? psi_transform(*design_, y - hs) + hs : y;
}

void MovingWindowFilter::set_reanchor_interval(int steps) {
    if (steps < 0) {
        throw Error(ErrorCode::InvalidArgument, "re-anchor interval must be nonnegative");
    }
    reanchor_interval_ = steps;
    since_anchor_ = 0;
}

void MovingWindowFilter::set_estimate(const Eigen::VectorXd& x) {
    if (!warmed_up()) {
        throw Error(ErrorCode::NotWarmedUp, "set_estimate before warm-up");
    }
    if (x.size() != x_hat_.size()) {
        throw Error(ErrorCode::DimensionMismatch, "estimate has the wrong dimension");
    }
    x_hat_ = x;
}

void MovingWindowFilter::anchor() {
    const Eigen::Map<const Eigen::VectorXd> w(w_buf_.data(), static_cast<Eigen::Index>(w_buf_.size()));
    x_hat_ = s_;
    x_hat_.noalias() += gains_->window_solve * w;
    since_anchor_ = 0;
}

void MovingWindowFilter::shift_in(std::vector<double>& buf, double value) noexcept {
    if (buf.empty()) {
        return;
    }
    std::rotate(buf.begin(), buf.begin() + 1, buf.end());
    buf.back() = value;
}

void MovingWindowFilter::warm_up(std::span<const double> u, std::span<const double> y) {
    const int N = gains_->N;
    if (static_cast<int>(y.size()) != N) {
        std::ostringstream msg;
        msg << "warm-up needs exactly N = " << N << " outputs, got " << y.size();
        throw Error(ErrorCode::InsufficientData, msg.str());
    }
    if (static_cast<int>(u.size()) < N - 1) {
        throw Error(ErrorCode::InsufficientData, "warm-up needs u_1..u_{N-1}");
    }
    s_.setZero();
    for (int k = 1; k <= N; ++k) {
        const auto idx = static_cast<std::size_t>(k - 1);
        const double hs = ss_.h.dot(s_);
        z_buf_[idx] = transformed(y[idx], hs);
        w_buf_[idx] = z_buf_[idx] - hs;
        if (k < N) {
            u_buf_[idx] = u[idx];
            y_buf_[idx] = y[idx];
            s_ = propagate_s(ss_, s_, u[idx], y[idx]);
        }
    }
    anchor();
    y_last_ = y[static_cast<std::size_t>(N - 1)];
    u_last_ = static_cast<int>(u.size()) >= N ? u[static_cast<std::size_t>(N - 1)] : 0.0;
    t_ = N;
}

const Eigen::VectorXd& MovingWindowFilter::step(double u_T, double y_next) {
    if (!warmed_up()) {
        throw Error(ErrorCode::NotWarmedUp, "step called before N samples were seen");
    }
    const FilterGains& g = *gains_;

    pred_.noalias() = ss_.phi * x_hat_;
    pred_ += ss_.gamma * u_T;
    pred_ += ss_.omega * y_last_;

    scratch_.noalias() = ss_.phi * s_;
    scratch_ += ss_.gamma * u_T;
    scratch_ += ss_.omega * y_last_;
    s_.swap(scratch_);

    const double hs = ss_.h.dot(s_);
    const double z_new = transformed(y_next, hs);

    double back = z_buf_.front() - h_phi_inv_pow_.dot(x_hat_);
    for (std::size_t j = 0; j < u_buf_.size(); ++j) {
        back += back_u_(static_cast<Eigen::Index>(j)) * u_buf_[j] +
                back_y_(static_cast<Eigen::Index>(j)) * y_buf_[j];
    }
    const double innovation = z_new - ss_.h.dot(pred_);

    x_hat_ = pred_;
    x_hat_ += g.L * innovation;
    x_hat_ -= g.L_tilde * back;

    shift_in(z_buf_, z_new);
    shift_in(w_buf_, z_new - hs);
    shift_in(u_buf_, u_T);
    shift_in(y_buf_, y_last_);
    y_last_ = y_next;
    ++t_;
    if (reanchor_interval_ > 0 && ++since_anchor_ >= reanchor_interval_) {
        anchor();
    }
    return x_hat_;
}

bool MovingWindowFilter::observe(double y, double u) {
    if (warmed_up()) {
        step(u_last_, y);
        u_last_ = u;
        return true;
    }
    pending_y_.push_back(y);
    pending_u_.push_back(u);
    if (static_cast<int>(pending_y_.size()) == gains_->N) {
        warm_up(pending_u_, pending_y_);
        pending_u_.clear();
        pending_y_.clear();
        return true;
    }
    return false;
}

MheTdFilter::MheTdFilter(const StateSpace& ss, std::shared_ptr<const FilterGains> gains,
                         const TDistribution& design)
    : MovingWindowFilter(ss, std::move(gains), design) {}

MheTdFilter::MheTdFilter(const StateSpace& ss, int N, const TDistribution& design)
    : MheTdFilter(ss, std::make_shared<const FilterGains>(compute_gains(ss, N)), design) {}

MwlseFilter::MwlseFilter(const StateSpace& ss, std::shared_ptr<const FilterGains> gains)
    : MovingWindowFilter(ss, std::move(gains), std::nullopt) {}

MwlseFilter::MwlseFilter(const StateSpace& ss, int N)
    : MwlseFilter(ss, std::make_shared<const FilterGains>(compute_gains(ss, N))) {}

// ===========================================================================
// Growing memory
// ===========================================================================

ArmaxFilter::ArmaxFilter(const StateSpace& ss, const TDistribution& design) : ss_(ss), design_(design) {
    const int n = ss_.order();
    phi_pow_ = Eigen::MatrixXd::Identity(n, n);
    gram_ = Eigen::MatrixXd::Zero(n, n);
    info_ = Eigen::VectorXd::Zero(n);
    x_hat_ = Eigen::VectorXd::Zero(n);
    s_ = Eigen::VectorXd::Zero(n);
}

bool ArmaxFilter::observe(double y, double u) {
    const int n = ss_.order();
    Eigen::VectorXd pred;
    if (t_ > 0) {
        pred = ss_.phi * x_hat_ + ss_.gamma * u_prev_ + ss_.omega * y_prev_;
        s_ = propagate_s(ss_, s_, u_prev_, y_prev_);
        phi_pow_ = ss_.phi * phi_pow_;
    }
    ++t_;
    const Eigen::RowVectorXd row = ss_.h * phi_pow_;
    gram_.noalias() += row.transpose() * row;
    const double hs = ss_.h.dot(s_);
    const double w = psi_transform(design_, y - hs);
    info_ += row.transpose() * w;
    u_prev_ = u;
    y_prev_ = y;

    if (t_ < n) {
        return false;
    }
    double condition = 0.0;
    if (t_ == n) {
        check_information(gram_, condition);
        const Eigen::MatrixXd P = spd_inverse(gram_);
        x_hat_ = s_ + phi_pow_ * (P * info_);
        L_ = phi_pow_ * P * row.transpose();
        return true;
    }
    const Eigen::MatrixXd P = spd_inverse(gram_);
    L_ = phi_pow_ * P * row.transpose();
    const double z = w + hs;
    x_hat_ = pred + L_ * (z - ss_.h.dot(pred));
    return true;
}

// ===========================================================================
// Kalman
// ===========================================================================

KalmanFilter::KalmanFilter(const StateSpace& ss, double measurement_variance, double prior_variance)
    : ss_(ss), R_(measurement_variance) {
    if (!(measurement_variance > 0.0) || !std::isfinite(measurement_variance)) {
        throw Error(ErrorCode::NonFiniteVariance, "Kalman measurement variance must be finite and positive");
    }
    if (!(prior_variance > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "prior variance must be positive");
    }
    const int n = ss_.order();
    I_ = Eigen::MatrixXd::Identity(n, n);
    x_pred_ = Eigen::VectorXd::Zero(n);
    P_ = prior_variance * I_;
    x_hat_ = Eigen::VectorXd::Zero(n);
}

bool KalmanFilter::observe(double y, double u) {
    if (t_ > 0) {
        x_pred_ = ss_.phi * x_hat_ + ss_.gamma * u_prev_ + ss_.omega * y_prev_;
        P_ = ss_.phi * P_ * ss_.phi.transpose();
    }
    const Eigen::VectorXd ph = P_ * ss_.h.transpose();
    innovation_var_ = ss_.h.dot(ph) + R_;
    const Eigen::VectorXd K = ph / innovation_var_;
    innovation_ = y - ss_.h.dot(x_pred_);
    x_hat_ = x_pred_ + K * innovation_;
    const Eigen::MatrixXd A = I_ - K * ss_.h;
    P_ = A * P_ * A.transpose() + R_ * K * K.transpose();
    u_prev_ = u;
    y_prev_ = y;
    ++t_;
    return true;
}

// ===========================================================================
// Factory
// ===========================================================================

EstimatorKind parse_estimator_kind(std::string_view text) {
    if (text == "mhe_td") return EstimatorKind::MheTd;
    if (text == "mwlse") return EstimatorKind::Mwlse;
    if (text == "armax_filter") return EstimatorKind::ArmaxFilter;
    if (text == "kalman") return EstimatorKind::Kalman;
    if (text == "mle") return EstimatorKind::Mle;
    if (text == "pf") return EstimatorKind::Pf;
    throw Error(ErrorCode::Config, "unknown estimator kind '" + std::string(text) +
                                       "' (expected mhe_td, mwlse, armax_filter, kalman, mle or pf)");
}

std::string_view to_string(EstimatorKind kind) noexcept {
    switch (kind) {
        case EstimatorKind::MheTd: return "mhe_td";
        case EstimatorKind::Mwlse: return "mwlse";
        case EstimatorKind::ArmaxFilter: return "armax_filter";
        case EstimatorKind::Kalman: return "kalman";
        case EstimatorKind::Mle: return "mle";
        case EstimatorKind::Pf: return "pf";
    }
    return "unknown";
}

std::unique_ptr<StateEstimator> make_estimator(const ArmaxModel& model, const EstimatorSpec& spec,
                                               std::uint64_t seed) {
    const StateSpace ss = build_state_space(model);
    require_stable(ss);
    switch (spec.kind) {
        case EstimatorKind::MheTd: {
            auto f = std::make_unique<MheTdFilter>(ss, spec.N, model.noise);
            f->set_reanchor_interval(spec.reanchor_interval);
            return f;
        }
        case EstimatorKind::Mwlse: {
            auto f = std::make_unique<MwlseFilter>(ss, spec.N);
            f->set_reanchor_interval(spec.reanchor_interval);
            return f;
        }
        case EstimatorKind::ArmaxFilter: return std::make_unique<ArmaxFilter>(ss, model.noise);
        case EstimatorKind::Kalman:
            return std::make_unique<KalmanFilter>(ss, model.noise.variance(), spec.kalman_prior);
        case EstimatorKind::Mle: return std::make_unique<MleEstimator>(ss, model.noise, spec.N, spec.mle);
        case EstimatorKind::Pf:
            return std::make_unique<ParticleFilter>(ss, model.noise, spec.particles, spec.pf_init_std, seed);
    }
    throw Error(ErrorCode::InvalidArgument, "unhandled estimator kind");
}

}  // namespace mhetd
