#include "mhetd/analysis.hpp"

#include "mhetd/errors.hpp"

namespace mhetd {

namespace {

void check_horizon(const StateSpace& ss, const FilterGains& gains, int T) {
    if (T < gains.N) {
        throw Error(ErrorCode::InsufficientData, "variance needs T >= N");
    }
    if (stability(ss).radius_phi_a >= 1.0) {
        throw Error(ErrorCode::Unstable, "phi_a must be stable for the dynamic term");
    }
}

}  // namespace

VarianceReport variance_from_moments(const StateSpace& ss, const FilterGains& gains, const NoiseMoments& moments,
                                     int T) {
    check_horizon(ss, gains, T);
    const int n = ss.order();
    const int N = gains.N;
    const Eigen::MatrixXd& M = gains.M;

    // S = sum_{i=1}^{N-1} (H phi^{i-N})' (phi_a^{N-i-1} omega)', paired from j = N-i-1 = 0 upward.
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd v = ss.omega;
    for (int j = 0; j <= N - 2; ++j) {
        S.noalias() += gains.window_rows.row(N - 2 - j).transpose() * v.transpose();
        v = ss.phi_a * v;
    }

    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, n);
    double dynamic = 0.0;
    v = ss.omega;
    for (int j = 0; j <= T - 2; ++j) {
        D.noalias() += v * v.transpose();
        const double hv = ss.h.dot(v);
        dynamic += hv * hv;
        v = ss.phi_a * v;
    }

    const double w1 = moments.rho1 / (moments.rho4 * moments.rho4);
    const double w2 = moments.rho2 / moments.rho4;
    const double w3 = moments.rho3;
    const Eigen::MatrixXd MS = M * S;

    VarianceReport r;
    r.var_x = w1 * M + w2 * (MS + MS.transpose()) + w3 * D;
    r.var_x = 0.5 * (r.var_x + r.var_x.transpose()).eval();
    r.coefficients.window = (ss.h * M * ss.h.transpose()).value();
    r.coefficients.cross = 2.0 * (ss.h * MS * ss.h.transpose()).value();
    r.coefficients.dynamic = dynamic;
    r.weighted = {w1 * r.coefficients.window, w2 * r.coefficients.cross, w3 * r.coefficients.dynamic};
    r.var_y = r.weighted.sum();
    r.moments = moments;
    r.T = T;
    r.N = N;
    return r;
}

VarianceReport variance_yhat(const StateSpace& ss, const TDistribution& design, const TDistribution& actual, int N,
                             int T, RhoMode mode) {
    const auto gains = compute_gains(ss, N);
    return variance_from_moments(ss, gains, moments_for(mode, design, actual), T);
}

VarianceReport variance_gaussian(const StateSpace& ss, const FilterGains& gains, double rho3, int T) {
    // Moments of a unit-variance Gaussian design: both ratios reduce to rho3.
    return variance_from_moments(ss, gains, NoiseMoments{rho3, rho3, rho3, 1.0}, T);
}

VarianceReport variance_gaussian(const StateSpace& ss, const TDistribution& actual, int N, int T) {
    if (!actual.has_finite_variance()) {
        throw Error(ErrorCode::NonFiniteVariance, "actual noise needs nu > 2");
    }
    return variance_gaussian(ss, compute_gains(ss, N), actual.variance(), T);
}

std::string_view to_string(OutlierRegime r) noexcept {
    switch (r) {
        case OutlierRegime::Before: return "before";
        case OutlierRegime::Window: return "window";
        case OutlierRegime::After: return "after";
    }
    return "unknown";
}

OutlierTrace outlier_expectation(const StateSpace& ss, const FilterGains& gains, const TDistribution& design,
                                 double rho4, int k1, double e_k1, std::span<const double> u, int first, int last) {
    if (k1 < 1 || first < 1 || last < first) {
        throw Error(ErrorCode::InvalidArgument, "need k1 >= 1 and 1 <= first <= last");
    }
    const int N = gains.N;
    const double influence = design.is_gaussian() ? e_k1 : score_kernel(design, e_k1) / rho4;

    OutlierTrace trace;
    trace.k1 = k1;
    trace.e_k1 = e_k1;
    trace.N = N;
    // E(s_{T+1}) = phi_a E(s_T) + gamma u_T + omega e_T with E(e_T) = 0 except at k1.
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(ss.order());
    for (int T = 1; T <= last; ++T) {
        if (T >= first) {
            OutlierPoint p;
            p.T = T;
            p.mean_s = ss.h.dot(mean);
            if (T < k1) {
                p.regime = OutlierRegime::Before;
            } else if (T <= k1 + N - 1) {
                p.regime = OutlierRegime::Window;
                const auto row = gains.window_rows.row(k1 - T + N - 1);
                p.correction = ss.h.dot(gains.M * row.transpose()) * influence;
            } else {
                p.regime = OutlierRegime::After;
            }
            p.expected_y = p.mean_s + p.correction;
            trace.points.push_back(p);
        }
        const auto idx = static_cast<std::size_t>(T - 1);
        const double u_T = idx < u.size() ? u[idx] : 0.0;
        const Eigen::VectorXd next = ss.phi_a * mean + ss.gamma * u_T + (T == k1 ? e_k1 : 0.0) * ss.omega;
        mean = next;
    }
    return trace;
}

OutlierTrace outlier_expectation(const StateSpace& ss, const TDistribution& design, const TDistribution& actual,
                                 int N, int k1, double e_k1, std::span<const double> u, int first, int last) {
    const double rho4 = design.is_gaussian() ? 1.0 : rho_moments(design, actual).rho4;
    return outlier_expectation(ss, compute_gains(ss, N), design, rho4, k1, e_k1, u, first, last);
}

}  // namespace mhetd
