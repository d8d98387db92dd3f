#include "mhetd/armax.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mhetd/errors.hpp"

namespace mhetd {

Polynomial operator*(const Polynomial& lhs, const Polynomial& rhs) {
    if (lhs.coeffs.empty() || rhs.coeffs.empty()) {
        return {};
    }
    std::vector<double> out(lhs.coeffs.size() + rhs.coeffs.size() - 1, 0.0);
    for (std::size_t i = 0; i < lhs.coeffs.size(); ++i) {
        for (std::size_t j = 0; j < rhs.coeffs.size(); ++j) {
            out[i + j] += lhs.coeffs[i] * rhs.coeffs[j];
        }
    }
    return {std::move(out)};
}

Polynomial Polynomial::power(const Polynomial& base, int k) {
    Polynomial out{{1.0}};
    for (int i = 0; i < k; ++i) {
        out = out * base;
    }
    return out;
}

ArmaxModel ArmaxModel::make(Polynomial a, Polynomial b, Polynomial c, TDistribution noise) {
    if (a.coeffs.empty() || c.coeffs.empty()) {
        throw Error(ErrorCode::DegreeMismatch, "A and C need at least the leading coefficient");
    }
    if (a.coeffs.front() != 1.0 || c.coeffs.front() != 1.0) {
        throw Error(ErrorCode::InvalidArgument, "A and C must be monic (leading coefficient 1)");
    }
    if (b.coeffs.empty()) {
        b.coeffs = {0.0};
    }
    if (b.coeffs.front() != 0.0) {
        throw Error(ErrorCode::InvalidArgument, "B must be strictly proper (b0 = 0)");
    }
    const auto n = std::max(a.coeffs.size(), c.coeffs.size());
    a.coeffs.resize(n, 0.0);
    c.coeffs.resize(n, 0.0);
    if (n < 2) {
        throw Error(ErrorCode::DegreeMismatch, "model order must be at least 1");
    }
    if (b.coeffs.size() > n) {
        std::ostringstream msg;
        msg << "deg B = " << b.degree() << " exceeds deg A = " << n - 1;
        throw Error(ErrorCode::DegreeMismatch, msg.str());
    }
    return {std::move(a), std::move(b), std::move(c), noise};
}

StateSpace build_state_space(const ArmaxModel& model) {
    const int n = model.order();
    if (model.c.degree() != n || model.b.degree() > n) {
        throw Error(ErrorCode::DegreeMismatch, "deg B <= deg A = deg C violated");
    }
    StateSpace ss;
    ss.phi_a = Eigen::MatrixXd::Zero(n, n);
    ss.gamma = Eigen::VectorXd::Zero(n);
    ss.omega = Eigen::VectorXd::Zero(n);
    ss.h = Eigen::RowVectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
        ss.phi_a(i, 0) = -model.a[i + 1];
        ss.gamma(i) = model.b[i + 1];
        ss.omega(i) = model.c[i + 1] - model.a[i + 1];
        if (i + 1 < n) {
            ss.phi_a(i, i + 1) = 1.0;
        }
    }
    ss.h(0) = 1.0;
    ss.phi = ss.phi_a - ss.omega * ss.h;
    return ss;
}

double spectral_radius(const Eigen::MatrixXd& m) {
    if (m.size() == 0) {
        return 0.0;
    }
    Eigen::EigenSolver<Eigen::MatrixXd> solver(m, /*computeEigenvectors=*/false);
    return solver.eigenvalues().cwiseAbs().maxCoeff();
}

StabilityReport stability(const StateSpace& ss) {
    return {spectral_radius(ss.phi_a), spectral_radius(ss.phi)};
}

void require_stable(const StateSpace& ss) {
    const auto report = stability(ss);
    if (!report.stable()) {
        std::ostringstream msg;
        msg << "spectral radius of phi_a = " << report.radius_phi_a << ", of phi = " << report.radius_phi
            << "; both must be < 1";
        throw Error(ErrorCode::Unstable, msg.str());
    }
}

Eigen::MatrixXd matrix_power(const Eigen::MatrixXd& m, int k) {
    if (k < 0) {
        return inverse_power(m, -k);
    }
    Eigen::MatrixXd out = Eigen::MatrixXd::Identity(m.rows(), m.cols());
    for (int i = 0; i < k; ++i) {
        out = m * out;
    }
    return out;
}

Eigen::MatrixXd inverse_power(const Eigen::MatrixXd& m, int k) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Identity(m.rows(), m.cols());
    if (k <= 0) {
        return out;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
    if (!lu.isInvertible()) {
        throw Error(ErrorCode::PhiSingular, "matrix is singular; c_n = 0 makes phi non-invertible");
    }
    for (int i = 0; i < k; ++i) {
        out = lu.solve(out);
    }
    return out;
}

Trajectory simulate(const ArmaxModel& model, std::span<const double> u, int T, Rng& rng,
                    std::span<const OutlierOverride> outliers) {
    if (T < 1) {
        throw Error(ErrorCode::InvalidArgument, "horizon T must be at least 1");
    }
    if (!u.empty() && static_cast<int>(u.size()) < T) {
        throw Error(ErrorCode::DimensionMismatch, "input sequence shorter than the horizon");
    }
    for (const auto& o : outliers) {
        if (o.k < 1 || o.k > T) {
            throw Error(ErrorCode::InvalidArgument, "outlier index outside 1..T");
        }
    }
    const StateSpace ss = build_state_space(model);
    Trajectory traj;
    traj.u.assign(static_cast<std::size_t>(T), 0.0);
    if (!u.empty()) {
        std::copy_n(u.begin(), T, traj.u.begin());
    }
    traj.y.resize(static_cast<std::size_t>(T));
    traj.e.resize(static_cast<std::size_t>(T));
    traj.x.reserve(static_cast<std::size_t>(T));

    Eigen::VectorXd x = Eigen::VectorXd::Zero(ss.order());
    for (int k = 1; k <= T; ++k) {
        const auto idx = static_cast<std::size_t>(k - 1);
        // Draw unconditionally so an override does not shift the remaining stream.
        double e = sample(model.noise, rng);
        for (const auto& o : outliers) {
            if (o.k == k) {
                e = o.value;
            }
        }
        traj.e[idx] = e;
        traj.y[idx] = ss.h.dot(x) + e;
        traj.x.push_back(x);
        x = ss.phi_a * x + ss.gamma * traj.u[idx] + ss.omega * e;
    }
    return traj;
}

Eigen::VectorXd propagate_s(const StateSpace& ss, const Eigen::VectorXd& s, double u, double y) {
    if (s.size() != ss.order()) {
        throw Error(ErrorCode::DimensionMismatch, "state vector length differs from model order");
    }
    return ss.phi * s + ss.gamma * u + ss.omega * y;
}

std::vector<Eigen::VectorXd> s_sequence(const StateSpace& ss, std::span<const double> u,
                                        std::span<const double> y) {
    if (u.size() + 1 < y.size()) {
        throw Error(ErrorCode::DimensionMismatch, "need u_1..u_{T-1} for T outputs");
    }
    std::vector<Eigen::VectorXd> out;
    out.reserve(y.size());
    Eigen::VectorXd s = Eigen::VectorXd::Zero(ss.order());
    for (std::size_t k = 0; k < y.size(); ++k) {
        out.push_back(s);
        if (k + 1 < y.size()) {
            s = propagate_s(ss, s, u[k], y[k]);
        }
    }
    return out;
}

}  // namespace mhetd
