#pragma once

#include <Eigen/Dense>

#include <span>
#include <utility>
#include <vector>

#include "mhetd/random.hpp"
#include "mhetd/t_noise.hpp"

namespace mhetd {

/// p0 + p1 q^-1 + ... + pm q^-m, coefficients stored q^0 first.
struct Polynomial {
    std::vector<double> coeffs;

    [[nodiscard]] int degree() const noexcept { return static_cast<int>(coeffs.size()) - 1; }
    /// Coefficient of q^-i, zero beyond the stored degree.
    [[nodiscard]] double operator[](int i) const noexcept {
        return (i >= 0 && i < static_cast<int>(coeffs.size())) ? coeffs[static_cast<std::size_t>(i)]
                                                                : 0.0;
    }

    /// (p0 + p1 q^-1)^k style helper: product of `base` with itself k times.
    static Polynomial power(const Polynomial& base, int k);
    friend Polynomial operator*(const Polynomial& lhs, const Polynomial& rhs);
};

/// A(q^-1) y_k = B(q^-1) u_k + C(q^-1) e_k with Student-t (or Gaussian) e_k.
///
/// A and C are monic, B is strictly proper, deg B <= deg A = deg C = n.
/// make() zero-pads A or C so that their degrees agree.
struct ArmaxModel {
    Polynomial a;
    Polynomial b;
    Polynomial c;
    TDistribution noise;

    static ArmaxModel make(Polynomial a, Polynomial b, Polynomial c, TDistribution noise);

    [[nodiscard]] int order() const noexcept { return a.degree(); }
};

/// Observable-companion realization
///   x_{k+1} = phi_a x_k + gamma u_k + omega e_k,   y_k = h x_k + e_k,
/// and the innovation matrix phi = phi_a - omega h.
struct StateSpace {
    Eigen::MatrixXd phi_a;
    Eigen::VectorXd gamma;
    Eigen::VectorXd omega;
    Eigen::RowVectorXd h;
    Eigen::MatrixXd phi;

    [[nodiscard]] int order() const noexcept { return static_cast<int>(phi_a.rows()); }
};

StateSpace build_state_space(const ArmaxModel& model);

struct StabilityReport {
    double radius_phi_a = 0.0;
    double radius_phi = 0.0;
    [[nodiscard]] bool stable(double margin = 1e-9) const noexcept {
        return radius_phi_a < 1.0 - margin && radius_phi < 1.0 - margin;
    }
};

StabilityReport stability(const StateSpace& ss);

/// Throws Unstable unless both spectral radii are below 1 - 1e-9.
void require_stable(const StateSpace& ss);

double spectral_radius(const Eigen::MatrixXd& m);

/// M^k by repeated multiplication.
Eigen::MatrixXd matrix_power(const Eigen::MatrixXd& m, int k);

/// M^-k by k successive LU solves; never forms M^-1 and powers it.
/// Throws PhiSingular when M is numerically singular.
Eigen::MatrixXd inverse_power(const Eigen::MatrixXd& m, int k);

/// Simulated data, index k = 1..T stored at position k - 1.
struct Trajectory {
    std::vector<double> u;
    std::vector<double> y;
    std::vector<double> e;
    std::vector<Eigen::VectorXd> x;

    [[nodiscard]] int length() const noexcept { return static_cast<int>(y.size()); }
};

struct OutlierOverride {
    int k = 0;  ///< 1-based time index
    double value = 0.0;
};

/// Simulates T steps from x_1 = 0. An empty `u` means u = 0. Noise draws come
/// from model.noise except at override indices, which are set exactly.
Trajectory simulate(const ArmaxModel& model, std::span<const double> u, int T, Rng& rng,
                    std::span<const OutlierOverride> outliers = {});

/// s_{T+1} = phi s_T + gamma u_T + omega y_T.
Eigen::VectorXd propagate_s(const StateSpace& ss, const Eigen::VectorXd& s, double u, double y);

/// s_1 = 0, s_2, ..., s_T for the data (u_k, y_k), k = 1..T.
std::vector<Eigen::VectorXd> s_sequence(const StateSpace& ss, std::span<const double> u,
                                        std::span<const double> y);

}  // namespace mhetd
