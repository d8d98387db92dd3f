#pragma once

#include <Eigen/Dense>

#include <span>
#include <string_view>
#include <vector>

#include "mhetd/armax.hpp"
#include "mhetd/estimators.hpp"
#include "mhetd/t_noise.hpp"

namespace mhetd {

/// The three additive parts of Var(y_hat_T).
struct VarianceTerms {
    double window = 0.0;   ///< H M_N H'
    double cross = 0.0;    ///< 2 H M_N sum_{i<N} (H phi^{i-N})' H phi_a^{N-i-1} omega
    double dynamic = 0.0;  ///< sum_{k<T} (H phi_a^{T-k-1} omega)^2

    [[nodiscard]] double sum() const noexcept { return window + cross + dynamic; }
};

struct VarianceReport {
    Eigen::MatrixXd var_x;
    double var_y = 0.0;
    VarianceTerms coefficients;  ///< moment-free factors
    VarianceTerms weighted;      ///< factors times rho1/rho4^2, rho2/rho4, rho3
    NoiseMoments moments;
    int T = 0;
    int N = 0;
};

/// Variance of the windowed estimate at time T with the given noise moments.
/// The x cross term is symmetrized as w (M S + S' M), which leaves var_y
/// unchanged. Requires T >= N and a stable phi_a.
VarianceReport variance_from_moments(const StateSpace& ss, const FilterGains& gains, const NoiseMoments& moments,
                                     int T);

VarianceReport variance_yhat(const StateSpace& ss, const TDistribution& design, const TDistribution& actual, int N,
                             int T, RhoMode mode = RhoMode::Analytic);

/// Least-squares window (nu = infinity): rho3 times the coefficient sum.
VarianceReport variance_gaussian(const StateSpace& ss, const FilterGains& gains, double rho3, int T);
VarianceReport variance_gaussian(const StateSpace& ss, const TDistribution& actual, int N, int T);

enum class OutlierRegime { Before, Window, After };

std::string_view to_string(OutlierRegime r) noexcept;

struct OutlierPoint {
    int T = 0;
    double expected_y = 0.0;
    double mean_s = 0.0;      ///< H E(s_T)
    double correction = 0.0;  ///< nonzero only inside the window
    OutlierRegime regime = OutlierRegime::Before;
};

struct OutlierTrace {
    int k1 = 0;
    double e_k1 = 0.0;
    int N = 0;
    std::vector<OutlierPoint> points;
};

/// E(y_hat_T) for T = first..last with a deterministic noise value e_k1 at k1,
/// x_1 = 0 and zero-mean noise elsewhere. The in-window correction is
/// H M_N (H phi^{k1-T})' kernel(e_k1) / rho4, which is M_N-weighted e_k1 for a
/// Gaussian design. `u` holds u_1.. and is zero past its end.
OutlierTrace outlier_expectation(const StateSpace& ss, const FilterGains& gains, const TDistribution& design,
                                 double rho4, int k1, double e_k1, std::span<const double> u, int first, int last);

OutlierTrace outlier_expectation(const StateSpace& ss, const TDistribution& design, const TDistribution& actual,
                                 int N, int k1, double e_k1, std::span<const double> u, int first, int last);

}  // namespace mhetd
