#pragma once

#include <Eigen/Dense>

#include <functional>
#include <limits>

#include "mhetd/random.hpp"

namespace mhetd {

/// Zero-mean Student-t noise t_nu(0, sigma), or the Gaussian N(0, sigma^2)
/// when constructed in Gaussian mode (nu = infinity, represented exactly).
class TDistribution {
public:
    static TDistribution student(double nu, double sigma);
    static TDistribution gaussian(double sigma);

    [[nodiscard]] bool is_gaussian() const noexcept { return gaussian_; }
    /// Degrees of freedom; +infinity in Gaussian mode.
    [[nodiscard]] double nu() const noexcept { return nu_; }
    [[nodiscard]] double sigma() const noexcept { return sigma_; }

    [[nodiscard]] double pdf(double e) const noexcept;
    [[nodiscard]] double log_pdf(double e) const noexcept;

    /// Variance sigma^2 nu / (nu - 2); +infinity for nu <= 2.
    [[nodiscard]] double variance() const noexcept;
    [[nodiscard]] bool has_finite_variance() const noexcept;

    /// Reciprocal of  integral (s^2 nu - e^2)/(s^2 nu + e^2)^2 f(e) de,
    /// closed form (nu + 3) sigma^2. Unused in Gaussian mode.
    [[nodiscard]] double psi_constant() const noexcept { return psi_constant_; }

    /// Scale used for the e = scale * tan(theta) quadrature map.
    [[nodiscard]] double tail_scale() const noexcept;

    friend bool operator==(const TDistribution&, const TDistribution&) = default;

private:
    TDistribution(double nu, double sigma, bool gaussian);

    double nu_;
    double sigma_;
    bool gaussian_;
    double log_norm_;
    double psi_constant_;
};

/// Score of -ln f(y - regressor * x - const) with respect to x:
///   -(nu + 1) regressor' e / (sigma^2 nu + e^2),  or  -regressor' e / sigma^2.
Eigen::VectorXd score_psi(const TDistribution& d, const Eigen::RowVectorXd& regressor, double e);

/// Bounded residual map w = K r / (sigma^2 nu + r^2) with K = psi_constant();
/// the identity in Gaussian mode. Returns 0 when the denominator overflows.
double psi_transform(const TDistribution& d, double residual) noexcept;

/// (nu+1) e / (sigma^2 nu + e^2): the design score without the regressor.
double score_kernel(const TDistribution& d, double e) noexcept;

/// Derivative of score_kernel: (nu+1)(sigma^2 nu - e^2)/(sigma^2 nu + e^2)^2.
double score_kernel_derivative(const TDistribution& d, double e) noexcept;

double sample(const TDistribution& d, Rng& rng) noexcept;

/// Expectations, under the actual noise density g, of the integrands that
/// enter the estimate variance formula.
struct NoiseMoments {
    double rho1 = 0.0;  ///< E[score_kernel(e)^2]
    double rho2 = 0.0;  ///< E[e * score_kernel(e)]
    double rho3 = 0.0;  ///< E[e^2]
    double rho4 = 0.0;  ///< E[score_kernel_derivative(e)]
};

/// rho_1, rho_2, rho_4 by adaptive quadrature with the design (nu, sigma)
/// inside the integrands and density g_actual; rho_3 is the variance of
/// g_actual. A Gaussian design needs no quadrature. Throws NonFiniteVariance
/// when g_actual has nu <= 2.
NoiseMoments rho_moments(const TDistribution& design, const TDistribution& actual);

/// Closed forms for g = f: rho1 = rho4 = (nu+1)/((nu+3) sigma^2), rho2 = 1,
/// rho3 = sigma^2 nu/(nu-2). Gaussian mode: 1/sigma^2, 1, sigma^2, 1/sigma^2.
NoiseMoments matched_moments(const TDistribution& d);

/// Moments printed in the worked example for t_3(0, 0.5); rho3 there is
/// 0.7414 where the variance identity gives 0.75.
NoiseMoments worked_example_moments();

enum class RhoMode { Analytic, Paper };

/// Analytic: rho_moments(design, actual). Paper: worked_example_moments(),
/// only defined when design and actual are both t_3(0, 0.5).
NoiseMoments moments_for(RhoMode mode, const TDistribution& design, const TDistribution& actual);

struct QuadratureResult {
    double value = 0.0;
    double error_estimate = 0.0;
};

/// Integral over the real line of `integrand`, mapped to (-pi/2, pi/2) by
/// e = scale * tan(theta) and integrated with the tanh-sinh rule.
/// Relative tolerance 1e-9, absolute 1e-12; throws NoConvergence otherwise.
QuadratureResult integrate_real_line(const std::function<double(double)>& integrand, double scale);

/// Same map, over (-infinity, upper].
QuadratureResult integrate_lower_tail(const std::function<double(double)>& integrand, double scale,
                                      double upper);

}  // namespace mhetd
