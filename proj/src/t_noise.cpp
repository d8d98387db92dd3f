#include "mhetd/t_noise.hpp"

#include <boost/math/quadrature/tanh_sinh.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

#include "mhetd/errors.hpp"

namespace mhetd {

namespace {

constexpr double kQuadRelTol = 1e-9;
constexpr double kQuadTargetTol = 1e-11;  // requested from the rule; kQuadRelTol is what is accepted
constexpr double kQuadAbsTol = 1e-12;
constexpr std::size_t kQuadMaxRefinements = 20;

// Beyond this |e| every supported integrand contributes below 1e-29.
constexpr double kTailCutoff = 1e150;

/// Integrates integrand(e) over e = scale * tan(theta), theta in (lo, hi).
/// An endpoint at +-pi/2 is evaluated through its complement distance so the
/// tails are resolved far beyond double resolution of theta itself.
QuadratureResult integrate_theta(const std::function<double(double)>& integrand, double scale,
                                 double theta_lo, double theta_hi) {
    constexpr double half_pi = 0.5 * std::numbers::pi;
    const bool open_lo = theta_lo == -half_pi;
    const bool open_hi = theta_hi == half_pi;
    const double mid = 0.5 * (theta_lo + theta_hi);
    auto mapped = [&](double theta, double complement) {
        double c = 0.0;
        double t = 0.0;
        if (theta > mid && open_hi) {
            c = std::sin(complement);
            t = std::cos(complement) / c;
        } else if (theta <= mid && open_lo) {
            c = std::sin(-complement);
            t = -std::cos(complement) / c;
        } else {
            c = std::cos(theta);
            t = std::tan(theta);
        }
        const double e = scale * t;
        if (!(std::abs(e) < kTailCutoff)) {
            return 0.0;
        }
        const double v = integrand(e);
        if (v == 0.0) {
            return 0.0;
        }
        return v * scale / c / c;
    };
    // Double-exponential rule: the tan map leaves algebraic endpoint
    // singularities for heavy tails, which tanh-sinh absorbs.
    thread_local boost::math::quadrature::tanh_sinh<double> rule(kQuadMaxRefinements);
    double error = 0.0;
    double l1 = 0.0;
    std::size_t levels = 0;
    const double value = rule.integrate(mapped, theta_lo, theta_hi, kQuadTargetTol, &error, &l1, &levels);
    if (!std::isfinite(value) || error > std::max(kQuadRelTol * l1, kQuadAbsTol)) {
        std::ostringstream msg;
        msg << "adaptive quadrature did not reach tolerance (value " << value << ", error estimate "
            << error << ")";
        throw Error(ErrorCode::NoConvergence, msg.str());
    }
    return {value, error};
}

}  // namespace

TDistribution::TDistribution(double nu, double sigma, bool gaussian)
    : nu_(nu), sigma_(sigma), gaussian_(gaussian) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        throw Error(ErrorCode::InvalidArgument, "noise scale sigma must be positive and finite");
    }
    if (gaussian_) {
        log_norm_ = -std::log(sigma_) - 0.5 * std::log(2.0 * std::numbers::pi);
        psi_constant_ = 1.0;
    } else {
        if (!(nu > 0.0) || !std::isfinite(nu)) {
            throw Error(ErrorCode::InvalidArgument,
                        "degrees of freedom must be positive and finite (use Gaussian mode for nu = inf)");
        }
        log_norm_ = std::lgamma(0.5 * (nu_ + 1.0)) - std::lgamma(0.5 * nu_) -
                    0.5 * std::log(nu_ * std::numbers::pi) - std::log(sigma_);
        psi_constant_ = (nu_ + 3.0) * sigma_ * sigma_;
    }
}

TDistribution TDistribution::student(double nu, double sigma) { return {nu, sigma, false}; }

TDistribution TDistribution::gaussian(double sigma) {
    return {std::numeric_limits<double>::infinity(), sigma, true};
}

double TDistribution::log_pdf(double e) const noexcept {
    if (gaussian_) {
        const double z = e / sigma_;
        return log_norm_ - 0.5 * z * z;
    }
    return log_norm_ - 0.5 * (nu_ + 1.0) * std::log1p(e * e / (sigma_ * sigma_ * nu_));
}

double TDistribution::pdf(double e) const noexcept { return std::exp(log_pdf(e)); }

bool TDistribution::has_finite_variance() const noexcept { return gaussian_ || nu_ > 2.0; }

double TDistribution::variance() const noexcept {
    if (gaussian_) {
        return sigma_ * sigma_;
    }
    if (nu_ <= 2.0) {
        return std::numeric_limits<double>::infinity();
    }
    return sigma_ * sigma_ * nu_ / (nu_ - 2.0);
}

double TDistribution::tail_scale() const noexcept {
    return gaussian_ ? sigma_ : sigma_ * std::sqrt(nu_);
}

double score_kernel(const TDistribution& d, double e) noexcept {
    if (d.is_gaussian()) {
        return e / (d.sigma() * d.sigma());
    }
    const double s2nu = d.sigma() * d.sigma() * d.nu();
    const double denom = s2nu + e * e;
    if (!std::isfinite(denom)) {
        return 0.0;
    }
    return (d.nu() + 1.0) * e / denom;
}

double score_kernel_derivative(const TDistribution& d, double e) noexcept {
    if (d.is_gaussian()) {
        return 1.0 / (d.sigma() * d.sigma());
    }
    const double s2nu = d.sigma() * d.sigma() * d.nu();
    const double denom = s2nu + e * e;
    if (!std::isfinite(denom * denom)) {
        return 0.0;
    }
    return (d.nu() + 1.0) * (s2nu - e * e) / (denom * denom);
}

Eigen::VectorXd score_psi(const TDistribution& d, const Eigen::RowVectorXd& regressor, double e) {
    return -score_kernel(d, e) * regressor.transpose();
}

double psi_transform(const TDistribution& d, double residual) noexcept {
    if (d.is_gaussian()) {
        return residual;
    }
    const double denom = d.sigma() * d.sigma() * d.nu() + residual * residual;
    if (!std::isfinite(denom)) {
        return 0.0;
    }
    return d.psi_constant() * residual / denom;
}

double sample(const TDistribution& d, Rng& rng) noexcept {
    if (d.is_gaussian()) {
        return d.sigma() * rng.normal();
    }
    return d.sigma() * rng.student_t(d.nu());
}

QuadratureResult integrate_real_line(const std::function<double(double)>& integrand, double scale) {
    constexpr double half_pi = 0.5 * std::numbers::pi;
    return integrate_theta(integrand, scale, -half_pi, half_pi);
}

QuadratureResult integrate_lower_tail(const std::function<double(double)>& integrand, double scale,
                                      double upper) {
    constexpr double half_pi = 0.5 * std::numbers::pi;
    return integrate_theta(integrand, scale, -half_pi, std::atan(upper / scale));
}

NoiseMoments rho_moments(const TDistribution& design, const TDistribution& actual) {
    if (!actual.has_finite_variance()) {
        throw Error(ErrorCode::NonFiniteVariance,
                    "actual noise needs nu > 2 (or Gaussian mode) for the moment integrals");
    }
    const double scale = actual.tail_scale();
    auto expect = [&](auto&& h) {
        return integrate_real_line([&](double e) { return h(e) * actual.pdf(e); }, scale).value;
    };
    NoiseMoments m;
    m.rho3 = actual.variance();
    if (design.is_gaussian()) {
        // Kernel e / s^2 and constant derivative 1 / s^2.
        const double s2 = design.sigma() * design.sigma();
        m.rho1 = m.rho3 / (s2 * s2);
        m.rho2 = m.rho3 / s2;
        m.rho4 = 1.0 / s2;
        return m;
    }
    m.rho1 = expect([&](double e) {
        const double k = score_kernel(design, e);
        return k * k;
    });
    m.rho2 = expect([&](double e) { return e * score_kernel(design, e); });
    m.rho4 = expect([&](double e) { return score_kernel_derivative(design, e); });
    return m;
}

NoiseMoments matched_moments(const TDistribution& d) {
    const double s2 = d.sigma() * d.sigma();
    if (d.is_gaussian()) {
        return {1.0 / s2, 1.0, s2, 1.0 / s2};
    }
    if (!d.has_finite_variance()) {
        throw Error(ErrorCode::NonFiniteVariance, "closed-form moments need nu > 2");
    }
    const double fisher = (d.nu() + 1.0) / ((d.nu() + 3.0) * s2);
    return {fisher, 1.0, d.variance(), fisher};
}

NoiseMoments worked_example_moments() { return {2.6667, 1.0, 0.7414, 2.6667}; }

NoiseMoments moments_for(RhoMode mode, const TDistribution& design, const TDistribution& actual) {
    if (mode == RhoMode::Analytic) {
        return rho_moments(design, actual);
    }
    const auto fixture = TDistribution::student(3.0, 0.5);
    if (!(design == fixture) || !(actual == fixture)) {
        throw Error(ErrorCode::Config,
                    "rho mode 'paper' is only defined for t_3(0, 0.5) design and actual noise");
    }
    return worked_example_moments();
}

}  // namespace mhetd
