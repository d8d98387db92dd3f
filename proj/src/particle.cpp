#include <cmath>

#include "mhetd/errors.hpp"
#include "mhetd/estimators.hpp"

namespace mhetd {

ParticleCloud ParticleCloud::make(int count, int n, double init_std, std::uint64_t seed) {
    if (count < 1) {
        throw Error(ErrorCode::InvalidArgument, "particle count must be at least 1");
    }
    if (!(init_std >= 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "initial particle spread must be nonnegative");
    }
    ParticleCloud cloud{Eigen::MatrixXd(count, n), Eigen::VectorXd::Constant(count, 1.0 / count), Rng(seed)};
    for (int i = 0; i < count; ++i) {
        for (int j = 0; j < n; ++j) {
            cloud.particles(i, j) = init_std * cloud.rng.normal();
        }
    }
    return cloud;
}

double ParticleCloud::effective_size() const { return 1.0 / weights.squaredNorm(); }

namespace {

void systematic_resample(ParticleCloud& cloud) {
    const int P = cloud.size();
    Eigen::MatrixXd next(P, cloud.particles.cols());
    const double step = 1.0 / P;
    double target = cloud.rng.uniform() * step;
    double cumulative = cloud.weights(0);
    int src = 0;
    for (int i = 0; i < P; ++i) {
        while (target > cumulative && src < P - 1) {
            ++src;
            cumulative += cloud.weights(src);
        }
        next.row(i) = cloud.particles.row(src);
        target += step;
    }
    cloud.particles.swap(next);
    cloud.weights.setConstant(step);
    ++cloud.resamples;
}

}  // namespace

Eigen::VectorXd particle_filter_step(ParticleCloud& cloud, const StateSpace& ss, const TDistribution& noise,
                                     double u, double y) {
    if (cloud.particles.cols() != ss.order()) {
        throw Error(ErrorCode::DimensionMismatch, "particle dimension differs from model order");
    }
    const int P = cloud.size();
    const Eigen::VectorXd e = Eigen::VectorXd::Constant(P, y) - cloud.particles * ss.h.transpose();
    for (int i = 0; i < P; ++i) {
        cloud.weights(i) *= noise.pdf(e(i));
    }
    const double total = cloud.weights.sum();
    if (!(total > 0.0) || !std::isfinite(total)) {
        cloud.weights.setConstant(1.0 / P);
        ++cloud.degenerate_resets;
    } else {
        cloud.weights /= total;
    }
    Eigen::VectorXd x_hat = cloud.particles.transpose() * cloud.weights;

    if (cloud.effective_size() < 0.5 * P) {
        systematic_resample(cloud);
    }
    // Residuals are recomputed because resampling reorders particles.
    const Eigen::VectorXd e_now = Eigen::VectorXd::Constant(P, y) - cloud.particles * ss.h.transpose();
    Eigen::MatrixXd next = cloud.particles * ss.phi_a.transpose();
    next.rowwise() += (ss.gamma * u).transpose();
    next.noalias() += e_now * ss.omega.transpose();
    cloud.particles.swap(next);
    return x_hat;
}

ParticleFilter::ParticleFilter(const StateSpace& ss, const TDistribution& noise, int particles,
                               double init_std, std::uint64_t seed)
    : ss_(ss), noise_(noise), cloud_(ParticleCloud::make(particles, ss.order(), init_std, seed)) {
    x_hat_ = Eigen::VectorXd::Zero(ss_.order());
}

bool ParticleFilter::observe(double y, double u) {
    x_hat_ = particle_filter_step(cloud_, ss_, noise_, u, y);
    ++t_;
    return true;
}

}  // namespace mhetd
