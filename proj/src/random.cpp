#include "mhetd/random.hpp"

#include <cmath>

namespace mhetd {

double Rng::normal() noexcept {
    if (has_spare_) {
        has_spare_ = false;
        return spare_normal_;
    }
    double u = 0.0;
    double v = 0.0;
    double s = 0.0;
    do {
        u = 2.0 * uniform() - 1.0;
        v = 2.0 * uniform() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_normal_ = v * f;
    has_spare_ = true;
    return u * f;
}

double Rng::student_t(double nu) noexcept {
    double u = 0.0;
    double w = 0.0;
    do {
        u = 2.0 * uniform() - 1.0;
        const double v = 2.0 * uniform() - 1.0;
        w = u * u + v * v;
    } while (w >= 1.0 || w == 0.0);
    return u * std::sqrt(nu * (std::pow(w, -2.0 / nu) - 1.0) / w);
}

}  // namespace mhetd
