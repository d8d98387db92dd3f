#pragma once

#include <Eigen/Dense>

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mhetd/armax.hpp"
#include "mhetd/random.hpp"
#include "mhetd/t_noise.hpp"

namespace mhetd {

/// Window gains shared by the MHE-TD and MWLSE recursions.
struct FilterGains {
    int N = 0;
    Eigen::MatrixXd P;              ///< (sum_{i=1..N} (H phi^{i-1})' H phi^{i-1})^-1
    Eigen::MatrixXd M;              ///< phi^{N-1} P (phi^{N-1})'
    Eigen::VectorXd L;              ///< phi^{N-1} P (H phi^{N-1})'
    Eigen::VectorXd L_tilde;        ///< phi^{N-1} P (H phi^-1)'
    Eigen::MatrixXd phi_inv_pow;    ///< phi^{-(N-1)}
    Eigen::MatrixXd xi_u;           ///< [phi^{N-2} gamma ... gamma], n x (N-1)
    Eigen::MatrixXd xi_y;           ///< [phi^{N-2} omega ... omega], n x (N-1)
    Eigen::MatrixXd window_rows;    ///< row i-1 is H phi^{i-N}, i = 1..N
    /// M window_rows', formed by QR on window_rows rather than through the
    /// Gram inverse, whose condition number is the square of theirs.
    Eigen::MatrixXd window_solve;
    double condition = 0.0;         ///< condition number of P^-1
};

/// Throws SingularInformation when N < n or cond(P^-1) > 1e12, PhiSingular
/// when c_n = 0.
FilterGains compute_gains(const StateSpace& ss, int N);

struct Estimate {
    Eigen::VectorXd x_hat;
    double y_hat = 0.0;
};

/// Batch MHE-TD at time T over the window T-N+1..T. `u` and `y` hold the
/// full record from k = 1 (s_1 = 0); u needs at least T-1 entries.
Estimate batch_mhe_td(const StateSpace& ss, const FilterGains& gains, const TDistribution& design,
                      std::span<const double> u, std::span<const double> y, int T);

/// Windowed least squares: batch_mhe_td with the identity residual map.
Estimate batch_mwlse(const StateSpace& ss, const FilterGains& gains, std::span<const double> u,
                     std::span<const double> y, int T);

/// Online estimator fed one sample at a time.
class StateEstimator {
public:
    virtual ~StateEstimator() = default;

    /// Consumes y_k and then records u_k, the input applied after it.
    /// Returns true when x_hat() is an estimate of x_k.
    virtual bool observe(double y, double u) = 0;
    [[nodiscard]] virtual const Eigen::VectorXd& x_hat() const = 0;
    [[nodiscard]] virtual int time() const = 0;
    [[nodiscard]] virtual std::string_view name() const = 0;

    [[nodiscard]] double y_hat() const { return x_hat()(0); }
};

/// Recursive moving-window estimator. The robust variant buffers
/// z_k = psi(y_k - H s_k) + H s_k; the least-squares variant buffers y_k.
///
/// Rounding errors in x_hat grow through the recursion at rate
/// 1/|eigenvalue of phi| per step. With a re-anchor interval K > 0 the state
/// is replaced by the batch value s_T + M_N sum (H phi^{i-N})' w_i every K
/// steps; K = 0 runs the pure recursion.
class MovingWindowFilter : public StateEstimator {
public:
    void set_reanchor_interval(int steps);
    /// Replaces x_hat; the window buffers are kept.
    void set_estimate(const Eigen::VectorXd& x);
    [[nodiscard]] int reanchor_interval() const noexcept { return reanchor_interval_; }

    /// Batch solve over samples 1..N. `u` needs u_1..u_{N-1}; extra entries
    /// are ignored except u_N, which is stored when present.
    void warm_up(std::span<const double> u, std::span<const double> y);

    /// x_hat_{T+1} from x_hat_T, the input u_T and the new output y_{T+1}.
    const Eigen::VectorXd& step(double u_T, double y_next);

    bool observe(double y, double u) override;
    [[nodiscard]] const Eigen::VectorXd& x_hat() const override { return x_hat_; }
    [[nodiscard]] int time() const override { return t_; }
    [[nodiscard]] bool warmed_up() const noexcept { return t_ >= gains_->N; }
    [[nodiscard]] const FilterGains& gains() const noexcept { return *gains_; }
    [[nodiscard]] const Eigen::VectorXd& s() const noexcept { return s_; }

protected:
    MovingWindowFilter(StateSpace ss, std::shared_ptr<const FilterGains> gains,
                       std::optional<TDistribution> design);

private:
    double transformed(double y, double hs) const;
    void anchor();
    static void shift_in(std::vector<double>& buf, double value) noexcept;

    StateSpace ss_;
    std::shared_ptr<const FilterGains> gains_;
    std::optional<TDistribution> design_;
    Eigen::RowVectorXd h_phi_inv_pow_;
    Eigen::RowVectorXd back_u_;
    Eigen::RowVectorXd back_y_;

    Eigen::VectorXd x_hat_;
    Eigen::VectorXd s_;
    Eigen::VectorXd pred_;
    Eigen::VectorXd scratch_;
    std::vector<double> z_buf_;
    std::vector<double> w_buf_;
    std::vector<double> u_buf_;
    std::vector<double> y_buf_;
    double y_last_ = 0.0;
    double u_last_ = 0.0;
    int t_ = 0;
    int reanchor_interval_ = 0;
    int since_anchor_ = 0;

    std::vector<double> pending_u_;
    std::vector<double> pending_y_;
};

class MheTdFilter final : public MovingWindowFilter {
public:
    MheTdFilter(const StateSpace& ss, std::shared_ptr<const FilterGains> gains, const TDistribution& design);
    MheTdFilter(const StateSpace& ss, int N, const TDistribution& design);
    [[nodiscard]] std::string_view name() const override { return "mhe_td"; }
};

class MwlseFilter final : public MovingWindowFilter {
public:
    MwlseFilter(const StateSpace& ss, std::shared_ptr<const FilterGains> gains);
    MwlseFilter(const StateSpace& ss, int N);
    [[nodiscard]] std::string_view name() const override { return "mwlse"; }
};

/// Growing-memory recursion: the MHE-TD update with gain
/// L_T = phi^{T-1} P_T (H phi^{T-1})' and no removal term. Starts with a batch
/// solve once n samples are available.
class ArmaxFilter final : public StateEstimator {
public:
    ArmaxFilter(const StateSpace& ss, const TDistribution& design);

    bool observe(double y, double u) override;
    [[nodiscard]] const Eigen::VectorXd& x_hat() const override { return x_hat_; }
    [[nodiscard]] int time() const override { return t_; }
    [[nodiscard]] std::string_view name() const override { return "armax_filter"; }
    /// Current gain L_T; empty before the first estimate.
    [[nodiscard]] const Eigen::VectorXd& gain() const noexcept { return L_; }

private:
    StateSpace ss_;
    TDistribution design_;
    Eigen::MatrixXd phi_pow_;    ///< phi^{t-1}
    Eigen::MatrixXd gram_;       ///< sum_{i=1..t} (H phi^{i-1})' H phi^{i-1}
    Eigen::VectorXd info_;       ///< sum_{i=1..t} (H phi^{i-1})' w_i
    Eigen::VectorXd L_;
    Eigen::VectorXd x_hat_;
    Eigen::VectorXd s_;
    double u_prev_ = 0.0;
    double y_prev_ = 0.0;
    int t_ = 0;
};

/// Kalman filter on x_{k+1} = phi x_k + gamma u_k + omega y_k, y_k = H x_k + e_k:
/// no process noise, measurement variance R, prior N(0, p0 I).
class KalmanFilter final : public StateEstimator {
public:
    KalmanFilter(const StateSpace& ss, double measurement_variance, double prior_variance = 1e6);

    bool observe(double y, double u) override;
    [[nodiscard]] const Eigen::VectorXd& x_hat() const override { return x_hat_; }
    [[nodiscard]] int time() const override { return t_; }
    [[nodiscard]] std::string_view name() const override { return "kalman"; }
    [[nodiscard]] const Eigen::MatrixXd& covariance() const noexcept { return P_; }
    /// Innovation y_k - H x_{k|k-1} of the last update.
    [[nodiscard]] double innovation() const noexcept { return innovation_; }
    [[nodiscard]] double innovation_variance() const noexcept { return innovation_var_; }

private:
    StateSpace ss_;
    double R_;
    Eigen::VectorXd x_pred_;
    Eigen::MatrixXd P_;
    Eigen::VectorXd x_hat_;
    Eigen::MatrixXd I_;
    double innovation_ = 0.0;
    double innovation_var_ = 0.0;
    double u_prev_ = 0.0;
    double y_prev_ = 0.0;
    int t_ = 0;
};

struct MleOptions {
    bool full_history = false;
    int max_iterations = 200;
    double gradient_tolerance = 1e-10;
    /// Additional starting point, given as an estimate of x_T.
    std::optional<Eigen::VectorXd> extra_start;
};

struct MleResult {
    Eigen::VectorXd x_hat;     ///< estimate of x_T
    Eigen::VectorXd offset;    ///< estimate of x_{k0} - s_{k0} at the window start k0
    double objective = 0.0;    ///< -sum ln f(e_k) over the window
    double gradient_norm = 0.0;
    int iterations = 0;
    bool converged = false;
    std::string diagnostic;
};

/// Negative log-likelihood of the window as a function of the window-start
/// offset, plus its gradient.
struct WindowObjective {
    WindowObjective(const StateSpace& ss, const TDistribution& noise, std::span<const double> u,
                    std::span<const double> y, int T, int window);

    [[nodiscard]] double value(const Eigen::VectorXd& offset) const;
    [[nodiscard]] Eigen::VectorXd gradient(const Eigen::VectorXd& offset) const;
    [[nodiscard]] Eigen::MatrixXd hessian(const Eigen::VectorXd& offset) const;
    /// x_T implied by an offset.
    [[nodiscard]] Eigen::VectorXd state(const Eigen::VectorXd& offset) const;
    /// Offset whose implied x_T is `x_T`.
    [[nodiscard]] Eigen::VectorXd offset_for(const Eigen::VectorXd& x_T) const;

    TDistribution noise;
    Eigen::VectorXd residuals;  ///< y_k - H s_k over the window
    Eigen::MatrixXd rows;       ///< row j is H phi^j
    Eigen::VectorXd s_T;
    Eigen::MatrixXd phi;
    Eigen::MatrixXd phi_span;   ///< phi^{window-1}
};

/// Damped Newton (Fisher scoring when the Hessian is indefinite), started
/// from the least-squares solution, zero, and options.extra_start; the best
/// objective wins. A run that stops short of the gradient tolerance returns
/// its best iterate with converged = false.
MleResult solve_windowed_mle(const StateSpace& ss, const TDistribution& noise, std::span<const double> u,
                             std::span<const double> y, int T, int N, const MleOptions& options = {});

/// Weighted particle set; weights sum to 1.
struct ParticleCloud {
    Eigen::MatrixXd particles;   ///< P x n
    Eigen::VectorXd weights;
    Rng rng;
    int degenerate_resets = 0;
    int resamples = 0;

    /// Particles drawn i.i.d. N(0, init_std^2 I).
    static ParticleCloud make(int count, int n, double init_std, std::uint64_t seed);
    [[nodiscard]] int size() const noexcept { return static_cast<int>(particles.rows()); }
    [[nodiscard]] double effective_size() const;
};

/// Reweights by f(y - H x), returns the weighted mean, resamples
/// systematically when ESS < P/2, then propagates every particle with
/// x+ = phi_a x + gamma u + omega (y - H x). Weights that all underflow are
/// reset to uniform and counted in degenerate_resets.
Eigen::VectorXd particle_filter_step(ParticleCloud& cloud, const StateSpace& ss, const TDistribution& noise,
                                     double u, double y);

class ParticleFilter final : public StateEstimator {
public:
    ParticleFilter(const StateSpace& ss, const TDistribution& noise, int particles, double init_std,
                   std::uint64_t seed);

    bool observe(double y, double u) override;
    [[nodiscard]] const Eigen::VectorXd& x_hat() const override { return x_hat_; }
    [[nodiscard]] int time() const override { return t_; }
    [[nodiscard]] std::string_view name() const override { return "pf"; }
    [[nodiscard]] const ParticleCloud& cloud() const noexcept { return cloud_; }

private:
    StateSpace ss_;
    TDistribution noise_;
    ParticleCloud cloud_;
    Eigen::VectorXd x_hat_;
    int t_ = 0;
};

/// Re-solves the MLE at every step over the stored history.
class MleEstimator final : public StateEstimator {
public:
    MleEstimator(const StateSpace& ss, const TDistribution& noise, int N, MleOptions options = {});

    bool observe(double y, double u) override;
    [[nodiscard]] const Eigen::VectorXd& x_hat() const override { return x_hat_; }
    [[nodiscard]] int time() const override { return t_; }
    [[nodiscard]] std::string_view name() const override { return "mle"; }
    [[nodiscard]] const MleResult& last() const noexcept { return last_; }

private:
    StateSpace ss_;
    TDistribution noise_;
    int N_;
    MleOptions options_;
    std::vector<double> u_hist_;
    std::vector<double> y_hist_;
    Eigen::VectorXd x_hat_;
    MleResult last_;
    int t_ = 0;
};

enum class EstimatorKind { MheTd, Mwlse, ArmaxFilter, Kalman, Mle, Pf };

EstimatorKind parse_estimator_kind(std::string_view text);
std::string_view to_string(EstimatorKind kind) noexcept;

struct EstimatorSpec {
    EstimatorKind kind = EstimatorKind::MheTd;
    int N = 0;
    int particles = 1000;
    int reanchor_interval = 0;
    double pf_init_std = 1.0;
    double kalman_prior = 1e6;
    MleOptions mle;
};

/// Builds an estimator for `model`; the design noise is model.noise and the
/// Kalman measurement variance is its variance. Throws Unstable for models
/// outside the stability margin.
std::unique_ptr<StateEstimator> make_estimator(const ArmaxModel& model, const EstimatorSpec& spec,
                                               std::uint64_t seed = 0);

}  // namespace mhetd
