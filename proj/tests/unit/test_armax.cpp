#include <gtest/gtest.h>

#include <vector>

#include "mhetd/armax.hpp"
#include "mhetd/errors.hpp"
#include "support/models.hpp"

using namespace mhetd;
using mhetd::testing::example1;
using mhetd::testing::example2;
using mhetd::testing::random_model;

namespace {

/// Coefficients g_j of num/den as a power series in q^-1.
std::vector<double> long_division(const Polynomial& num, const Polynomial& den, int lags) {
    std::vector<double> g(static_cast<std::size_t>(lags), 0.0);
    for (int j = 0; j < lags; ++j) {
        double v = num[j];
        for (int i = 1; i <= j; ++i) {
            v -= den[i] * g[static_cast<std::size_t>(j - i)];
        }
        g[static_cast<std::size_t>(j)] = v / den[0];
    }
    return g;
}

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error raised";
    return ErrorCode::Io;
}

}  // namespace

// ============================================================================
// Realization
// ============================================================================

TEST(StateSpace, ScalarExample) {
    const auto ss = build_state_space(example2());
    ASSERT_EQ(ss.order(), 1);
    EXPECT_DOUBLE_EQ(ss.phi_a(0, 0), 0.9);
    EXPECT_DOUBLE_EQ(ss.gamma(0), 1.0);
    EXPECT_NEAR(ss.omega(0), 0.05, 1e-15);
    EXPECT_DOUBLE_EQ(ss.h(0), 1.0);
    EXPECT_NEAR(ss.phi(0, 0), 0.85, 1e-15);
}

TEST(StateSpace, FifthOrderExampleFirstColumn) {
    const auto ss = build_state_space(example1());
    ASSERT_EQ(ss.order(), 5);
    const std::vector<double> expected{-4.0, -6.4, -5.12, -2.048, -0.32768};
    for (int i = 0; i < 5; ++i) {
        EXPECT_NEAR(ss.phi(i, 0), expected[static_cast<std::size_t>(i)], 1e-12);
    }
    for (int i = 0; i < 4; ++i) {
        EXPECT_EQ(ss.phi(i, i + 1), 1.0);
        EXPECT_EQ(ss.phi_a(i, i + 1), 1.0);
    }
    EXPECT_NEAR(ss.gamma(0), 0.1, 1e-15);
    EXPECT_EQ(ss.gamma.tail(4).norm(), 0.0);
}

TEST(StateSpace, EqualAandCRemovesFeedthrough) {
    const auto m = ArmaxModel::make({{1.0, -0.5, 0.06}}, {{0.0}}, {{1.0, -0.5, 0.06}},
                                    TDistribution::gaussian(1.0));
    const auto ss = build_state_space(m);
    EXPECT_EQ(ss.omega.norm(), 0.0);
    EXPECT_EQ(ss.gamma.norm(), 0.0);
    EXPECT_EQ((ss.phi - ss.phi_a).norm(), 0.0);
}

TEST(StateSpace, PhiFirstColumnIsNegatedCForRandomModels) {
    Rng rng(99);
    for (int trial = 0; trial < 60; ++trial) {
        const int n = 1 + trial % 5;
        const auto m = random_model(rng, n, TDistribution::student(3.0, 1.0));
        const auto ss = build_state_space(m);
        for (int i = 0; i < n; ++i) {
            EXPECT_NEAR(ss.phi(i, 0), -m.c[i + 1], 1e-14);
            EXPECT_NEAR(ss.phi_a(i, 0), -m.a[i + 1], 0.0);
        }
        EXPECT_TRUE(stability(ss).stable());
    }
}

TEST(StateSpace, TransferFunctionsMatchLongDivision) {
    Rng rng(123);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + trial % 4;
        const auto m = random_model(rng, n, TDistribution::gaussian(1.0));
        const auto ss = build_state_space(m);
        const int lags = 50;
        const auto gb = long_division(m.b, m.a, lags);
        const auto gc = long_division(m.c, m.a, lags);
        EXPECT_EQ(gb[0], 0.0);
        EXPECT_EQ(gc[0], 1.0);
        Eigen::VectorXd vb = ss.gamma;
        Eigen::VectorXd vc = ss.omega;
        for (int j = 1; j < lags; ++j) {
            EXPECT_NEAR(ss.h.dot(vb), gb[static_cast<std::size_t>(j)], 1e-10);
            EXPECT_NEAR(ss.h.dot(vc), gc[static_cast<std::size_t>(j)], 1e-10);
            vb = ss.phi_a * vb;
            vc = ss.phi_a * vc;
        }
    }
}

TEST(StateSpace, PhiInvertibleIffLastCNonzero) {
    const auto singular = ArmaxModel::make({{1.0, -0.5, 0.1}}, {{0.0, 1.0}}, {{1.0, 0.3, 0.0}},
                                           TDistribution::gaussian(1.0));
    const auto ss = build_state_space(singular);
    EXPECT_EQ(code_of([&] { (void)inverse_power(ss.phi, 1); }), ErrorCode::PhiSingular);
    const auto regular = ArmaxModel::make({{1.0, -0.5, 0.1}}, {{0.0, 1.0}}, {{1.0, 0.3, 0.02}},
                                          TDistribution::gaussian(1.0));
    EXPECT_NO_THROW((void)inverse_power(build_state_space(regular).phi, 3));
}

// ============================================================================
// Validation
// ============================================================================

TEST(ArmaxModel, PadsShorterOfAandC) {
    const auto m = ArmaxModel::make({{1.0, -0.5}}, {{0.0, 1.0}}, {{1.0, 0.2, 0.1}}, TDistribution::gaussian(1.0));
    EXPECT_EQ(m.order(), 2);
    EXPECT_EQ(m.a.degree(), 2);
    EXPECT_EQ(m.a[2], 0.0);
}

TEST(ArmaxModel, RejectsDegreeViolations) {
    const auto g = TDistribution::gaussian(1.0);
    EXPECT_EQ(code_of([&] { (void)ArmaxModel::make({{1.0, 0.5}}, {{0.0, 1.0, 2.0}}, {{1.0, 0.1}}, g); }),
              ErrorCode::DegreeMismatch);
    EXPECT_EQ(code_of([&] { (void)ArmaxModel::make({{1.0}}, {{0.0}}, {{1.0}}, g); }), ErrorCode::DegreeMismatch);
    EXPECT_EQ(code_of([&] { (void)ArmaxModel::make({{2.0, 0.5}}, {{0.0}}, {{1.0, 0.1}}, g); }),
              ErrorCode::InvalidArgument);
    EXPECT_EQ(code_of([&] { (void)ArmaxModel::make({{1.0, 0.5}}, {{1.0}}, {{1.0, 0.1}}, g); }),
              ErrorCode::InvalidArgument);
}

TEST(ArmaxModel, StabilityCheck) {
    const auto g = TDistribution::gaussian(1.0);
    const auto unstable = ArmaxModel::make({{1.0, -1.2}}, {{0.0, 1.0}}, {{1.0, 0.5}}, g);
    EXPECT_FALSE(stability(build_state_space(unstable)).stable());
    EXPECT_EQ(code_of([&] { require_stable(build_state_space(unstable)); }), ErrorCode::Unstable);
    const auto non_minimum_c = ArmaxModel::make({{1.0, -0.5}}, {{0.0, 1.0}}, {{1.0, 1.5}}, g);
    EXPECT_EQ(code_of([&] { require_stable(build_state_space(non_minimum_c)); }), ErrorCode::Unstable);
    EXPECT_NO_THROW(require_stable(build_state_space(example1())));
    EXPECT_NO_THROW(require_stable(build_state_space(example2())));
}

// ============================================================================
// Matrix powers
// ============================================================================

TEST(MatrixPower, InverseAndForwardCancel) {
    const auto ss = build_state_space(example1());
    for (int k : {1, 3, 8}) {
        const Eigen::MatrixXd prod = matrix_power(ss.phi, k) * inverse_power(ss.phi, k);
        EXPECT_LT((prod - Eigen::MatrixXd::Identity(5, 5)).norm(), 1e-6) << "k = " << k;
    }
    EXPECT_LT((matrix_power(ss.phi, -2) - inverse_power(ss.phi, 2)).norm(), 1e-12);
    EXPECT_EQ(matrix_power(ss.phi, 0), Eigen::MatrixXd::Identity(5, 5));
}

// ============================================================================
// Deterministic recursion
// ============================================================================

TEST(PropagateS, Examples) {
    const auto ss = build_state_space(example2());
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
    EXPECT_EQ(propagate_s(ss, zero, 0.0, 0.0)(0), 0.0);
    EXPECT_NEAR(propagate_s(ss, Eigen::VectorXd::Ones(1), 0.0, 0.0)(0), 0.85, 1e-15);
    EXPECT_EQ(code_of([&] { (void)propagate_s(ss, Eigen::VectorXd::Zero(2), 0.0, 0.0); }),
              ErrorCode::DimensionMismatch);
}

TEST(PropagateS, MatchesClosedFormSum) {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const auto m = random_model(rng, 1 + trial % 4, TDistribution::gaussian(1.0));
        const auto ss = build_state_space(m);
        const auto u = mhetd::testing::random_inputs(rng, 10);
        const auto y = mhetd::testing::random_inputs(rng, 10);
        const auto s = s_sequence(ss, u, y);
        for (int k = 2; k <= 10; ++k) {
            Eigen::VectorXd direct = Eigen::VectorXd::Zero(ss.order());
            for (int i = 1; i <= k - 1; ++i) {
                direct += matrix_power(ss.phi, k - i - 1) *
                          (ss.gamma * u[static_cast<std::size_t>(i - 1)] + ss.omega * y[static_cast<std::size_t>(i - 1)]);
            }
            EXPECT_LT((s[static_cast<std::size_t>(k - 1)] - direct).norm(), 1e-12 * std::max(1.0, direct.norm()));
        }
    }
}

// ============================================================================
// Simulation
// ============================================================================

TEST(Simulate, OutputEquationHoldsExactly) {
    Rng rng(5);
    const auto m = example1();
    const auto ss = build_state_space(m);
    const auto u = mhetd::testing::random_inputs(rng, 40);
    const auto traj = simulate(m, u, 40, rng);
    ASSERT_EQ(traj.length(), 40);
    EXPECT_EQ(traj.x[0].norm(), 0.0);
    for (int k = 0; k < 40; ++k) {
        const auto idx = static_cast<std::size_t>(k);
        EXPECT_EQ(traj.y[idx], ss.h.dot(traj.x[idx]) + traj.e[idx]);
    }
}

TEST(Simulate, StateEqualsSRecursionFromZero) {
    Rng rng(8);
    const auto m = example1();
    const auto ss = build_state_space(m);
    const auto u = mhetd::testing::random_inputs(rng, 30);
    const auto traj = simulate(m, u, 30, rng);
    const auto s = s_sequence(ss, traj.u, traj.y);
    for (std::size_t k = 0; k < 30; ++k) {
        EXPECT_LT((s[k] - traj.x[k]).norm(), 1e-9 * std::max(1.0, traj.x[k].norm()));
    }
}

TEST(Simulate, OutlierOverrideIsExact) {
    Rng rng(30);
    const std::vector<OutlierOverride> outliers{{30, -10.0}};
    const auto traj = simulate(example2(), {}, 50, rng, outliers);
    EXPECT_EQ(traj.e[29], -10.0);
    EXPECT_EQ(traj.u[10], 0.0);
}

TEST(Simulate, OverrideDoesNotShiftLaterDraws) {
    Rng a(4);
    Rng b(4);
    const std::vector<OutlierOverride> outliers{{5, 100.0}};
    const auto plain = simulate(example2(), {}, 20, a);
    const auto hit = simulate(example2(), {}, 20, b, outliers);
    for (std::size_t k = 0; k < 20; ++k) {
        if (k != 4) {
            EXPECT_EQ(plain.e[k], hit.e[k]);
        }
    }
}

TEST(Simulate, ZeroNoiseAndInputGiveZeroOutput) {
    Rng rng(1);
    std::vector<OutlierOverride> zeros;
    for (int k = 1; k <= 25; ++k) {
        zeros.push_back({k, 0.0});
    }
    const auto traj = simulate(example1(), {}, 25, rng, zeros);
    for (double v : traj.y) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(Simulate, BitReproducibleForFixedSeed) {
    Rng a(77);
    Rng b(77);
    const auto t1 = simulate(example1(), {}, 200, a);
    const auto t2 = simulate(example1(), {}, 200, b);
    EXPECT_EQ(t1.y, t2.y);
    EXPECT_EQ(t1.e, t2.e);
}

TEST(Simulate, RejectsBadArguments) {
    Rng rng(1);
    EXPECT_EQ(code_of([&] { (void)simulate(example2(), {}, 0, rng); }), ErrorCode::InvalidArgument);
    const std::vector<OutlierOverride> late{{11, 1.0}};
    EXPECT_EQ(code_of([&] { (void)simulate(example2(), {}, 10, rng, late); }), ErrorCode::InvalidArgument);
    const std::vector<double> short_u(3, 0.0);
    EXPECT_EQ(code_of([&] { (void)simulate(example2(), short_u, 10, rng); }), ErrorCode::DimensionMismatch);
}
