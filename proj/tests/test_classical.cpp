#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "emergence/classical_dynamics.hpp"
#include "emergence/statistics.hpp"
#include "oracles.hpp"

using namespace emergence;
using namespace emergence::classical;

namespace {

constexpr double pi = std::numbers::pi;

PhaseState state(double q, double p, double t = 0.0) { return {{q}, {p}, t}; }

double final_error_harmonic(double dt) {
    const auto model = SystemModel::harmonic(1.0, 1.0);
    const auto traj = integrate_hamilton(model, state(1.0, 0.0), 2.0 * pi, dt);
    const auto& e = traj.back();
    return std::hypot(e.q[0] - std::cos(e.t), e.p[0] + std::sin(e.t));
}

}  // namespace

TEST(IntegrateHamilton, FreeParticleIsExact) {
    const auto traj = integrate_hamilton(SystemModel::free_particle(), state(0.0, 1.0), 1.0, 1e-2);
    EXPECT_NEAR(traj.back().t, 1.0, 1e-12);
    EXPECT_NEAR(traj.back().q[0], 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(traj.back().p[0], 1.0);
}

TEST(IntegrateHamilton, HarmonicFullPeriodReturns) {
    const auto model = SystemModel::harmonic(1.0, 1.0);
    const auto traj = integrate_hamilton(model, state(1.0, 0.0), 2.0 * pi, 1e-3);
    const double t = traj.back().t;
    EXPECT_LE(std::abs(t - 2.0 * pi), 1e-3);
    EXPECT_NEAR(traj.back().q[0], std::cos(t), 1e-5);
    EXPECT_NEAR(traj.back().p[0], -std::sin(t), 1e-5);
}

TEST(IntegrateHamilton, SecondOrderConvergence) {
    // 2 pi / dt is an integer for neither step, so compare at the reached time.
    const double e1 = final_error_harmonic(2e-3), e2 = final_error_harmonic(1e-3);
    EXPECT_NEAR(e1 / e2, 4.0, 0.8);
}

TEST(IntegrateHamilton, TimesAreUniform) {
    const auto traj = integrate_hamilton(SystemModel::harmonic(), state(0.3, 0.1, 2.0), 3.0, 0.01);
    for (std::size_t k = 1; k < traj.size(); ++k) EXPECT_NEAR(traj.states[k].t - traj.states[k - 1].t, 0.01, 1e-12);
}

TEST(IntegrateHamilton, DivergenceCarriesLastValidState) {
    const auto model = SystemModel::quartic(1.0, 1.0);
    try {
        integrate_hamilton(model, state(10.0, 0.0), 100.0, 1.0);
        FAIL() << "expected divergence";
    } catch (const IntegrationDiverged& e) {
        EXPECT_TRUE(std::isfinite(e.last_valid().q[0]));
        EXPECT_TRUE(std::isfinite(e.last_valid().p[0]));
    }
}

TEST(IntegrateHamilton, RejectsBadArguments) {
    const auto model = SystemModel::harmonic();
    EXPECT_THROW(integrate_hamilton(model, state(0, 0), 1.0, 0.0), InvalidArgument);
    EXPECT_THROW(integrate_hamilton(model, state(0, 0, 2.0), 1.0, 0.1), InvalidArgument);
}

TEST(Leapfrog, PreservesPhaseSpaceVolume) {
    // Central-difference Jacobian with Richardson extrapolation on random
    // states of a nonlinear system.
    const auto model = SystemModel::quartic(1.3, 0.7);
    Rng rng(7);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    const double dt = 0.05;
    for (int trial = 0; trial < 20; ++trial) {
        const double q = u(rng), p = u(rng);
        auto jac = [&](double h) {
            auto f = [&](double dq, double dp) { return leapfrog_step(model, state(q + dq, p + dp), dt); };
            const auto qp = f(h, 0), qm = f(-h, 0), pp = f(0, h), pm = f(0, -h);
            const double a = (qp.q[0] - qm.q[0]) / (2 * h), b = (pp.q[0] - pm.q[0]) / (2 * h);
            const double c = (qp.p[0] - qm.p[0]) / (2 * h), d = (pp.p[0] - pm.p[0]) / (2 * h);
            return std::array<double, 4>{a, b, c, d};
        };
        const auto j1 = jac(2e-3), j2 = jac(1e-3);
        std::array<double, 4> j{};
        for (int k = 0; k < 4; ++k) j[k] = (4.0 * j2[k] - j1[k]) / 3.0;
        EXPECT_NEAR(j[0] * j[3] - j[1] * j[2], 1.0, 1e-12);
    }
}

TEST(ActionOf, FreeStraightLine) {
    const auto traj = integrate_hamilton(SystemModel::free_particle(), state(0.0, 1.0), 1.0, 1e-3);
    EXPECT_NEAR(action_of(SystemModel::free_particle(), traj), oracle::free_action(1.0, 0.0, 1.0, 1.0), 1e-10);
}

TEST(ActionOf, ConstantPathWithoutPotentialIsZero) {
    const auto traj = integrate_hamilton(SystemModel::free_particle(), state(0.7, 0.0), 2.0, 1e-2);
    // Only the roundoff of the one-sided end stencils survives.
    EXPECT_NEAR(action_of(SystemModel::free_particle(), traj), 0.0, 1e-24);
}

TEST(ActionOf, HarmonicMatchesClosedForm) {
    // omega T = 1, well away from the conjugate point at pi.
    const auto model = SystemModel::harmonic(1.0, 1.0);
    const double q0 = 0.2, q1 = 0.9, T = 1.0;
    const double p0 = (q1 - q0 * std::cos(T)) / std::sin(T);
    const auto traj = integrate_hamilton(model, state(q0, p0), T, 1e-4);
    EXPECT_NEAR(action_of(model, traj), oracle::harmonic_action(1.0, 1.0, q0, q1, T), 1e-7);
}

TEST(ActionOf, DeterministicAndDegenerate) {
    const auto model = SystemModel::harmonic();
    const auto traj = integrate_hamilton(model, state(0.5, 0.2), 1.0, 1e-3);
    EXPECT_EQ(action_of(model, traj), action_of(model, traj));
    Trajectory one{{state(0, 0)}, 0.1};
    EXPECT_THROW(action_of(model, one), DegenerateTrajectory);
}

TEST(ActionOf, StationaryUnderInteriorBumps) {
    const auto model = SystemModel::harmonic(1.0, 1.0);
    const auto base = integrate_hamilton(model, state(0.1, 0.8), 1.0, 1e-3);
    const double s0 = action_of(model, base);
    auto bumped = [&](double eps) {
        auto t = base;
        for (auto& s : t.states) {
            const double x = s.t;  // bump vanishes at both ends
            s.q[0] += eps * std::sin(pi * x) * std::sin(pi * x);
        }
        return action_of(model, t) - s0;
    };
    const double d1 = bumped(1e-2), d2 = bumped(5e-3);
    EXPECT_NEAR(d1 / d2, 4.0, 0.05);
    EXPECT_GT(d1, 0.0);
}

TEST(OnshellAction, FreeParticle) {
    const auto model = SystemModel::free_particle();
    EXPECT_NEAR(onshell_action(model, 0.0, 0.0, 1.0, 1.0), 0.5, 1e-9);
    EXPECT_NEAR(onshell_action(model, 0.4, 0.0, 0.4, 2.0), 0.0, 1e-12);
}

TEST(OnshellAction, HarmonicQuarterPeriod) {
    const auto model = SystemModel::harmonic(1.0, 1.0);
    const double expected = oracle::harmonic_action(1.0, 1.0, 0.0, 1.0, pi / 2);
    EXPECT_NEAR(onshell_action(model, 0.0, 0.0, 1.0, pi / 2), expected, 1e-6);
    EXPECT_NEAR(onshell_action(model, 0.3, 0.0, -0.5, 2.0), oracle::harmonic_action(1, 1, 0.3, -0.5, 2.0), 1e-6);
}

TEST(OnshellAction, ConjugatePointIsReported) {
    const auto model = SystemModel::harmonic(1.0, 1.0);
    EXPECT_THROW(onshell_action(model, 0.0, 0.0, 1.0, pi), NoClassicalPath);
}

TEST(OnshellAction, TimeTranslationInvariance) {
    const auto model = SystemModel::quartic(1.0, 0.5);
    const double a = onshell_action(model, 0.1, 0.0, 0.6, 1.2);
    const double b = onshell_action(model, 0.1, 3.5, 0.6, 4.7);
    EXPECT_NEAR(a, b, 1e-9);
}

TEST(ActionTable, ParallelBuildMatchesSerial) {
    const auto model = SystemModel::harmonic();
    const auto qs = linspace(-1, 1, 5), ts = linspace(0.5, 1.5, 4);
    const auto table = build_action_table(model, 0.0, 0.0, qs, ts);
    for (std::size_t i = 0; i < qs.size(); ++i)
        for (std::size_t j = 0; j < ts.size(); ++j)
            EXPECT_EQ(table.S(i, j), onshell_action(model, 0.0, 0.0, qs[i], ts[j]));
}

TEST(ActionTable, RejectsBadAxes) {
    const auto model = SystemModel::harmonic();
    EXPECT_THROW(build_action_table(model, 0, 0, {0.0, 0.0, 1.0}, {1, 2, 3}), InvalidArgument);
    EXPECT_THROW(build_action_table(model, 0, 1.0, {0, 1, 2}, {0.5, 2, 3}), InvalidArgument);
    EXPECT_THROW(build_action_table(model, 0.0, 0.0, {0.0, 1.0, 2.0}, {1.0, std::numbers::pi, 4.0}), NoClassicalPath);
}

namespace {

GradientResiduals gradient_residuals(const SystemModel& model, std::size_t n) {
    const auto table = build_action_table(model, 0.0, 0.0, linspace(-1, 1, n), linspace(0.5, 1.5, n));
    return action_gradients_check(table, model);
}

}  // namespace

TEST(ActionGradients, FreeParticleConvergesAtSecondOrder) {
    const auto model = SystemModel::free_particle();
    const auto c = gradient_residuals(model, 32), f = gradient_residuals(model, 63);
    // S is quadratic in q, so the q-derivative is exact up to shooting error.
    EXPECT_LT(f.max_momentum_residual, 1e-8);
    EXPECT_GT(c.max_energy_residual / f.max_energy_residual, 3.5);
}

TEST(ActionGradients, HarmonicConvergesAtSecondOrder) {
    const auto model = SystemModel::harmonic();
    const auto c = gradient_residuals(model, 32), f = gradient_residuals(model, 63);
    // Quadratic in q here too; what is left is the leapfrog error in p.
    EXPECT_LT(c.max_momentum_residual, 1e-6);
    EXPECT_LT(f.max_momentum_residual, 1e-6);
    EXPECT_GT(c.max_energy_residual / f.max_energy_residual, 3.5);
    const double h = 2.0 / 62.0;
    EXPECT_LT(f.max_energy_residual, 10.0 * h * h);
}

TEST(ActionGradients, SingleNodeAxisIsRejected) {
    const auto model = SystemModel::free_particle();
    const auto table = build_action_table(model, 0.0, 0.0, {0.5}, linspace(0.5, 1.5, 5));
    EXPECT_THROW(action_gradients_check(table, model), InsufficientGrid);
    EXPECT_THROW(hamilton_jacobi_residual(table, model), InsufficientGrid);
}

TEST(HamiltonJacobi, ResidualFallsAtSecondOrder) {
    for (const auto& model : {SystemModel::free_particle(), SystemModel::harmonic()}) {
        const auto coarse = hamilton_jacobi_residual(
            build_action_table(model, 0.0, 0.0, linspace(-1, 1, 32), linspace(0.5, 1.5, 32)), model);
        const auto fine = hamilton_jacobi_residual(
            build_action_table(model, 0.0, 0.0, linspace(-1, 1, 63), linspace(0.5, 1.5, 63)), model);
        EXPECT_GT(coarse.max_residual / fine.max_residual, 3.5) << model.name;
        ASSERT_TRUE(fine.max_energy_residual.has_value());
        EXPECT_GT(*coarse.max_energy_residual / *fine.max_energy_residual, 3.5) << model.name;
    }
}

TEST(HamiltonJacobi, ConstantPotentialShiftCancels) {
    const auto model = SystemModel::harmonic();
    const auto shifted = model.shifted(2.5);
    const auto qs = linspace(-1, 1, 7), ts = linspace(0.5, 1.5, 7);
    const auto a = hamilton_jacobi_residual(build_action_table(model, 0, 0, qs, ts), model);
    const auto b = hamilton_jacobi_residual(build_action_table(shifted, 0, 0, qs, ts), shifted);
    for (std::size_t k = 0; k < a.residual.size(); ++k) EXPECT_NEAR(a.residual[k], b.residual[k], 1e-8);
}

TEST(EnergySeries, FreeParticleHasNoDrift) {
    const auto model = SystemModel::free_particle();
    const auto es = energy_series(model, integrate_hamilton(model, state(0, 1.3), 10.0, 1e-2));
    EXPECT_EQ(es.max_drift, 0.0);
}

TEST(EnergySeries, HarmonicDriftIsBoundedAndSecondOrder) {
    const auto model = SystemModel::harmonic();
    const auto d1 = energy_series(model, integrate_hamilton(model, state(1, 0), 100.0, 2e-3)).max_drift;
    const auto d2 = energy_series(model, integrate_hamilton(model, state(1, 0), 100.0, 1e-3)).max_drift;
    EXPECT_LT(d2, 1e-6);
    EXPECT_NEAR(d1 / d2, 4.0, 0.4);
}

TEST(EnergySeries, NoSecularGrowthOverLongRuns) {
    const auto model = SystemModel::quartic(1.0, 1.0);
    const auto traj = integrate_hamilton(model, state(1.0, 0.0), 500.0, 5e-3);  // 1e5 steps
    const auto es = energy_series(model, traj);
    std::vector<double> t, h;
    for (std::size_t k = 0; k < traj.size(); k += 10) {
        t.push_back(traj.states[k].t);
        h.push_back(es.values[k]);
    }
    const double slope = stats::linear_slope(t, h);
    EXPECT_LT(std::abs(slope) * 500.0, 0.1 * es.max_drift);
}

TEST(EnergySeries, TimeDependentWorkMatchesQuadrature) {
    const auto model = SystemModel::linear_drive();
    const auto traj = integrate_hamilton(model, state(0.5, -0.2), 2.0, 1e-4);
    const auto es = energy_series(model, traj);
    const double change = es.values.back() - es.values.front();
    EXPECT_NEAR(change, explicit_time_work(model, traj), 1e-6);
    EXPECT_GT(std::abs(change), 1e-2);
}
