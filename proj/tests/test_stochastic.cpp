#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "emergence/statistics.hpp"
#include "emergence/stochastic_process.hpp"

using namespace emergence;
using namespace emergence::stochastic;

TEST(LangevinStep, NoiselessLimits) {
    NoiseStream rng(1);
    EXPECT_EQ(langevin_step(DriftField::zero(), {0.0, 1}, 0.37, 0.1, rng), 0.37);
    const double x = 0.8, g = 1.5, dt = 0.01;
    EXPECT_DOUBLE_EQ(langevin_step(DriftField::linear(g), {0.0, 1}, x, dt, rng), x - g * x * dt);
}

TEST(LangevinStep, IncrementVarianceIsTwoDdt) {
    NoiseStream rng(12345);
    const NoiseSpec noise{0.5, 0};
    const double dt = 0.01;
    std::vector<double> inc(100000);
    for (auto& v : inc) v = langevin_step(DriftField::zero(), noise, 0.0, dt, rng);
    const double var = stats::variance(inc);
    const double n = static_cast<double>(inc.size());
    // SE of a Gaussian sample variance: var sqrt(2 / (n - 1)).
    EXPECT_NEAR(var, 2 * 0.5 * dt, 3.0 * 0.01 * std::sqrt(2.0 / (n - 1)));
}

TEST(LangevinStep, RejectsBadInput) {
    NoiseStream rng(1);
    EXPECT_THROW(langevin_step(DriftField::zero(), {0.5, 0}, 0.0, 0.0, rng), InvalidArgument);
    EXPECT_THROW(langevin_step(DriftField::zero(), {-1.0, 0}, 0.0, 0.1, rng), InvalidArgument);
}

TEST(Increments, AreUncorrelatedAtPositiveLag) {
    NoiseStream rng(99);
    std::vector<double> inc(50000);
    for (auto& v : inc) v = langevin_step(DriftField::zero(), {1.0, 0}, 0.0, 0.01, rng);
    const double se = 1.0 / std::sqrt(static_cast<double>(inc.size()));
    for (std::size_t lag : {1, 2, 5}) EXPECT_LT(std::abs(stats::autocorrelation(inc, lag)), 3 * se) << lag;
}

TEST(SimulateEnsemble, NoiselessSingleTrajectoryIsDeterministic) {
    const auto drift = DriftField::linear(2.0);
    const auto ens = simulate_ensemble(drift, {0.0, 5}, 1.0, 1.0, 0.01, 1);
    double x = 1.0;
    for (std::size_t k = 1; k < ens.n_records; ++k) {
        x = x - 2.0 * x * 0.01;
        EXPECT_EQ(ens.at(0, k), x);
    }
}

TEST(SimulateEnsemble, SameSeedIsBitwiseIdentical) {
    const auto a = simulate_ensemble(DriftField::cubic(1.0), {0.3, 77}, 0.1, 0.5, 1e-3, 64);
    const auto b = simulate_ensemble(DriftField::cubic(1.0), {0.3, 77}, 0.1, 0.5, 1e-3, 64);
    EXPECT_EQ(a.values, b.values);
    const auto c = simulate_ensemble(DriftField::cubic(1.0), {0.3, 78}, 0.1, 0.5, 1e-3, 64);
    EXPECT_NE(a.values, c.values);
}

TEST(SimulateEnsemble, TrajectoryDependsOnlyOnItsStream) {
    // Trajectory j of a large ensemble equals trajectory j of a small one.
    const auto small = simulate_ensemble(DriftField::linear(1.0), {0.5, 3}, 0.0, 0.2, 1e-3, 3);
    const auto big = simulate_ensemble(DriftField::linear(1.0), {0.5, 3}, 0.0, 0.2, 1e-3, 50);
    for (std::size_t k = 0; k < small.n_records; ++k) EXPECT_EQ(small.at(2, k), big.at(2, k));
}

TEST(SimulateEnsemble, OrnsteinUhlenbeckMeanAndVariance) {
    const double gamma = 1.0, D = 0.5, x0 = 2.0;
    const auto ens = simulate_ensemble(DriftField::linear(gamma), {D, 2024}, x0, 4.0, 1e-3, 4000, {500});
    EXPECT_EQ(ens.quality.excluded, 0u);
    for (std::size_t k = 1; k < ens.n_records; ++k) {
        const auto xs = ens.snapshot(k);
        const double t = ens.time(k);
        // Euler-Maruyama mean is x0 (1 - gamma dt)^n, within O(dt) of x0 e^{-gamma t}.
        EXPECT_NEAR(stats::mean(xs), x0 * std::exp(-gamma * t), 3 * stats::standard_error(xs) + 1e-3 * t) << t;
    }
    const auto last = ens.snapshot(ens.n_records - 1);
    const double var = stats::variance(last), n = static_cast<double>(last.size());
    const double expected = D / gamma * (1.0 - std::exp(-2.0 * gamma * 4.0));
    EXPECT_NEAR(var, expected, 3 * expected * std::sqrt(2.0 / (n - 1)) + 1e-3);
}

TEST(SimulateEnsemble, DivergedTrajectoriesAreExcludedAndCounted) {
    // Outward cubic drift with a large step blows up for some trajectories.
    const auto ens = simulate_ensemble(DriftField::cubic(-50.0), {1.0, 5}, 0.0, 2.0, 0.05, 200);
    EXPECT_GT(ens.quality.excluded, 0u);
    EXPECT_EQ(ens.quality.excluded + ens.n_traj(), 200u);
    EXPECT_TRUE(all_finite(ens.values));
}

TEST(SimulateEnsemble, RecordIndex) {
    const auto ens = simulate_ensemble(DriftField::zero(), {0.1, 1}, 0.0, 1.0, 0.01, 2, {10});
    EXPECT_EQ(ens.n_records, 11u);
    EXPECT_EQ(ens.record_index(0.5), 5u);
    EXPECT_THROW(ens.record_index(0.55), DomainError);
    EXPECT_THROW(ens.record_index(2.0), DomainError);
}

namespace {

KMCoefficients ou_km(double dt, std::size_t lag, std::uint64_t seed, std::size_t bins = 10) {
    const auto ens = simulate_ensemble(DriftField::linear(1.0), {0.5, seed}, 0.0, 1.0, dt, 10000);
    return estimate_km_coefficients(ens, lag, bins);
}

}  // namespace

TEST(KramersMoyal, OrnsteinUhlenbeckCoefficients) {
    const auto km = ou_km(1e-3, 1, 31);
    ASSERT_FALSE(km.bins.empty());
    for (const auto& b : km.bins) {
        EXPECT_GE(b.count, 100u);
        EXPECT_NEAR(b.a1, -b.center, 3 * b.a1_se) << b.center;
        EXPECT_NEAR(b.a2, 0.5, 3 * b.a2_se) << b.center;
        EXPECT_NEAR(b.a3, 0.0, 3 * b.a3_se) << b.center;
        EXPECT_TRUE(std::isfinite(b.a1_se) && std::isfinite(b.a2_se) && std::isfinite(b.a3_se));
    }
}

TEST(KramersMoyal, DriftAtHalf) {
    // beta(x) = x: the bin containing x' = 0.5 estimates -0.5.
    const auto ens = simulate_ensemble(DriftField::linear(1.0), {1.0, 8}, 0.5, 0.5, 1e-3, 20000);
    const auto km = estimate_km_coefficients(ens, 1, 15);
    const KMBin* best = nullptr;
    for (const auto& b : km.bins)
        if (!best || std::abs(b.center - 0.5) < std::abs(best->center - 0.5)) best = &b;
    ASSERT_NE(best, nullptr);
    EXPECT_NEAR(best->a1, -best->center, 3 * best->a1_se);
}

TEST(KramersMoyal, LagBiasGrowsWithLag) {
    // Lag tau: E[dx] = -x (1 - e^{-tau}) so a1 / (-x) = (1 - e^{-tau}) / tau, a
    // bias of about tau/2. Without noise the Euler map gives (1 - dt)^lag exactly.
    const double dt = 1e-3;
    auto slope = [](const EnsembleSample& ens, std::size_t lag, std::size_t bins) {
        const auto km = estimate_km_coefficients(ens, lag, bins);
        double sxy = 0, sxx = 0;
        for (const auto& b : km.bins) {
            sxy += b.a1 * b.center;
            sxx += b.center * b.center;
        }
        return sxy / sxx;
    };
    const auto quiet = simulate_ensemble(DriftField::linear(1.0), {0.0, 4}, 1.0, 1.0, dt, 200);
    for (std::size_t lag : {1u, 50u, 200u}) {
        const double tau = dt * static_cast<double>(lag);
        const double exact = 1.0 - (1.0 - std::pow(1.0 - dt, static_cast<double>(lag))) / tau;
        EXPECT_NEAR(slope(quiet, lag, 30) + 1.0, exact, 1e-3) << lag;
    }

    auto bias = [](double tau) { return 1.0 - (1.0 - std::exp(-tau)) / tau; };
    const auto ens = simulate_ensemble(DriftField::linear(1.0), {0.5, 4}, 0.0, 1.0, dt, 100000, {10});
    const double b1 = slope(ens, 5, 10) + 1.0, b2 = slope(ens, 20, 10) + 1.0;
    // Slope standard errors are about 0.006 at this ensemble size.
    EXPECT_NEAR(b1, bias(0.05), 0.025);
    EXPECT_NEAR(b2, bias(0.2), 0.025);
    EXPECT_GT(b2, b1);
}

TEST(KramersMoyal, EmptyBinsAreOmittedAndPreconditionsChecked) {
    const auto ens = simulate_ensemble(DriftField::linear(1.0), {0.5, 2}, 0.0, 0.05, 1e-3, 50);
    const auto km = estimate_km_coefficients(ens, 1, 50);
    for (const auto& b : km.bins) EXPECT_GE(b.count, 100u);
    const auto single = simulate_ensemble(DriftField::zero(), {0.5, 2}, 0.0, 0.001, 1e-3, 5);
    // Every start sits at x = 0, so there is no spread to bin.
    EXPECT_TRUE(estimate_km_coefficients(single, 1, 5).bins.empty());
    EXPECT_THROW(estimate_km_coefficients(single, single.n_records, 5), InvalidArgument);
    EXPECT_THROW(estimate_km_coefficients(single, 0, 5), InvalidArgument);
}

TEST(ActionProcess, NoiselessLimitIsExactDrift) {
    const PerturbationSpec p{1.3, 0.0, 1e-3};
    NoiseStream rng(1);
    const auto s = action_process(p, 2.0, rng);
    for (std::size_t k = 0; k < s.size(); ++k) EXPECT_EQ(s[k], -1.3 * (1e-3 * static_cast<double>(k)));
}

TEST(ActionProcess, MeanAndVarianceOfTheEnsemble) {
    const PerturbationSpec p{1.0, 0.1, 1e-3};
    const double t = 1.0;
    std::vector<double> finals;
    for (std::uint64_t j = 0; j < 4000; ++j) {
        NoiseStream rng(stream_seed(11, j));
        finals.push_back(action_process(p, t, rng).back());
    }
    const double n = static_cast<double>(finals.size());
    const double var = stats::variance(finals);
    EXPECT_NEAR(stats::mean(finals), -t, 3 * std::sqrt(var / n));
    const double expected = 2 * 0.1 * 1.0 * t;
    EXPECT_NEAR(var, expected, 3 * expected * std::sqrt(2.0 / (n - 1)));
}

TEST(ActionProcess, EnsembleAgreesWithSingleRealizations) {
    const PerturbationSpec p{1.0, 0.1, 1e-2};
    const auto ens = simulate_action_ensemble(p, 1.0, 20, 5);
    const auto last = ens.snapshot(ens.n_records - 1);
    const double mean = stats::mean(last);
    EXPECT_NEAR(mean, -1.0, 4 * std::sqrt(0.2 / 20));
    const auto reflected = simulate_action_ensemble(p, 1.0, 20, 5, 1, true);
    for (double v : reflected.values) EXPECT_GE(v, 0.0);
}

TEST(PerturbationSpec, Validation) {
    NoiseStream rng(1);
    EXPECT_THROW(action_process({0.0, 0.1, 1e-3}, 1.0, rng), InvalidArgument);
    EXPECT_THROW(action_process({1.0, -0.1, 1e-3}, 1.0, rng), InvalidArgument);
    EXPECT_THROW(action_process({1.0, 0.1, 1e-3}, 0.0, rng), InvalidArgument);
}
