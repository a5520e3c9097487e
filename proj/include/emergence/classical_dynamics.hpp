#pragma once

// Hamiltonian mechanics: leapfrog integration, action functionals, on-shell
// actions by shooting, and finite-difference checks of the Hamilton-Jacobi
// equation on tables of S(q, t).

#include <boost/math/tools/toms748_solve.hpp>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "emergence/common.hpp"

namespace emergence::classical {

using Potential = std::function<double(std::span<const double> q, double t)>;
using PotentialGradient = std::function<void(std::span<const double> q, double t, std::span<double> grad)>;
using PotentialTimeDerivative = std::function<double(std::span<const double> q, double t)>;

/// A mechanical system with diagonal kinetic term
///   H(q, p, t) = sum_i p_i^2 / (2 m_i) + V(q, t).
struct SystemModel {
    std::size_t dim = 1;
    std::vector<double> mass{1.0};
    Potential potential;
    PotentialGradient gradient;
    /// dV/dt at fixed q. Only consulted for time-dependent models; when empty
    /// a central difference in t is used.
    PotentialTimeDerivative time_derivative;
    bool time_dependent = false;
    std::string name = "custom";

    void validate() const {
        require(dim > 0, "SystemModel: dim must be positive");
        require(mass.size() == dim, "SystemModel: one mass per coordinate");
        for (double m : mass) require(m > 0.0 && std::isfinite(m), "SystemModel: mass must be positive");
        require(static_cast<bool>(potential) && static_cast<bool>(gradient),
                "SystemModel: potential and gradient are required");
    }

    double kinetic_from_momentum(std::span<const double> p) const {
        double k = 0.0;
        for (std::size_t i = 0; i < dim; ++i) k += p[i] * p[i] / (2.0 * mass[i]);
        return k;
    }

    double hamiltonian(std::span<const double> q, std::span<const double> p, double t) const {
        return kinetic_from_momentum(p) + potential(q, t);
    }

    double lagrangian(std::span<const double> q, std::span<const double> qdot, double t) const {
        double k = 0.0;
        for (std::size_t i = 0; i < dim; ++i) k += 0.5 * mass[i] * qdot[i] * qdot[i];
        return k - potential(q, t);
    }

    double dVdt(std::span<const double> q, double t) const {
        if (!time_dependent) return 0.0;
        if (time_derivative) return time_derivative(q, t);
        const double h = 1e-5 * std::max(1.0, std::abs(t));
        return (potential(q, t + h) - potential(q, t - h)) / (2.0 * h);
    }

    /// Same dynamics with V -> V + c.
    SystemModel shifted(double c) const {
        SystemModel out = *this;
        auto base = potential;
        out.potential = [base, c](std::span<const double> q, double t) { return base(q, t) + c; };
        return out;
    }

    static SystemModel free_particle(double m = 1.0, std::size_t dim = 1) {
        SystemModel s;
        s.dim = dim;
        s.mass.assign(dim, m);
        s.potential = [](std::span<const double>, double) { return 0.0; };
        s.gradient = [](std::span<const double>, double, std::span<double> g) {
            std::fill(g.begin(), g.end(), 0.0);
        };
        s.name = "free";
        return s;
    }

    static SystemModel harmonic(double m = 1.0, double omega = 1.0) {
        SystemModel s;
        s.mass = {m};
        const double k = m * omega * omega;
        s.potential = [k](std::span<const double> q, double) { return 0.5 * k * q[0] * q[0]; };
        s.gradient = [k](std::span<const double> q, double, std::span<double> g) { g[0] = k * q[0]; };
        s.name = "harmonic";
        return s;
    }

    /// V = lambda q^4.
    static SystemModel quartic(double m = 1.0, double lambda = 1.0) {
        SystemModel s;
        s.mass = {m};
        s.potential = [lambda](std::span<const double> q, double) { return lambda * std::pow(q[0], 4); };
        s.gradient = [lambda](std::span<const double> q, double, std::span<double> g) {
            g[0] = 4.0 * lambda * q[0] * q[0] * q[0];
        };
        s.name = "quartic";
        return s;
    }

    /// V = q t, an explicitly time-dependent driving.
    static SystemModel linear_drive(double m = 1.0) {
        SystemModel s;
        s.mass = {m};
        s.potential = [](std::span<const double> q, double t) { return q[0] * t; };
        s.gradient = [](std::span<const double>, double t, std::span<double> g) { g[0] = t; };
        s.time_derivative = [](std::span<const double> q, double) { return q[0]; };
        s.time_dependent = true;
        s.name = "linear_drive";
        return s;
    }
};

struct PhaseState {
    std::vector<double> q;
    std::vector<double> p;
    double t = 0.0;
};

struct Trajectory {
    std::vector<PhaseState> states;
    double dt = 0.0;

    std::size_t size() const noexcept { return states.size(); }
    const PhaseState& back() const { return states.back(); }
};

class IntegrationDiverged : public DivergedError {
public:
    IntegrationDiverged(const std::string& what, PhaseState last_valid)
        : DivergedError(what), last_valid_(std::move(last_valid)) {}
    const PhaseState& last_valid() const noexcept { return last_valid_; }

private:
    PhaseState last_valid_;
};

class DegenerateTrajectory : public Error {
public:
    using Error::Error;
};

/// Boundary-value problem has no (unique) classical solution: no bracket was
/// found for the initial momentum, or the endpoint is conjugate to the start.
class NoClassicalPath : public Error {
public:
    using Error::Error;
};

class InsufficientGrid : public Error {
public:
    using Error::Error;
};

namespace detail {

inline bool finite_state(const PhaseState& s) {
    return all_finite(s.q) && all_finite(s.p) && std::isfinite(s.t);
}

/// One kick-drift-kick step, in place.
inline void leapfrog_step(const SystemModel& model, PhaseState& s, double dt, std::vector<double>& grad) {
    const std::size_t d = model.dim;
    model.gradient(s.q, s.t, grad);
    for (std::size_t i = 0; i < d; ++i) s.p[i] -= 0.5 * dt * grad[i];
    for (std::size_t i = 0; i < d; ++i) s.q[i] += dt * s.p[i] / model.mass[i];
    s.t += dt;
    model.gradient(s.q, s.t, grad);
    for (std::size_t i = 0; i < d; ++i) s.p[i] -= 0.5 * dt * grad[i];
}

}  // namespace detail

/// Single leapfrog step; exposed for phase-space-volume checks.
inline PhaseState leapfrog_step(const SystemModel& model, PhaseState s, double dt) {
    std::vector<double> grad(model.dim);
    detail::leapfrog_step(model, s, dt, grad);
    return s;
}

/// Störmer-Verlet integration of Hamilton's equations on a uniform grid.
/// The number of steps is round((t_end - t0) / dt), so the last state lies
/// within dt/2 of t_end.
inline Trajectory integrate_hamilton(const SystemModel& model, const PhaseState& init, double t_end, double dt) {
    model.validate();
    require(dt > 0.0 && std::isfinite(dt), "integrate_hamilton: dt must be positive");
    require(t_end > init.t, "integrate_hamilton: t_end must exceed the initial time");
    require(init.q.size() == model.dim && init.p.size() == model.dim,
            "integrate_hamilton: state dimension does not match model");

    const auto steps = std::max<long long>(1, std::llround((t_end - init.t) / dt));
    Trajectory traj;
    traj.dt = dt;
    traj.states.reserve(static_cast<std::size_t>(steps) + 1);
    traj.states.push_back(init);

    PhaseState s = init;
    std::vector<double> grad(model.dim);
    for (long long k = 0; k < steps; ++k) {
        detail::leapfrog_step(model, s, dt, grad);
        // Re-anchor time to avoid accumulating rounding in t.
        s.t = init.t + dt * static_cast<double>(k + 1);
        if (!detail::finite_state(s)) {
            throw IntegrationDiverged("integrate_hamilton: non-finite state at step " + std::to_string(k + 1),
                                      traj.states.back());
        }
        traj.states.push_back(s);
    }
    return traj;
}

namespace detail {

/// Second-order derivative of samples f on a uniform grid with spacing h:
/// central in the interior, one-sided three-point at the ends.
inline std::vector<double> uniform_derivative(std::span<const double> f, double h) {
    const std::size_t n = f.size();
    std::vector<double> d(n);
    if (n == 2) {
        d[0] = d[1] = (f[1] - f[0]) / h;
        return d;
    }
    for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (f[i + 1] - f[i - 1]) / (2.0 * h);
    d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
    d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
    return d;
}

}  // namespace detail

/// Trapezoidal quadrature of L(q, qdot, t) with qdot from finite differences
/// of the sampled coordinates (the stored momenta are not used).
inline double action_of(const SystemModel& model, const Trajectory& traj) {
    model.validate();
    const std::size_t n = traj.size();
    if (n < 2) throw DegenerateTrajectory("action_of: need at least two states");
    require(traj.dt > 0.0, "action_of: trajectory dt must be positive");

    const std::size_t d = model.dim;
    std::vector<std::vector<double>> qdot(d);
    std::vector<double> column(n);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t k = 0; k < n; ++k) column[k] = traj.states[k].q[i];
        qdot[i] = detail::uniform_derivative(column, traj.dt);
    }

    std::vector<double> v(d);
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t i = 0; i < d; ++i) v[i] = qdot[i][k];
        const double lag = model.lagrangian(traj.states[k].q, v, traj.states[k].t);
        sum += (k == 0 || k + 1 == n) ? 0.5 * lag : lag;
    }
    return sum * traj.dt;
}

struct ShootingOptions {
    std::size_t steps = 2000;          ///< leapfrog steps per trial trajectory
    double tolerance = 1e-10;          ///< accepted endpoint mismatch
    int max_expansions = 30;           ///< geometric bracket growth budget
    double conjugate_tolerance = 1e-6; ///< |dq1/dp0| relative to the free-particle value
};

struct ClassicalPath {
    Trajectory trajectory;
    double initial_momentum = 0.0;
    double action = 0.0;
    double final_momentum = 0.0;
    double final_energy = 0.0;
};

/// Classical trajectory from (q0, t0) to (q1, t1) by shooting on the
/// initial momentum. One-dimensional systems only.
inline ClassicalPath solve_boundary_value(const SystemModel& model, double q0, double t0, double q1, double t1,
                                          const ShootingOptions& opts = {}) {
    model.validate();
    require(model.dim == 1, "shooting is implemented for one coordinate");
    require(t1 > t0, "onshell_action: t1 must exceed t0");
    require(opts.steps >= 2, "onshell_action: need at least two steps");

    const double span = t1 - t0;
    const double dt = span / static_cast<double>(opts.steps);
    const double m = model.mass[0];

    auto shoot = [&](double p0) {
        PhaseState s{{q0}, {p0}, t0};
        std::vector<double> grad(1);
        for (std::size_t k = 0; k < opts.steps; ++k) {
            detail::leapfrog_step(model, s, dt, grad);
            s.t = t0 + dt * static_cast<double>(k + 1);
            if (!std::isfinite(s.q[0]) || !std::isfinite(s.p[0])) return std::numeric_limits<double>::quiet_NaN();
        }
        return s.q[0] - q1;
    };

    const double guess = m * (q1 - q0) / span;
    const double f_guess = shoot(guess);
    if (!std::isfinite(f_guess)) throw NoClassicalPath("onshell_action: trial trajectory diverged");

    double lo = guess, hi = guess, f_lo = f_guess, f_hi = f_guess;
    bool bracketed = (f_guess == 0.0);
    const double base_step = std::max({std::abs(guess), m * std::max(1.0, std::abs(q1 - q0)) / span, 1e-8});
    for (int k = 0; k < opts.max_expansions && !bracketed; ++k) {
        const double step = base_step * std::ldexp(1.0, k);
        for (double sign : {1.0, -1.0}) {
            const double p = guess + sign * step;
            const double f = shoot(p);
            if (!std::isfinite(f)) continue;
            if (f == 0.0 || (f > 0.0) != (f_guess > 0.0)) {
                lo = std::min(guess, p);
                hi = std::max(guess, p);
                f_lo = (lo == guess) ? f_guess : f;
                f_hi = (hi == guess) ? f_guess : f;
                bracketed = true;
                break;
            }
        }
    }
    if (!bracketed) {
        throw NoClassicalPath("onshell_action: could not bracket the initial momentum (conjugate point?)");
    }

    double p_star = guess;
    if (f_guess != 0.0) {
        std::uintmax_t iters = 200;
        auto [a, b] = boost::math::tools::toms748_solve(shoot, lo, hi, f_lo, f_hi,
                                                        boost::math::tools::eps_tolerance<double>(52), iters);
        p_star = std::abs(shoot(a)) < std::abs(shoot(b)) ? a : b;
    }
    const double mismatch = shoot(p_star);
    if (!(std::abs(mismatch) <= opts.tolerance * std::max(1.0, std::abs(q1)))) {
        throw NoClassicalPath("onshell_action: endpoint mismatch " + std::to_string(mismatch) + " above tolerance");
    }

    // Near a conjugate point every momentum lands at nearly the same q1.
    const double dp = 1e-4 * base_step;
    const double slope = (shoot(p_star + dp) - shoot(p_star - dp)) / (2.0 * dp);
    if (!(std::abs(slope) >= opts.conjugate_tolerance * span / m)) {
        throw NoClassicalPath("onshell_action: endpoint is (numerically) conjugate to the start");
    }

    ClassicalPath out;
    out.initial_momentum = p_star;
    out.trajectory = integrate_hamilton(model, PhaseState{{q0}, {p_star}, t0}, t1, dt);
    out.action = action_of(model, out.trajectory);
    const auto& end = out.trajectory.back();
    out.final_momentum = end.p[0];
    out.final_energy = model.hamiltonian(end.q, end.p, end.t);
    return out;
}

inline double onshell_action(const SystemModel& model, double q0, double t0, double q1, double t1,
                             const ShootingOptions& opts = {}) {
    return solve_boundary_value(model, q0, t0, q1, t1, opts).action;
}

/// S(q0, t0; q, t) on a rectangular (q, t) grid, together with the end
/// momentum and energy of the classical path reaching each node.
struct ActionTable {
    double q0 = 0.0;
    double t0 = 0.0;
    std::vector<double> q_axis;
    std::vector<double> t_axis;
    std::vector<double> action;       ///< row-major [iq * nt + it]
    std::vector<double> end_momentum; ///< same layout
    std::vector<double> end_energy;   ///< same layout

    std::size_t nq() const noexcept { return q_axis.size(); }
    std::size_t nt() const noexcept { return t_axis.size(); }
    std::size_t index(std::size_t iq, std::size_t it) const noexcept { return iq * nt() + it; }
    double S(std::size_t iq, std::size_t it) const { return action[index(iq, it)]; }
};

namespace detail {

inline void require_monotone(const std::vector<double>& axis, const char* name) {
    for (std::size_t i = 1; i < axis.size(); ++i) {
        if (!(axis[i] > axis[i - 1])) throw InvalidArgument(std::string("action table: ") + name + " axis must be strictly increasing");
    }
}

inline void require_dense(const ActionTable& table) {
    if (table.nq() < 3 || table.nt() < 3) {
        throw InsufficientGrid("action table needs at least 3 nodes per axis for central differences");
    }
}

/// Three-point derivative on a possibly non-uniform axis.
inline double axis_derivative(std::span<const double> x, std::span<const double> f, std::size_t i) {
    const std::size_t n = x.size();
    std::size_t a, b, c;
    if (i == 0) { a = 0; b = 1; c = 2; }
    else if (i + 1 == n) { a = n - 3; b = n - 2; c = n - 1; }
    else { a = i - 1; b = i; c = i + 1; }
    const double xa = x[a], xb = x[b], xc = x[c], xi = x[i];
    // Derivative of the Lagrange interpolant through (a, b, c) at xi.
    const double la = ((xi - xb) + (xi - xc)) / ((xa - xb) * (xa - xc));
    const double lb = ((xi - xa) + (xi - xc)) / ((xb - xa) * (xb - xc));
    const double lc = ((xi - xa) + (xi - xb)) / ((xc - xa) * (xc - xb));
    return la * f[a] + lb * f[b] + lc * f[c];
}

}  // namespace detail

/// Fills an action table node by node. Nodes are independent; each worker
/// writes only its own slots.
inline ActionTable build_action_table(const SystemModel& model, double q0, double t0, std::vector<double> q_axis,
                                      std::vector<double> t_axis, const ShootingOptions& opts = {}) {
    detail::require_monotone(q_axis, "q");
    detail::require_monotone(t_axis, "t");
    require(!t_axis.empty() && t_axis.front() > t0, "action table: all times must exceed t0");

    ActionTable table;
    table.q0 = q0;
    table.t0 = t0;
    table.q_axis = std::move(q_axis);
    table.t_axis = std::move(t_axis);
    const std::size_t total = table.nq() * table.nt();
    table.action.assign(total, 0.0);
    table.end_momentum.assign(total, 0.0);
    table.end_energy.assign(total, 0.0);

    parallel_for(total, [&](std::size_t k) {
        const std::size_t iq = k / table.nt();
        const std::size_t it = k % table.nt();
        const auto path = solve_boundary_value(model, q0, t0, table.q_axis[iq], table.t_axis[it], opts);
        table.action[k] = path.action;
        table.end_momentum[k] = path.final_momentum;
        table.end_energy[k] = path.final_energy;
    });
    return table;
}

struct GradientResiduals {
    double max_momentum_residual = 0.0; ///< max |dS/dq1 - p1|
    double max_energy_residual = 0.0;   ///< max |dS/dt1 + H1|
};

struct HJResidualField {
    std::vector<double> dSdq;     ///< table layout
    std::vector<double> dSdt;
    std::vector<double> residual; ///< dS/dt + H(q, dS/dq, t)
    /// Over all nodes, edges included. The edge stencils are one-sided but
    /// still second order, and the worst node stays put under refinement.
    double max_residual = 0.0;
    /// max |dS/dt + E| with E the conserved energy of each classical path;
    /// present for time-independent models only.
    std::optional<double> max_energy_residual;
};

namespace detail {

inline void table_derivatives(const ActionTable& table, std::vector<double>& dq, std::vector<double>& dt) {
    const std::size_t nq = table.nq(), nt = table.nt();
    dq.assign(nq * nt, 0.0);
    dt.assign(nq * nt, 0.0);
    std::vector<double> column(nq);
    for (std::size_t it = 0; it < nt; ++it) {
        for (std::size_t iq = 0; iq < nq; ++iq) column[iq] = table.S(iq, it);
        for (std::size_t iq = 0; iq < nq; ++iq) dq[table.index(iq, it)] = axis_derivative(table.q_axis, column, iq);
    }
    for (std::size_t iq = 0; iq < nq; ++iq) {
        std::span<const double> row(table.action.data() + iq * nt, nt);
        for (std::size_t it = 0; it < nt; ++it) dt[table.index(iq, it)] = axis_derivative(table.t_axis, row, it);
    }
}


}  // namespace detail

/// Compares finite-difference gradients of S with the momentum and energy at
/// the end of each classical path: dS = p dq - H dt.
inline GradientResiduals action_gradients_check(const ActionTable& table, const SystemModel& model) {
    detail::require_dense(table);
    model.validate();
    std::vector<double> dq, dt;
    detail::table_derivatives(table, dq, dt);
    GradientResiduals out;
    for (std::size_t iq = 0; iq < table.nq(); ++iq) {
        for (std::size_t it = 0; it < table.nt(); ++it) {
            const std::size_t k = table.index(iq, it);
            out.max_momentum_residual = std::max(out.max_momentum_residual, std::abs(dq[k] - table.end_momentum[k]));
            out.max_energy_residual = std::max(out.max_energy_residual, std::abs(dt[k] + table.end_energy[k]));
        }
    }
    return out;
}

inline HJResidualField hamilton_jacobi_residual(const ActionTable& table, const SystemModel& model) {
    detail::require_dense(table);
    model.validate();
    require(model.dim == 1, "hamilton_jacobi_residual: tables are one-dimensional in q");

    HJResidualField out;
    detail::table_derivatives(table, out.dSdq, out.dSdt);
    out.residual.assign(out.dSdq.size(), 0.0);
    double max_e = 0.0;
    for (std::size_t iq = 0; iq < table.nq(); ++iq) {
        for (std::size_t it = 0; it < table.nt(); ++it) {
            const std::size_t k = table.index(iq, it);
            const double q[1] = {table.q_axis[iq]};
            const double p[1] = {out.dSdq[k]};
            out.residual[k] = out.dSdt[k] + model.hamiltonian(q, p, table.t_axis[it]);
            out.max_residual = std::max(out.max_residual, std::abs(out.residual[k]));
            max_e = std::max(max_e, std::abs(out.dSdt[k] + table.end_energy[k]));
        }
    }
    if (!model.time_dependent) out.max_energy_residual = max_e;
    return out;
}

struct EnergySeries {
    std::vector<double> values;
    double max_drift = 0.0; ///< max |H(t) - H(t0)|
};

inline EnergySeries energy_series(const SystemModel& model, const Trajectory& traj) {
    model.validate();
    require(traj.size() > 0, "energy_series: empty trajectory");
    EnergySeries out;
    out.values.reserve(traj.size());
    for (const auto& s : traj.states) {
        const double h = model.hamiltonian(s.q, s.p, s.t);
        if (!std::isfinite(h)) throw DivergedError("energy_series: non-finite energy");
        out.values.push_back(h);
    }
    for (double h : out.values) out.max_drift = std::max(out.max_drift, std::abs(h - out.values.front()));
    return out;
}

/// Trapezoidal estimate of the integral of dH/dt = dV/dt along a trajectory;
/// for a time-dependent model this is what H(T) - H(t0) should equal.
inline double explicit_time_work(const SystemModel& model, const Trajectory& traj) {
    require(traj.size() >= 2, "explicit_time_work: need at least two states");
    double sum = 0.0;
    for (std::size_t k = 0; k < traj.size(); ++k) {
        const auto& s = traj.states[k];
        const double w = model.dVdt(s.q, s.t);
        sum += (k == 0 || k + 1 == traj.size()) ? 0.5 * w : w;
    }
    return sum * traj.dt;
}

}  // namespace emergence::classical
