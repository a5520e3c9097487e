#pragma once

// Finite-volume solver for
//     dP/dt = d/dx [ beta(x) P + D dP/dx ]
// on a uniform 1-D grid. Face fluxes use exponential fitting (Chang-Cooper /
// Scharfetter-Gummel), so the discrete stationary state reproduces
// exp(-int beta/D) exactly when beta is constant between cell centers.

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "emergence/common.hpp"
#include "emergence/stochastic_process.hpp"

namespace emergence::fp {

enum class Boundary { zero_flux, absorbing };

inline Boundary parse_boundary(const std::string& s) {
    if (s == "zeroflux" || s == "zero-flux" || s == "zero_flux") return Boundary::zero_flux;
    if (s == "absorbing") return Boundary::absorbing;
    throw InvalidArgument("unknown boundary '" + s + "' (expected zeroflux|absorbing)");
}

struct Grid1D {
    double lower = 0.0;
    double upper = 1.0;
    std::size_t n_cells = 8;
    Boundary boundary = Boundary::zero_flux;

    void validate() const {
        require(upper > lower, "Grid1D: upper must exceed lower");
        require(n_cells >= 8, "Grid1D: need at least 8 cells");
    }
    double width() const noexcept { return (upper - lower) / static_cast<double>(n_cells); }
    double center(std::size_t i) const noexcept { return lower + width() * (static_cast<double>(i) + 0.5); }
    double face(std::size_t i) const noexcept { return lower + width() * static_cast<double>(i); }
    bool contains(double x) const noexcept { return x >= lower && x <= upper; }

    std::size_t cell_of(double x) const {
        if (!contains(x)) throw DomainError("position " + std::to_string(x) + " outside grid");
        const auto i = static_cast<std::size_t>((x - lower) / width());
        return std::min(i, n_cells - 1);
    }

    Grid1D refined(std::size_t factor = 2) const {
        Grid1D g = *this;
        g.n_cells *= factor;
        return g;
    }
};

/// Probability density, piecewise constant per cell.
struct DensityField {
    Grid1D grid;
    std::vector<double> values;
    double time = 0.0;
    std::size_t clamped = 0; ///< cells reset from small negative values to 0

    double mass() const {
        double s = 0.0;
        for (double v : values) s += v;
        return s * grid.width();
    }
    double mean() const {
        double s = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) s += values[i] * grid.center(i);
        return s * grid.width() / mass();
    }
    double variance() const {
        const double m = mean();
        double s = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) s += values[i] * (grid.center(i) - m) * (grid.center(i) - m);
        return s * grid.width() / mass();
    }
    void normalize() {
        const double m = mass();
        require(m > 0.0, "DensityField: cannot normalize zero mass");
        for (double& v : values) v /= m;
    }
    /// Probability per cell.
    std::vector<double> cell_masses() const {
        std::vector<double> out(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] * grid.width();
        return out;
    }

    static DensityField delta(const Grid1D& grid, double x0) {
        DensityField d{grid, std::vector<double>(grid.n_cells, 0.0), 0.0, 0};
        d.values[grid.cell_of(x0)] = 1.0 / grid.width();
        return d;
    }
};

class StabilityViolation : public Error {
public:
    StabilityViolation(const std::string& what, double suggested_dt) : Error(what), suggested_dt_(suggested_dt) {}
    double suggested_dt() const noexcept { return suggested_dt_; }

private:
    double suggested_dt_;
};

class NoDiffusiveStationary : public Error {
public:
    using Error::Error;
};

namespace detail {

/// B(z) = z / (e^z - 1), B(0) = 1.
inline double bernoulli(double z) {
    if (std::abs(z) < 1e-10) return 1.0 - 0.5 * z;
    return z / std::expm1(z);
}

/// Coefficients of the face flux F = right * P_right - left * P_left for
/// F = beta P + D dP/dx across a distance h.
inline std::pair<double, double> face_coefficients(double beta, double diffusion, double h) {
    if (diffusion == 0.0) return {std::max(-beta, 0.0), std::max(beta, 0.0)};
    const double z = beta * h / diffusion;
    const double scale = diffusion / h;
    return {scale * bernoulli(z), scale * bernoulli(-z)};
}

}  // namespace detail

/// The discrete generator. Drift is sampled at cell faces.
class FPOperator {
public:
    using Drift = std::function<double(double)>;

    FPOperator(Grid1D grid, Drift drift, double diffusion) : grid_(grid), drift_(std::move(drift)), diffusion_(diffusion) {
        grid_.validate();
        require(diffusion_ >= 0.0 && std::isfinite(diffusion_), "FPOperator: D must be >= 0");
        require(static_cast<bool>(drift_), "FPOperator: drift is required");
        assemble();
    }

    FPOperator(Grid1D grid, const stochastic::DriftField& drift, double diffusion)
        : FPOperator(grid, Drift([drift](double x) { return drift(x); }), diffusion) {}

    const Grid1D& grid() const noexcept { return grid_; }
    double diffusion() const noexcept { return diffusion_; }
    const std::vector<double>& face_drift() const noexcept { return face_drift_; }
    const Drift& drift() const noexcept { return drift_; }

    /// Tridiagonal generator A with dP/dt = A P.
    const std::vector<double>& lower() const noexcept { return lower_; } ///< A(i, i-1), index i
    const std::vector<double>& diag() const noexcept { return diag_; }
    const std::vector<double>& upper() const noexcept { return upper_; } ///< A(i, i+1), index i

    FPOperator refined(std::size_t factor = 2) const { return FPOperator(grid_.refined(factor), drift_, diffusion_); }

    std::vector<double> apply(const std::vector<double>& p) const {
        const std::size_t n = grid_.n_cells;
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) {
            double v = diag_[i] * p[i];
            if (i > 0) v += lower_[i] * p[i - 1];
            if (i + 1 < n) v += upper_[i] * p[i + 1];
            out[i] = v;
        }
        return out;
    }

    /// Largest dt for which the explicit update stays positive and stable.
    double explicit_dt_limit() const {
        double worst = 0.0;
        for (double d : diag_) worst = std::max(worst, std::abs(d));
        return worst == 0.0 ? std::numeric_limits<double>::infinity() : 1.0 / worst;
    }

    /// Accuracy-driven default step w^2 / (2 D).
    double default_dt() const {
        const double w = grid_.width();
        return diffusion_ > 0.0 ? w * w / (2.0 * diffusion_) : w / std::max(1e-300, max_abs_drift());
    }

    double max_abs_drift() const {
        double m = 0.0;
        for (double b : face_drift_) m = std::max(m, std::abs(b));
        return m;
    }

private:
    void assemble() {
        const std::size_t n = grid_.n_cells;
        const double w = grid_.width();
        face_drift_.resize(n + 1);
        for (std::size_t f = 0; f <= n; ++f) face_drift_[f] = drift_(grid_.face(f));

        // right[f], left[f] for interior faces f = 1..n-1 between cells f-1 and f.
        std::vector<double> left(n + 1, 0.0), right(n + 1, 0.0);
        for (std::size_t f = 1; f < n; ++f) std::tie(left[f], right[f]) = detail::face_coefficients(face_drift_[f], diffusion_, w);

        lower_.assign(n, 0.0);
        diag_.assign(n, 0.0);
        upper_.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            // dP_i/dt = (F_{i+1} - F_i) / w with F_f = right[f] P_f - left[f] P_{f-1}.
            if (i + 1 < n) {
                upper_[i] = right[i + 1] / w;
                diag_[i] -= left[i + 1] / w;
            }
            if (i > 0) {
                lower_[i] = left[i] / w;
                diag_[i] -= right[i] / w;
            }
        }
        if (grid_.boundary == Boundary::absorbing) {
            // Dirichlet P = 0 half a cell outside each end.
            const auto [l0, r0] = detail::face_coefficients(face_drift_[0], diffusion_, 0.5 * w);
            const auto [ln, rn] = detail::face_coefficients(face_drift_[n], diffusion_, 0.5 * w);
            diag_[0] -= r0 / w;
            diag_[n - 1] -= ln / w;
            (void)l0;
            (void)rn;
        }
    }

    Grid1D grid_;
    Drift drift_;
    double diffusion_;
    std::vector<double> face_drift_;
    std::vector<double> lower_, diag_, upper_;
};

enum class Scheme { implicit, explicit_euler };

/// Factorized (I - dt A) for repeated backward-Euler steps (Thomas algorithm;
/// the matrix is an M-matrix, so no pivoting is needed).
class ImplicitStepper {
public:
    ImplicitStepper(const FPOperator& op, double dt) {
        const std::size_t n = op.grid().n_cells;
        a_.resize(n);
        cprime_.resize(n);
        denom_.resize(n);
        for (std::size_t i = 0; i < n; ++i) a_[i] = -dt * op.lower()[i];
        std::vector<double> b(n), c(n);
        for (std::size_t i = 0; i < n; ++i) {
            b[i] = 1.0 - dt * op.diag()[i];
            c[i] = -dt * op.upper()[i];
        }
        denom_[0] = b[0];
        cprime_[0] = c[0] / denom_[0];
        for (std::size_t i = 1; i < n; ++i) {
            denom_[i] = b[i] - a_[i] * cprime_[i - 1];
            cprime_[i] = c[i] / denom_[i];
        }
    }

    void step(std::vector<double>& p) const {
        const std::size_t n = p.size();
        p[0] /= denom_[0];
        for (std::size_t i = 1; i < n; ++i) p[i] = (p[i] - a_[i] * p[i - 1]) / denom_[i];
        for (std::size_t i = n - 1; i-- > 0;) p[i] -= cprime_[i] * p[i + 1];
    }

private:
    std::vector<double> a_, cprime_, denom_;
};

namespace detail {

inline std::size_t clamp_negative(std::vector<double>& p) {
    std::size_t n = 0;
    for (double& v : p) {
        if (v < 0.0) {
            v = 0.0;
            ++n;
        }
    }
    return n;
}

/// Advances a vector (density or cell masses; the operator is the same on a
/// uniform grid) by `steps` steps of size dt.
inline std::size_t propagate(const FPOperator& op, std::vector<double>& p, double dt, std::size_t steps, Scheme scheme) {
    std::size_t clamped = 0;
    if (steps == 0) return 0;
    if (scheme == Scheme::implicit) {
        const ImplicitStepper stepper(op, dt);
        for (std::size_t s = 0; s < steps; ++s) {
            stepper.step(p);
            clamped += clamp_negative(p);
        }
    } else {
        for (std::size_t s = 0; s < steps; ++s) {
            const auto ap = op.apply(p);
            for (std::size_t i = 0; i < p.size(); ++i) p[i] += dt * ap[i];
            clamped += clamp_negative(p);
        }
    }
    return clamped;
}

}  // namespace detail

/// Advances rho by steps * dt. The default backward-Euler scheme is
/// unconditionally stable; the explicit scheme rejects dt above its bound.
inline DensityField evolve(const FPOperator& op, const DensityField& rho, double dt, std::size_t steps,
                           Scheme scheme = Scheme::implicit) {
    require(dt > 0.0 && std::isfinite(dt), "evolve: dt must be positive");
    require(rho.values.size() == op.grid().n_cells, "evolve: density does not live on the operator's grid");
    if (scheme == Scheme::explicit_euler && dt > op.explicit_dt_limit()) {
        const double suggested = 0.9 * op.explicit_dt_limit();
        throw StabilityViolation("evolve: dt = " + std::to_string(dt) + " exceeds the explicit stability bound; try dt <= " +
                                     std::to_string(suggested),
                                 suggested);
    }
    DensityField out = rho;
    out.clamped += detail::propagate(op, out.values, dt, steps, scheme);
    out.time = rho.time + dt * static_cast<double>(steps);
    return out;
}

/// Closed-form zero-flux stationary state P_{i+1} / P_i = exp(-beta_face w / D).
inline DensityField stationary_by_quadrature(const FPOperator& op) {
    const Grid1D& g = op.grid();
    if (g.boundary != Boundary::zero_flux) throw InvalidArgument("stationary_density: requires zero-flux boundaries");
    if (op.diffusion() == 0.0) throw NoDiffusiveStationary("stationary_density: D = 0 has no diffusive stationary state");
    const double w = g.width();
    std::vector<double> logp(g.n_cells, 0.0);
    for (std::size_t i = 1; i < g.n_cells; ++i) logp[i] = logp[i - 1] - op.face_drift()[i] * w / op.diffusion();
    const double top = *std::max_element(logp.begin(), logp.end());
    DensityField d{g, std::vector<double>(g.n_cells), 0.0, 0};
    for (std::size_t i = 0; i < g.n_cells; ++i) d.values[i] = std::exp(logp[i] - top);
    d.normalize();
    return d;
}

/// Null vector of the assembled generator, normalized to unit mass. The last
/// row of A is replaced by the normalization constraint and the system is
/// solved with a sparse LU.
inline DensityField stationary_by_null_vector(const FPOperator& op) {
    const Grid1D& g = op.grid();
    if (g.boundary != Boundary::zero_flux) throw InvalidArgument("stationary_density: requires zero-flux boundaries");
    if (op.diffusion() == 0.0) throw NoDiffusiveStationary("stationary_density: D = 0 has no diffusive stationary state");
    const auto n = static_cast<Eigen::Index>(g.n_cells);
    std::vector<Eigen::Triplet<double>> entries;
    entries.reserve(4 * g.n_cells);
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
        if (i > 0) entries.emplace_back(i, i - 1, op.lower()[i]);
        entries.emplace_back(i, i, op.diag()[i]);
        entries.emplace_back(i, i + 1, op.upper()[i]);
    }
    for (Eigen::Index j = 0; j < n; ++j) entries.emplace_back(n - 1, j, g.width());
    Eigen::SparseMatrix<double> a(n, n);
    a.setFromTriplets(entries.begin(), entries.end());
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    rhs(n - 1) = 1.0;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(a);
    if (lu.info() != Eigen::Success) throw Error("stationary_density: generator factorization failed");
    const Eigen::VectorXd p = lu.solve(rhs);
    DensityField d{g, std::vector<double>(g.n_cells), 0.0, 0};
    for (Eigen::Index i = 0; i < n; ++i) d.values[static_cast<std::size_t>(i)] = p(i);
    return d;
}

/// Zero-flux stationary density. Both routes are computed and must agree to
/// 1e-8 relative to the peak density.
inline DensityField stationary_density(const FPOperator& op) {
    auto quad = stationary_by_quadrature(op);
    const auto null = stationary_by_null_vector(op);
    const double peak = *std::max_element(quad.values.begin(), quad.values.end());
    double diff = 0.0;
    for (std::size_t i = 0; i < quad.values.size(); ++i) diff = std::max(diff, std::abs(quad.values[i] - null.values[i]));
    if (diff > 1e-8 * peak) {
        throw Error("stationary_density: quadrature and null-vector solutions disagree by " + std::to_string(diff / peak));
    }
    return quad;
}

/// Evolves a unit mass placed in the cell containing x0 to time t. The
/// step is shrunk so that an integer number of steps reaches t exactly.
inline DensityField greens_function(const FPOperator& op, double x0, double t, double dt) {
    require(t >= 0.0, "greens_function: t must be >= 0");
    require(dt > 0.0, "greens_function: dt must be positive");
    auto rho = DensityField::delta(op.grid(), x0);
    if (t == 0.0) return rho;
    const auto steps = static_cast<std::size_t>(std::ceil(t / dt - 1e-9));
    return evolve(op, rho, t / static_cast<double>(steps), steps);
}

/// L1 distance between direct propagation 0 -> t and the composition through
/// t_mid, with the intermediate-time propagator built column by column from
/// cell-delta initial conditions. Works in cell masses so the unit delta is
/// exact.
inline double chapman_kolmogorov_residual(const FPOperator& op, double x0, double t_mid, double t, double dt) {
    require(dt > 0.0, "chapman_kolmogorov_residual: dt must be positive");
    require(t_mid > 0.0 && t_mid < t, "chapman_kolmogorov_residual: need 0 < t_mid < t");
    const Grid1D& g = op.grid();
    const std::size_t n = g.n_cells;
    const std::size_t k0 = g.cell_of(x0);
    const auto total = static_cast<std::size_t>(std::llround(t / dt));
    const auto first = std::min(total, static_cast<std::size_t>(std::llround(t_mid / dt)));
    const std::size_t second = total - first;
    require(total >= 1, "chapman_kolmogorov_residual: t shorter than one step");

    std::vector<double> direct(n, 0.0);
    direct[k0] = 1.0;
    detail::propagate(op, direct, dt, total, Scheme::implicit);

    std::vector<double> mid(n, 0.0);
    mid[k0] = 1.0;
    detail::propagate(op, mid, dt, first, Scheme::implicit);

    std::vector<double> composed(n, 0.0);
    std::vector<double> column(n);
    for (std::size_t j = 0; j < n; ++j) {
        std::fill(column.begin(), column.end(), 0.0);
        column[j] = 1.0;
        detail::propagate(op, column, dt, second, Scheme::implicit);
        for (std::size_t i = 0; i < n; ++i) composed[i] += column[i] * mid[j];
    }
    double l1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) l1 += std::abs(direct[i] - composed[i]);
    return l1;
}

struct CrosscheckOptions {
    std::size_t cells_per_bin = 1; ///< histogram bins merge this many grid cells
    std::optional<double> dt;      ///< solver step; default w^2 / (2 D)
    double floor_multiplier = 5.0; ///< threshold = multiplier / sqrt(n) + grid error
};

struct CrosscheckReport {
    double l1 = 0.0;          ///< ensemble histogram vs evolved density
    double mc_floor = 0.0;    ///< n_traj^(-1/2)
    double grid_error = 0.0;  ///< Richardson estimate from a 2x refined solve
    double threshold = 0.0;
    std::size_t samples = 0;
    std::vector<double> bin_edges;
    std::vector<double> histogram;   ///< probability per bin
    std::vector<double> fp_masses;   ///< probability per bin
    bool passes() const noexcept { return l1 < threshold; }
};

namespace detail {

inline std::vector<double> solve_masses(const FPOperator& op, double x0, double t, std::optional<double> dt) {
    const double step = dt.value_or(op.default_dt());
    const auto rho = greens_function(op, x0, t, std::min(step, t > 0.0 ? t : step));
    return rho.cell_masses();
}

inline std::vector<double> merge_bins(const std::vector<double>& m, std::size_t k) {
    std::vector<double> out(m.size() / k, 0.0);
    for (std::size_t i = 0; i < out.size() * k; ++i) out[i / k] += m[i];
    return out;
}

}  // namespace detail

/// Fraction of the samples in each cell.
inline std::vector<double> histogram_masses(const Grid1D& g, std::span<const double> xs) {
    require(!xs.empty(), "histogram_masses: no samples");
    std::vector<double> counts(g.n_cells, 0.0);
    for (double x : xs) {
        if (!g.contains(x)) throw DomainError("histogram: sample " + std::to_string(x) + " outside the grid");
        counts[g.cell_of(x)] += 1.0;
    }
    for (double& c : counts) c /= static_cast<double>(xs.size());
    return counts;
}

/// Compares the ensemble distribution at time t (histogrammed on op's grid)
/// with the solver's evolution of the ensemble's common starting point.
inline CrosscheckReport langevin_crosscheck(const FPOperator& op, const stochastic::EnsembleSample& ens, double t,
                                            const CrosscheckOptions& opts = {}) {
    const Grid1D& g = op.grid();
    require(opts.cells_per_bin >= 1 && g.n_cells % opts.cells_per_bin == 0,
            "langevin_crosscheck: cells_per_bin must divide the cell count");
    require(ens.n_traj() >= 1, "langevin_crosscheck: empty ensemble");
    const std::size_t k = ens.record_index(t);
    const double x0 = ens.at(0, 0);
    for (std::size_t j = 0; j < ens.n_traj(); ++j) {
        if (ens.at(j, 0) != x0) throw DomainError("langevin_crosscheck: trajectories must share a starting point");
    }
    if (!g.contains(x0)) throw DomainError("langevin_crosscheck: starting point outside the grid");

    const auto counts = histogram_masses(g, ens.snapshot(k));
    const double n = static_cast<double>(ens.n_traj());

    const double elapsed = t - ens.t0;
    const auto coarse = detail::solve_masses(op, x0, elapsed, opts.dt);
    const auto fine_op = op.refined(2);
    std::optional<double> fine_dt;
    if (opts.dt) fine_dt = *opts.dt / 4.0;
    const auto fine_raw = detail::solve_masses(fine_op, x0, elapsed, fine_dt);
    const auto fine = detail::merge_bins(fine_raw, 2);

    CrosscheckReport rep;
    rep.samples = ens.n_traj();
    rep.histogram = detail::merge_bins(counts, opts.cells_per_bin);
    rep.fp_masses = detail::merge_bins(coarse, opts.cells_per_bin);
    const auto fine_binned = detail::merge_bins(fine, opts.cells_per_bin);
    double diff = 0.0;
    for (std::size_t b = 0; b < rep.histogram.size(); ++b) {
        rep.l1 += std::abs(rep.histogram[b] - rep.fp_masses[b]);
        diff += std::abs(rep.fp_masses[b] - fine_binned[b]);
    }
    // Order-2 scheme: the coarse error is about 4/3 of the coarse-fine gap.
    rep.grid_error = diff * 4.0 / 3.0;
    rep.mc_floor = 1.0 / std::sqrt(n);
    rep.threshold = opts.floor_multiplier * rep.mc_floor + rep.grid_error;
    for (std::size_t b = 0; b <= rep.histogram.size(); ++b) {
        rep.bin_edges.push_back(g.face(b * opts.cells_per_bin));
    }
    return rep;
}

/// Compares samples believed to be in equilibrium with the stationary
/// density. The grid error is estimated as for langevin_crosscheck.
inline CrosscheckReport stationary_crosscheck(const FPOperator& op, std::span<const double> samples,
                                              const CrosscheckOptions& opts = {}) {
    const Grid1D& g = op.grid();
    require(opts.cells_per_bin >= 1 && g.n_cells % opts.cells_per_bin == 0,
            "stationary_crosscheck: cells_per_bin must divide the cell count");
    const auto counts = histogram_masses(g, samples);
    const auto coarse = stationary_density(op).cell_masses();
    const auto fine = detail::merge_bins(stationary_density(op.refined(2)).cell_masses(), 2);

    CrosscheckReport rep;
    rep.samples = samples.size();
    rep.histogram = detail::merge_bins(counts, opts.cells_per_bin);
    rep.fp_masses = detail::merge_bins(coarse, opts.cells_per_bin);
    const auto fine_binned = detail::merge_bins(fine, opts.cells_per_bin);
    double diff = 0.0;
    for (std::size_t b = 0; b < rep.histogram.size(); ++b) {
        rep.l1 += std::abs(rep.histogram[b] - rep.fp_masses[b]);
        diff += std::abs(rep.fp_masses[b] - fine_binned[b]);
    }
    rep.grid_error = diff * 4.0 / 3.0;
    rep.mc_floor = 1.0 / std::sqrt(static_cast<double>(samples.size()));
    rep.threshold = opts.floor_multiplier * rep.mc_floor + rep.grid_error;
    for (std::size_t b = 0; b <= rep.histogram.size(); ++b) rep.bin_edges.push_back(g.face(b * opts.cells_per_bin));
    return rep;
}

}  // namespace emergence::fp
