#pragma once

// Gaussian free field on a lattice with one Dirichlet time axis and an
// optional periodic space axis; test-function pairing, time reflection,
// the reflection-positivity Gram matrix and Wick continuation of a fitted
// Euclidean two-point function.
//
// Time sites run over 1 - T/2 .. T/2. The reflection plane sits on the link
// between t = 0 and t = 1, so "positive time" means t >= 1 and the reflection
// maps t to 1 - t.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "emergence/common.hpp"
#include "emergence/statistics.hpp"

namespace emergence::osf {

struct LatticeShape {
    std::size_t time_sites = 64; ///< T, even
    std::size_t space_sites = 1; ///< L; 1 means no space axis
    double spacing = 1.0;

    void validate() const {
        require(time_sites >= 2 && time_sites % 2 == 0, "LatticeShape: time extent must be even and >= 2");
        require(space_sites >= 1, "LatticeShape: space extent must be >= 1");
        require(spacing > 0.0, "LatticeShape: spacing must be positive");
    }
    long t_min() const noexcept { return 1 - static_cast<long>(time_sites / 2); }
    long t_max() const noexcept { return static_cast<long>(time_sites / 2); }
    std::size_t volume() const noexcept { return time_sites * space_sites; }
    bool has_space() const noexcept { return space_sites > 1; }
    /// Lattice cell volume a^d.
    double cell_volume() const noexcept { return has_space() ? spacing * spacing : spacing; }
    bool contains_time(long t) const noexcept { return t >= t_min() && t <= t_max(); }
    std::size_t index(long t, std::size_t x) const noexcept {
        return static_cast<std::size_t>(t - t_min()) * space_sites + x;
    }
    bool operator==(const LatticeShape&) const = default;

    /// Parses "T" or "TxL".
    static LatticeShape parse(const std::string& text, double spacing = 1.0) {
        LatticeShape s;
        s.spacing = spacing;
        const auto x = text.find('x');
        try {
            s.time_sites = std::stoul(text.substr(0, x));
            if (x != std::string::npos) s.space_sites = std::stoul(text.substr(x + 1));
        } catch (const std::exception&) {
            throw InvalidArgument("lattice '" + text + "' is not of the form T or TxL");
        }
        s.validate();
        return s;
    }
};

/// Real, finitely supported function on the lattice.
struct TestFunction {
    LatticeShape shape;
    std::vector<double> values;

    static TestFunction zero(const LatticeShape& shape) { return {shape, std::vector<double>(shape.volume(), 0.0)}; }

    static TestFunction spike(const LatticeShape& shape, long t, std::size_t x = 0, double value = 1.0) {
        if (!shape.contains_time(t) || x >= shape.space_sites) throw DomainError("spike outside the lattice");
        auto f = zero(shape);
        f.values[shape.index(t, x)] = value;
        return f;
    }

    double at(long t, std::size_t x = 0) const { return values[shape.index(t, x)]; }
    double& at(long t, std::size_t x = 0) { return values[shape.index(t, x)]; }

    /// Smallest time with a nonzero value; empty for the zero function.
    std::optional<long> min_time() const {
        for (long t = shape.t_min(); t <= shape.t_max(); ++t)
            for (std::size_t x = 0; x < shape.space_sites; ++x)
                if (at(t, x) != 0.0) return t;
        return std::nullopt;
    }
    std::optional<long> max_time() const {
        for (long t = shape.t_max(); t >= shape.t_min(); --t)
            for (std::size_t x = 0; x < shape.space_sites; ++x)
                if (at(t, x) != 0.0) return t;
        return std::nullopt;
    }
    bool positive_time() const {
        const auto t = min_time();
        return !t || *t >= 1;
    }

    TestFunction& operator+=(const TestFunction& o) {
        require(shape == o.shape, "TestFunction: lattice mismatch");
        for (std::size_t i = 0; i < values.size(); ++i) values[i] += o.values[i];
        return *this;
    }
    TestFunction& operator-=(const TestFunction& o) {
        require(shape == o.shape, "TestFunction: lattice mismatch");
        for (std::size_t i = 0; i < values.size(); ++i) values[i] -= o.values[i];
        return *this;
    }
    TestFunction& operator*=(double s) {
        for (double& v : values) v *= s;
        return *this;
    }
    friend TestFunction operator+(TestFunction a, const TestFunction& b) { return a += b; }
    friend TestFunction operator-(TestFunction a, const TestFunction& b) { return a -= b; }
    friend TestFunction operator*(double s, TestFunction a) { return a *= s; }
};

/// A sampled field configuration.
struct FieldSample {
    LatticeShape shape;
    std::vector<double> values;
};

/// phi(f) = sum_x f(x) phi(x) a^d.
inline double pair(const FieldSample& phi, const TestFunction& f) {
    if (!(phi.shape == f.shape)) throw DomainError("pair: field and test function live on different lattices");
    double s = 0.0;
    for (std::size_t i = 0; i < f.values.size(); ++i) s += f.values[i] * phi.values[i];
    return s * f.shape.cell_volume();
}

/// (Theta f)(t, x) = f(1 - t, x).
inline TestFunction time_reflect(const TestFunction& f) {
    TestFunction out = TestFunction::zero(f.shape);
    for (long t = f.shape.t_min(); t <= f.shape.t_max(); ++t)
        for (std::size_t x = 0; x < f.shape.space_sites; ++x) out.at(1 - t, x) = f.at(t, x);
    return out;
}

/// Shift by (dt, dx); space wraps, time does not.
inline TestFunction translate(const TestFunction& f, long dt, long dx) {
    TestFunction out = TestFunction::zero(f.shape);
    const auto l = static_cast<long>(f.shape.space_sites);
    for (long t = f.shape.t_min(); t <= f.shape.t_max(); ++t)
        for (std::size_t x = 0; x < f.shape.space_sites; ++x) {
            const double v = f.at(t, x);
            if (v == 0.0) continue;
            if (!f.shape.contains_time(t + dt)) throw DomainError("translate: support leaves the lattice");
            const auto nx = static_cast<std::size_t>(((static_cast<long>(x) + dx) % l + l) % l);
            out.at(t + dt, nx) = v;
        }
    return out;
}

class IllConditionedCovariance : public Error {
public:
    using Error::Error;
};

class PositivityDomainError : public Error {
public:
    using Error::Error;
};

class SemigroupViolation : public Error {
public:
    using Error::Error;
};

/// C = (-Delta + m^2)^{-1} of the free field, stored as a Cholesky factor of
/// K = -Delta + m^2. The field measure is exp(-a^d phi.K.phi / 2), so
/// <phi(f) phi(g)> = a^d f.K^{-1}.g.
class CovarianceOp {
public:
    CovarianceOp(LatticeShape shape, double mass) : shape_(shape), mass_(mass) {
        shape_.validate();
        require(mass > 0.0, "CovarianceOp: mass must be positive");
        const auto n = static_cast<Eigen::Index>(shape_.volume());
        const double inv_a2 = 1.0 / (shape_.spacing * shape_.spacing);
        Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n, n);
        for (long t = shape_.t_min(); t <= shape_.t_max(); ++t) {
            for (std::size_t x = 0; x < shape_.space_sites; ++x) {
                const auto i = static_cast<Eigen::Index>(shape_.index(t, x));
                k(i, i) += mass * mass + 2.0 * inv_a2;
                for (long nt : {t - 1, t + 1})
                    if (shape_.contains_time(nt)) k(i, static_cast<Eigen::Index>(shape_.index(nt, x))) -= inv_a2;
                if (shape_.has_space()) {
                    const std::size_t l = shape_.space_sites;
                    k(i, i) += 2.0 * inv_a2;
                    k(i, static_cast<Eigen::Index>(shape_.index(t, (x + 1) % l))) -= inv_a2;
                    k(i, static_cast<Eigen::Index>(shape_.index(t, (x + l - 1) % l))) -= inv_a2;
                }
            }
        }
        operator_ = k;
        llt_.compute(k);
        if (llt_.info() != Eigen::Success) throw IllConditionedCovariance("CovarianceOp: -Delta + m^2 is not positive definite");
    }

    const LatticeShape& shape() const noexcept { return shape_; }
    double mass() const noexcept { return mass_; }
    const Eigen::MatrixXd& precision_operator() const noexcept { return operator_; }

    /// <f, C g> = a^d f . K^{-1} g.
    double quadratic_form(const TestFunction& f, const TestFunction& g) const {
        check(f);
        check(g);
        const Eigen::Map<const Eigen::VectorXd> gv(g.values.data(), static_cast<Eigen::Index>(g.values.size()));
        const Eigen::Map<const Eigen::VectorXd> fv(f.values.data(), static_cast<Eigen::Index>(f.values.size()));
        const Eigen::VectorXd u = llt_.solve(gv);
        const double q = shape_.cell_volume() * fv.dot(u);
        if (!std::isfinite(q)) throw IllConditionedCovariance("CovarianceOp: solve produced a non-finite value");
        return q;
    }

    /// Draw phi ~ N(0, K^{-1} / a^d): phi = L^{-T} z / sqrt(a^d).
    FieldSample sample(Rng& rng) const {
        const auto n = static_cast<Eigen::Index>(shape_.volume());
        std::normal_distribution<double> normal(0.0, 1.0);
        Eigen::VectorXd z(n);
        for (Eigen::Index i = 0; i < n; ++i) z(i) = normal(rng);
        const Eigen::VectorXd phi = llt_.matrixU().solve(z) / std::sqrt(shape_.cell_volume());
        return {shape_, std::vector<double>(phi.data(), phi.data() + n)};
    }

private:
    void check(const TestFunction& f) const {
        if (!(f.shape == shape_)) throw DomainError("CovarianceOp: test function lives on a different lattice");
    }

    LatticeShape shape_;
    double mass_;
    Eigen::MatrixXd operator_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

/// E[exp(i phi(g))] = exp(-<g, C g> / 2).
inline double characteristic(const CovarianceOp& cov, const TestFunction& g) {
    return std::exp(-0.5 * cov.quadratic_form(g, g));
}

/// Monte-Carlo estimate of E[exp(i phi(g))] for each g over shared draws.
/// Draw d uses stream stream_seed(seed, d). The imaginary part vanishes by
/// symmetry, so only cos(phi(g)) is averaged.
inline std::vector<stats::Estimate> characteristic_mc(const CovarianceOp& cov, std::span<const TestFunction> gs,
                                                      std::size_t draws, std::uint64_t seed) {
    require(draws >= 2, "characteristic_mc: need at least two draws");
    std::vector<std::vector<double>> samples(gs.size(), std::vector<double>(draws));
    parallel_for(draws, [&](std::size_t d) {
        Rng rng = make_stream(seed, d);
        const auto phi = cov.sample(rng);
        for (std::size_t k = 0; k < gs.size(); ++k) samples[k][d] = std::cos(pair(phi, gs[k]));
    });
    std::vector<stats::Estimate> out;
    for (const auto& s : samples) out.push_back({stats::mean(s), stats::standard_error(s)});
    return out;
}

struct GramMatrix {
    Eigen::MatrixXd values;                 ///< real for real test functions
    double hermiticity_defect = 0.0;        ///< max |M - M^T| (square case)
    std::optional<double> min_eigenvalue;   ///< bras == kets only
    bool certified = false;
    double tolerance = 1e-10;
};

namespace detail {

inline void require_positive_time(std::span<const TestFunction> fs, const char* what) {
    for (const auto& f : fs) {
        if (!f.positive_time()) {
            throw PositivityDomainError(std::string(what) + ": test function has support at t <= 0 (min t = " +
                                        std::to_string(*f.min_time()) + ")");
        }
    }
}

inline bool same_set(std::span<const TestFunction> a, std::span<const TestFunction> b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!(a[i].shape == b[i].shape) || a[i].values != b[i].values) return false;
    return true;
}

}  // namespace detail

/// M_{i i'} = E[exp(i phi(f_i - Theta f'_{i'}))] for kets f_i and bras f'_{i'}.
/// When bras == kets the matrix is symmetric and its smallest eigenvalue is
/// the positivity certificate.
inline GramMatrix gram_matrix(const CovarianceOp& cov, std::span<const TestFunction> kets,
                              std::span<const TestFunction> bras, double tolerance = 1e-10) {
    require(!kets.empty() && !bras.empty(), "gram_matrix: need at least one ket and one bra");
    detail::require_positive_time(kets, "gram_matrix");
    detail::require_positive_time(bras, "gram_matrix");

    std::vector<TestFunction> reflected;
    reflected.reserve(bras.size());
    for (const auto& b : bras) reflected.push_back(time_reflect(b));

    GramMatrix g;
    g.tolerance = tolerance;
    const auto rows = static_cast<Eigen::Index>(kets.size()), cols = static_cast<Eigen::Index>(bras.size());
    g.values.resize(rows, cols);
    parallel_for(kets.size() * bras.size(), [&](std::size_t k) {
        const std::size_t i = k / bras.size(), j = k % bras.size();
        g.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = characteristic(cov, kets[i] - reflected[j]);
    });

    if (detail::same_set(kets, bras)) {
        g.hermiticity_defect = (g.values - g.values.transpose()).cwiseAbs().maxCoeff();
        const Eigen::MatrixXd sym = 0.5 * (g.values + g.values.transpose());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
        g.min_eigenvalue = es.eigenvalues().minCoeff();
        g.certified = *g.min_eigenvalue >= -tolerance;
    }
    return g;
}

inline GramMatrix gram_matrix(const CovarianceOp& cov, std::span<const TestFunction> fs, double tolerance = 1e-10) {
    return gram_matrix(cov, fs, fs, tolerance);
}

/// |phi> = sum_i c_i exp(i phi(f_i)).
struct FieldStateExpr {
    std::vector<std::pair<std::complex<double>, TestFunction>> terms;
};

/// <b|a> = sum_{i i'} conj(c'_{i'}) c_i M_{i i'} with kets from a, bras from b.
inline std::complex<double> inner_product(const CovarianceOp& cov, const FieldStateExpr& a, const FieldStateExpr& b) {
    require(!a.terms.empty() && !b.terms.empty(), "inner_product: states must have at least one term");
    std::vector<TestFunction> kets, bras;
    for (const auto& [c, f] : a.terms) kets.push_back(f);
    for (const auto& [c, f] : b.terms) bras.push_back(f);
    const auto m = gram_matrix(cov, kets, bras);
    std::complex<double> sum = 0.0;
    for (std::size_t i = 0; i < kets.size(); ++i)
        for (std::size_t j = 0; j < bras.size(); ++j)
            sum += std::conj(b.terms[j].first) * a.terms[i].first *
                   m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    return sum;
}

struct Shift {
    long time = 0;
    long space = 0;
};

struct ShiftCheck {
    Shift shift;
    double max_deviation = 0.0; ///< from the unshifted Gram matrix
    double min_eigenvalue = 0.0;
    bool certified = false;
    bool invariant = false;     ///< meaningful for pure spatial shifts
};

struct CovarianceReport {
    std::vector<ShiftCheck> checks;
    bool passes() const {
        for (const auto& c : checks) {
            if (!c.certified) return false;
            if (c.shift.time == 0 && !c.invariant) return false;
        }
        return true;
    }
};

/// Applies each shift to all test functions together (the reflection plane
/// stays put). Spatial shifts must leave M unchanged to 1e-10; forward time
/// shifts give a new Gram matrix whose positivity is re-certified. Time may
/// only move forward: shifted support at t <= 0 is a semigroup violation.
inline CovarianceReport translation_covariance_check(const CovarianceOp& cov, std::span<const TestFunction> fs,
                                                     std::span<const Shift> shifts, double tolerance = 1e-10) {
    const auto base = gram_matrix(cov, fs, tolerance);
    CovarianceReport rep;
    for (const auto& s : shifts) {
        std::vector<TestFunction> moved;
        for (const auto& f : fs) {
            const auto lo = f.min_time();
            if (lo && *lo + s.time <= 0) {
                throw SemigroupViolation("translation_covariance_check: shift by " + std::to_string(s.time) +
                                         " moves support to t <= 0");
            }
            moved.push_back(translate(f, s.time, s.space));
        }
        const auto g = gram_matrix(cov, moved, tolerance);
        ShiftCheck c;
        c.shift = s;
        c.max_deviation = (g.values - base.values).cwiseAbs().maxCoeff();
        c.min_eigenvalue = g.min_eigenvalue.value_or(0.0);
        c.certified = g.certified;
        c.invariant = c.max_deviation <= 1e-10;
        rep.checks.push_back(c);
    }
    return rep;
}

/// <Phi(t0) Phi(t0 + tau)> for tau = 0..max_tau, Phi(t) the spatial average
/// of phi on time slice t.
inline std::vector<double> time_correlator(const CovarianceOp& cov, long t0, std::size_t max_tau) {
    const auto& s = cov.shape();
    require(s.contains_time(t0) && s.contains_time(t0 + static_cast<long>(max_tau)),
            "time_correlator: lags leave the lattice");
    auto slice = [&](long t) {
        auto f = TestFunction::zero(s);
        const double w = 1.0 / (static_cast<double>(s.space_sites) * s.cell_volume());
        for (std::size_t x = 0; x < s.space_sites; ++x) f.at(t, x) = w;
        return f;
    };
    const auto src = slice(t0);
    std::vector<double> out;
    for (std::size_t tau = 0; tau <= max_tau; ++tau) out.push_back(cov.quadratic_form(src, slice(t0 + static_cast<long>(tau))));
    return out;
}

/// Random test function with `sites` nonzero Gaussian values at times
/// 1..max_time.
inline TestFunction random_positive_time_function(const LatticeShape& shape, Rng& rng, std::size_t sites,
                                                  long max_time = 8) {
    const long hi = std::min(max_time, shape.t_max());
    require(hi >= 1, "random_positive_time_function: lattice has no positive times");
    std::uniform_int_distribution<long> pick_t(1, hi);
    std::uniform_int_distribution<std::size_t> pick_x(0, shape.space_sites - 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto f = TestFunction::zero(shape);
    for (std::size_t k = 0; k < sites; ++k) f.at(pick_t(rng), pick_x(rng)) += normal(rng);
    return f;
}

class ContinuationAmbiguous : public Error {
public:
    using Error::Error;
};

struct EuclideanSeries {
    std::vector<double> tau;
    std::vector<double> value;
    std::vector<double> error; ///< empty for exact input
};

struct WickOptions {
    double chi2_threshold = 3.0;        ///< noisy input, per degree of freedom
    double exact_tolerance = 1e-8;      ///< exact input, max |log C - fit|
};

struct WickResult {
    double amplitude = 0.0;
    double mass = 0.0;
    double mass_error = 0.0;
    double chi2_per_dof = 0.0;
    std::vector<double> times;
    std::vector<std::complex<double>> values; ///< A exp(-i M t)
};

/// Fits A exp(-M tau) to a decaying Euclidean correlator (weighted linear
/// fit of log C) and continues the fitted model to A exp(-i M t). Data that
/// a single exponential does not describe is rejected rather than continued
/// point by point.
inline WickResult wick_continue(const EuclideanSeries& corr, std::span<const double> times, const WickOptions& opts = {}) {
    const std::size_t n = corr.tau.size();
    require(n >= 2 && corr.value.size() == n, "wick_continue: need at least two matching points");
    const bool noisy = !corr.error.empty();
    require(!noisy || corr.error.size() == n, "wick_continue: error length mismatch");

    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), 2);
    Eigen::VectorXd y(static_cast<Eigen::Index>(n)), w(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        if (!(corr.value[i] > 0.0)) throw ContinuationAmbiguous("wick_continue: correlator must be positive");
        const auto r = static_cast<Eigen::Index>(i);
        x(r, 0) = 1.0;
        x(r, 1) = -corr.tau[i];
        y(r) = std::log(corr.value[i]);
        const double sigma = noisy ? corr.error[i] / corr.value[i] : 1.0;
        require(sigma > 0.0, "wick_continue: errors must be positive");
        w(r) = 1.0 / (sigma * sigma);
    }
    const Eigen::MatrixXd normal = x.transpose() * w.asDiagonal() * x;
    const Eigen::Vector2d beta = normal.ldlt().solve(x.transpose() * w.asDiagonal() * y);
    const Eigen::VectorXd resid = y - x * beta;

    WickResult out;
    out.amplitude = std::exp(beta(0));
    out.mass = beta(1);
    if (noisy) {
        const Eigen::Matrix2d cov = normal.inverse();
        out.mass_error = std::sqrt(cov(1, 1));
        double chi2 = 0.0;
        for (Eigen::Index i = 0; i < resid.size(); ++i) chi2 += resid(i) * resid(i) * w(i);
        out.chi2_per_dof = n > 2 ? chi2 / static_cast<double>(n - 2) : 0.0;
        if (out.chi2_per_dof > opts.chi2_threshold) {
            throw ContinuationAmbiguous("wick_continue: single exponential rejected, chi2/dof = " +
                                        std::to_string(out.chi2_per_dof));
        }
    } else {
        const double worst = resid.cwiseAbs().maxCoeff();
        if (worst > opts.exact_tolerance) {
            throw ContinuationAmbiguous("wick_continue: input is not a single exponential (max log residual " +
                                        std::to_string(worst) + ")");
        }
    }
    for (double t : times) {
        out.times.push_back(t);
        out.values.push_back(out.amplitude * std::exp(std::complex<double>(0.0, -out.mass * t)));
    }
    return out;
}

}  // namespace emergence::osf
