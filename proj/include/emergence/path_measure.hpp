#pragma once

// Metropolis sampling of periodic lattice paths q_0..q_{N-1} with weight
// exp(-S/hbar), S = sum_i [ m (q_{i+1} - q_i)^2 / (2a) + a V(q_i) ], and the
// observables extracted from it: <q^2>, the Euclidean two-point function and
// the energy gap from its effective mass.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "emergence/common.hpp"
#include "emergence/statistics.hpp"

namespace emergence::paths {

enum class PotentialKind { harmonic, quartic };

inline PotentialKind parse_potential(const std::string& s) {
    if (s == "harmonic") return PotentialKind::harmonic;
    if (s == "quartic") return PotentialKind::quartic;
    throw InvalidArgument("unknown potential '" + s + "' (expected harmonic|quartic)");
}

/// Euclidean lattice action. V(q) = m omega^2 q^2 / 2 (+ lambda q^4 for the
/// quartic kind). `action_shift` is a constant added to S; it must not change
/// any sampled observable.
struct DiscreteActionSpec {
    PotentialKind kind = PotentialKind::harmonic;
    double mass = 1.0;
    double omega = 1.0;
    double lambda = 0.0;
    double hbar = 1.0;
    double spacing = 0.25;
    double action_shift = 0.0;

    void validate() const {
        require(mass > 0.0, "DiscreteActionSpec: m must be positive");
        require(spacing > 0.0, "DiscreteActionSpec: a must be positive");
        require(hbar > 0.0, "DiscreteActionSpec: hbar must be positive");
        require(omega >= 0.0, "DiscreteActionSpec: omega must be >= 0");
        require(kind == PotentialKind::harmonic || lambda >= 0.0, "DiscreteActionSpec: lambda must be >= 0");
        require(kind == PotentialKind::quartic || omega > 0.0, "DiscreteActionSpec: harmonic needs omega > 0");
    }

    double potential(double q) const noexcept {
        const double v = 0.5 * mass * omega * omega * q * q;
        return kind == PotentialKind::quartic ? v + lambda * q * q * q * q : v;
    }

    static DiscreteActionSpec harmonic(double m, double omega, double hbar, double a) {
        return {PotentialKind::harmonic, m, omega, 0.0, hbar, a, 0.0};
    }
    static DiscreteActionSpec quartic(double m, double omega, double lambda, double hbar, double a) {
        return {PotentialKind::quartic, m, omega, lambda, hbar, a, 0.0};
    }
};

struct LatticePath {
    std::vector<double> values;
    double spacing = 0.25;

    std::size_t size() const noexcept { return values.size(); }
    void validate() const {
        // N = 4 is accepted so tiny lattices can be checked against quadrature.
        require(values.size() >= 4, "LatticePath: need at least 4 slices");
        require(all_finite(values), "LatticePath: non-finite value");
    }
};

inline double discrete_action(const DiscreteActionSpec& spec, const LatticePath& path) {
    spec.validate();
    path.validate();
    require(std::abs(spec.spacing - path.spacing) <= 1e-15 * spec.spacing, "discrete_action: spacing mismatch");
    const std::size_t n = path.size();
    const double a = spec.spacing;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dq = path.values[(i + 1) % n] - path.values[i];
        s += spec.mass * dq * dq / (2.0 * a) + a * spec.potential(path.values[i]);
    }
    s += spec.action_shift;
    if (!std::isfinite(s)) throw DivergedError("discrete_action: non-finite action");
    return s;
}

struct MetropolisConfig {
    std::size_t slices = 64;
    double proposal_width = 1.0;
    std::size_t sweeps = 10000;         ///< total, thermalization included
    std::size_t thermalization = 1000;
    std::size_t stride = 1;             ///< sweeps between measurements
    std::uint64_t seed = 1;
    bool tune = true;                   ///< adjust width toward 50% during thermalization
    std::size_t blocks = 100;           ///< correlator blocks kept for jackknife errors
    bool store_paths = false;

    void validate() const {
        require(slices >= 4, "MetropolisConfig: need at least 4 slices");
        require(proposal_width > 0.0, "MetropolisConfig: proposal width must be positive");
        require(sweeps > thermalization, "MetropolisConfig: sweeps must exceed thermalization");
        require(stride >= 1, "MetropolisConfig: stride must be >= 1");
        require(blocks >= 2, "MetropolisConfig: need at least two blocks");
    }
    std::size_t measurements() const noexcept { return (sweeps - thermalization) / stride; }
};

/// One proposed single-site move, recorded so acceptance can be replayed.
struct Transition {
    std::size_t site = 0;
    double old_value = 0.0;
    double proposed = 0.0;
    double delta_action = 0.0;
    double acceptance_probability = 0.0;
    double uniform = 0.0;
    bool accepted = false;
};

class MetropolisChain {
public:
    MetropolisChain(const DiscreteActionSpec& spec, std::size_t slices, double width, std::uint64_t seed)
        : spec_(spec), q_(slices, 0.0), width_(width), rng_(seed) {
        spec_.validate();
        require(slices >= 4, "MetropolisChain: need at least 4 slices");
        require(width > 0.0, "MetropolisChain: proposal width must be positive");
    }

    /// Change of S when site i moves from q_i to value.
    double local_delta(std::size_t i, double value) const noexcept {
        const std::size_t n = q_.size();
        const double left = q_[(i + n - 1) % n];
        const double right = q_[(i + 1) % n];
        const double old = q_[i];
        const double k = spec_.mass / (2.0 * spec_.spacing);
        const double kin_new = (value - left) * (value - left) + (right - value) * (right - value);
        const double kin_old = (old - left) * (old - left) + (right - old) * (right - old);
        return k * (kin_new - kin_old) + spec_.spacing * (spec_.potential(value) - spec_.potential(old));
    }

    Transition step_site(std::size_t i) {
        Transition tr;
        tr.site = i;
        tr.old_value = q_[i];
        tr.proposed = q_[i] + width_ * (2.0 * uniform_(rng_) - 1.0);
        tr.delta_action = local_delta(i, tr.proposed);
        tr.acceptance_probability = tr.delta_action <= 0.0 ? 1.0 : std::exp(-tr.delta_action / spec_.hbar);
        tr.uniform = uniform_(rng_);
        tr.accepted = tr.uniform < tr.acceptance_probability;
        if (tr.accepted) q_[i] = tr.proposed;
        ++proposed_;
        if (tr.accepted) ++accepted_;
        return tr;
    }

    void sweep() {
        for (std::size_t i = 0; i < q_.size(); ++i) step_site(i);
    }

    void reset_counters() noexcept { proposed_ = accepted_ = 0; }
    double acceptance_rate() const noexcept {
        return proposed_ == 0 ? 0.0 : static_cast<double>(accepted_) / static_cast<double>(proposed_);
    }
    std::uint64_t proposed() const noexcept { return proposed_; }
    std::uint64_t accepted() const noexcept { return accepted_; }

    double width() const noexcept { return width_; }
    void set_width(double w) { width_ = w; }
    const std::vector<double>& path() const noexcept { return q_; }
    void set_path(std::vector<double> q) {
        require(q.size() == q_.size(), "MetropolisChain: path length mismatch");
        q_ = std::move(q);
    }
    const DiscreteActionSpec& spec() const noexcept { return spec_; }

private:
    DiscreteActionSpec spec_;
    std::vector<double> q_;
    double width_;
    Rng rng_;
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
    std::uint64_t proposed_ = 0;
    std::uint64_t accepted_ = 0;
};

/// Streamed results of one or more merged chains.
struct PathEnsemble {
    DiscreteActionSpec spec;
    std::size_t slices = 0;
    double proposal_width = 0.0;
    std::uint64_t proposed = 0;
    std::uint64_t accepted = 0;
    std::vector<double> q2_series;                 ///< site-averaged q^2 per measurement
    std::vector<std::vector<double>> corr_blocks;  ///< block means of C(tau), tau = 0..N-1
    std::size_t block_size = 0;                    ///< measurements per block
    double tau_int = 0.5;                          ///< of q2_series, in measurements
    std::size_t chains = 1;
    std::vector<std::vector<double>> paths;        ///< only with store_paths
    std::vector<std::string> warnings;

    double acceptance_rate() const noexcept {
        return proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed);
    }
    std::size_t measurements() const noexcept { return q2_series.size(); }
};

/// Single-site random-walk Metropolis. The proposal width is tuned toward
/// 50% acceptance during thermalization and then frozen.
inline PathEnsemble metropolis_sample(const DiscreteActionSpec& spec, const MetropolisConfig& config) {
    spec.validate();
    config.validate();
    const std::size_t n = config.slices;
    const std::size_t n_meas = config.measurements();
    require(n_meas >= config.blocks, "metropolis_sample: fewer measurements than blocks");

    MetropolisChain chain(spec, n, config.proposal_width, config.seed);
    for (std::size_t s = 0; s < config.thermalization; ++s) {
        chain.sweep();
        if (config.tune && (s + 1) % 10 == 0) {
            const double rate = chain.acceptance_rate();
            chain.set_width(chain.width() * std::clamp(rate / 0.5, 0.5, 2.0));
            chain.reset_counters();
        }
    }
    chain.reset_counters();

    PathEnsemble ens;
    ens.spec = spec;
    ens.slices = n;
    ens.proposal_width = chain.width();
    ens.block_size = n_meas / config.blocks;
    ens.q2_series.reserve(n_meas);

    std::vector<double> block(n, 0.0);
    std::size_t in_block = 0;
    std::vector<double> corr(n);
    for (std::size_t m = 0; m < n_meas; ++m) {
        for (std::size_t s = 0; s < config.stride; ++s) chain.sweep();
        const auto& q = chain.path();
        double q2 = 0.0;
        for (double v : q) q2 += v * v;
        ens.q2_series.push_back(q2 / static_cast<double>(n));
        if (ens.corr_blocks.size() < config.blocks) {
            for (std::size_t tau = 0; tau < n; ++tau) {
                double c = 0.0;
                for (std::size_t i = 0; i < n; ++i) c += q[i] * q[(i + tau) % n];
                block[tau] += c / static_cast<double>(n);
            }
            if (++in_block == ens.block_size) {
                for (double& v : block) v /= static_cast<double>(ens.block_size);
                ens.corr_blocks.push_back(block);
                std::fill(block.begin(), block.end(), 0.0);
                in_block = 0;
            }
        }
        if (config.store_paths) ens.paths.push_back(q);
    }
    ens.proposed = chain.proposed();
    ens.accepted = chain.accepted();
    ens.tau_int = stats::integrated_autocorrelation_time(ens.q2_series);

    const double rate = ens.acceptance_rate();
    if (rate < 0.2 || rate > 0.8) {
        const double suggested = ens.proposal_width * std::clamp(rate / 0.5, 0.1, 10.0);
        ens.warnings.push_back("acceptance " + std::to_string(rate) + " outside [0.2, 0.8]; try proposal width " +
                               std::to_string(suggested));
    }
    return ens;
}

/// Combines independent chains of the same action and lattice. Counts and
/// sums add, so the merged estimates do not depend on the merge order.
inline PathEnsemble merge(const PathEnsemble& a, const PathEnsemble& b) {
    require(a.slices == b.slices, "merge: lattice sizes differ");
    require(a.block_size == b.block_size, "merge: block sizes differ");
    PathEnsemble out = a;
    out.proposed += b.proposed;
    out.accepted += b.accepted;
    out.q2_series.insert(out.q2_series.end(), b.q2_series.begin(), b.q2_series.end());
    out.corr_blocks.insert(out.corr_blocks.end(), b.corr_blocks.begin(), b.corr_blocks.end());
    out.paths.insert(out.paths.end(), b.paths.begin(), b.paths.end());
    const double wa = static_cast<double>(a.measurements()), wb = static_cast<double>(b.measurements());
    out.tau_int = (wa * a.tau_int + wb * b.tau_int) / (wa + wb);
    out.chains = a.chains + b.chains;
    out.warnings.insert(out.warnings.end(), b.warnings.begin(), b.warnings.end());
    return out;
}

/// <q^2> with its error from blocks of the measurement series.
inline stats::Estimate mean_q2(const PathEnsemble& ens) {
    const auto bm = stats::block_means(ens.q2_series, ens.block_size);
    double sum = 0.0;
    for (double v : bm) sum += v;
    return {sum / static_cast<double>(bm.size()), stats::standard_error(bm)};
}

/// C(tau) = <q(t) q(t + tau)> with jackknife errors over correlator blocks.
struct Correlator {
    double spacing = 1.0;
    std::vector<double> value;
    std::vector<double> error;
    /// Leave-one-block-out estimates; empty for exact (noise-free) input.
    std::vector<std::vector<double>> jackknife;
    std::vector<std::string> warnings;

    std::size_t size() const noexcept { return value.size(); }

    static Correlator exact(std::vector<double> values, double spacing) {
        Correlator c;
        c.spacing = spacing;
        c.error.assign(values.size(), 0.0);
        c.value = std::move(values);
        return c;
    }
};

namespace detail {

inline Correlator correlator_from_blocks(const PathEnsemble& ens, std::size_t length) {
    const std::size_t nb = ens.corr_blocks.size();
    require(nb >= 2, "two_point: need at least two correlator blocks");
    Correlator c;
    c.spacing = ens.spec.spacing;
    std::vector<double> total(length, 0.0);
    for (const auto& b : ens.corr_blocks)
        for (std::size_t t = 0; t < length; ++t) total[t] += b[t];
    c.value.resize(length);
    for (std::size_t t = 0; t < length; ++t) c.value[t] = total[t] / static_cast<double>(nb);
    c.jackknife.assign(nb, std::vector<double>(length));
    for (std::size_t k = 0; k < nb; ++k)
        for (std::size_t t = 0; t < length; ++t)
            c.jackknife[k][t] = (total[t] - ens.corr_blocks[k][t]) / static_cast<double>(nb - 1);
    c.error.resize(length);
    std::vector<double> col(nb);
    for (std::size_t t = 0; t < length; ++t) {
        for (std::size_t k = 0; k < nb; ++k) col[k] = c.jackknife[k][t];
        c.error[t] = stats::jackknife_error(col);
    }
    return c;
}

}  // namespace detail

/// Correlator for lags 0..max_lag. Lags beyond N/2 carry no new information
/// on a periodic lattice, so the series is truncated there with a warning.
inline Correlator two_point(const PathEnsemble& ens, std::size_t max_lag) {
    const std::size_t half = ens.slices / 2;
    std::string warning;
    if (max_lag >= half) {
        warning = "two_point: max_lag " + std::to_string(max_lag) + " folds back on the periodic lattice; truncated to " +
                  std::to_string(half);
        max_lag = half;
    }
    auto c = detail::correlator_from_blocks(ens, max_lag + 1);
    if (!warning.empty()) c.warnings.push_back(warning);
    return c;
}

/// All N lags, including the mirrored half; used to check C(tau) = C(N - tau).
inline Correlator periodic_correlator(const PathEnsemble& ens) {
    return detail::correlator_from_blocks(ens, ens.slices);
}

class NoPlateau : public Error {
public:
    using Error::Error;
};

struct GapOptions {
    std::size_t tau_min = 1;
    std::optional<std::size_t> tau_max;   ///< default: last lag with usable signal
    double max_relative_error = 0.1;      ///< stops the automatic window
    double chi2_threshold = 3.0;          ///< per degree of freedom
};

struct GapEstimate {
    double gap = 0.0;
    double error = 0.0;
    std::size_t tau_min = 0, tau_max = 0;
    double chi2_per_dof = 0.0;
    std::vector<double> effective_mass;      ///< index tau, NaN where undefined
    std::vector<double> effective_mass_error;
};

namespace detail {

inline double effective_mass(const std::vector<double>& c, std::size_t tau, double a) {
    const double r = (c[tau + 1] + c[tau - 1]) / (2.0 * c[tau]);
    if (!(c[tau] > 0.0) || !(r >= 1.0)) return std::numeric_limits<double>::quiet_NaN();
    return std::acosh(r) / a;
}

}  // namespace detail

/// Plateau of m_eff(tau) = acosh[(C(tau+1) + C(tau-1)) / (2 C(tau))] / a.
inline GapEstimate energy_gap(const Correlator& corr, const GapOptions& opts = {}) {
    const std::size_t len = corr.size();
    require(len >= 3, "energy_gap: correlator too short");
    require(opts.tau_min >= 1, "energy_gap: tau_min must be >= 1");
    const std::size_t last = len - 2;
    require(opts.tau_min <= last, "energy_gap: tau_min beyond the correlator");

    GapEstimate out;
    out.effective_mass.assign(len, std::numeric_limits<double>::quiet_NaN());
    out.effective_mass_error.assign(len, 0.0);
    const bool noisy = !corr.jackknife.empty();
    std::vector<std::vector<double>> jk_meff(corr.jackknife.size(), std::vector<double>(len));
    for (std::size_t tau = 1; tau <= last; ++tau) {
        out.effective_mass[tau] = detail::effective_mass(corr.value, tau, corr.spacing);
        if (!noisy) continue;
        std::vector<double> col(corr.jackknife.size());
        bool ok = true;
        for (std::size_t k = 0; k < corr.jackknife.size(); ++k) {
            col[k] = jk_meff[k][tau] = detail::effective_mass(corr.jackknife[k], tau, corr.spacing);
            ok = ok && std::isfinite(col[k]);
        }
        out.effective_mass_error[tau] = ok ? stats::jackknife_error(col) : std::numeric_limits<double>::infinity();
    }

    auto usable = [&](std::size_t tau) {
        const double m = out.effective_mass[tau];
        if (!std::isfinite(m)) return false;
        if (!noisy) return true;
        const double e = out.effective_mass_error[tau];
        return std::isfinite(e) && e <= opts.max_relative_error * std::abs(m);
    };

    std::size_t hi = opts.tau_min;
    if (opts.tau_max) {
        hi = std::min(*opts.tau_max, last);
        for (std::size_t tau = opts.tau_min; tau <= hi; ++tau)
            if (!std::isfinite(out.effective_mass[tau])) throw NoPlateau("energy_gap: effective mass undefined at tau " + std::to_string(tau));
    } else {
        if (!usable(opts.tau_min)) throw NoPlateau("energy_gap: no usable signal at tau_min");
        while (hi + 1 <= last && usable(hi + 1)) ++hi;
    }
    out.tau_min = opts.tau_min;
    out.tau_max = hi;

    // Fixed weights 1/sigma^2 (uniform for exact input); jackknife the average.
    std::vector<double> w(len, 1.0);
    if (noisy)
        for (std::size_t tau = out.tau_min; tau <= hi; ++tau) {
            const double e = out.effective_mass_error[tau];
            w[tau] = e > 0.0 ? 1.0 / (e * e) : 1.0;
        }
    auto average = [&](const std::vector<double>& m) {
        double s = 0.0, ws = 0.0;
        for (std::size_t tau = out.tau_min; tau <= hi; ++tau) {
            s += w[tau] * m[tau];
            ws += w[tau];
        }
        return s / ws;
    };
    out.gap = average(out.effective_mass);

    const std::size_t points = hi - out.tau_min + 1;
    if (noisy) {
        std::vector<double> jk(jk_meff.size());
        for (std::size_t k = 0; k < jk.size(); ++k) jk[k] = average(jk_meff[k]);
        out.error = stats::jackknife_error(jk);
        if (points >= 2) {
            double chi2 = 0.0;
            for (std::size_t tau = out.tau_min; tau <= hi; ++tau) {
                const double d = out.effective_mass[tau] - out.gap;
                chi2 += d * d * w[tau];
            }
            out.chi2_per_dof = chi2 / static_cast<double>(points - 1);
        }
        if (out.chi2_per_dof > opts.chi2_threshold) {
            throw NoPlateau("energy_gap: chi2/dof " + std::to_string(out.chi2_per_dof) + " over window [" +
                            std::to_string(out.tau_min) + ", " + std::to_string(hi) + "]");
        }
    } else {
        double spread = 0.0;
        for (std::size_t tau = out.tau_min; tau <= hi; ++tau) spread = std::max(spread, std::abs(out.effective_mass[tau] - out.gap));
        if (spread > 1e-8 * std::max(1.0, std::abs(out.gap))) {
            throw NoPlateau("energy_gap: exact effective mass varies by " + std::to_string(spread));
        }
    }
    return out;
}

/// Exact <q^2> of the periodic harmonic lattice: hbar/N sum_k 1/lambda_k with
/// lambda_k the eigenvalues of the quadratic form of S.
inline double harmonic_lattice_q2(double m, double omega, double hbar, double a, std::size_t n) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double c = std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
        s += 1.0 / ((m / a) * (2.0 - 2.0 * c) + a * m * omega * omega);
    }
    return hbar * s / static_cast<double>(n);
}

/// Transfer-matrix gap of the lattice oscillator: cosh(a E) = 1 + a^2 omega^2 / 2.
inline double harmonic_lattice_gap(double omega, double a) {
    return std::acosh(1.0 + 0.5 * a * a * omega * omega) / a;
}

struct ScanEntry {
    double hbar = 0.0;
    stats::Estimate variance;
    double acceptance = 0.0;
    double tau_int = 0.0;
};

struct ScanReport {
    std::vector<ScanEntry> entries;
    std::vector<double> ratios; ///< variance[k+1] / variance[k]
    std::vector<std::string> violations;
    bool monotone() const noexcept { return violations.empty(); }
};

/// Path variance around the classical minimum q = 0 for each hbar, all with
/// the same chain seed. A rise beyond 3 combined standard errors is reported
/// as a violation.
inline ScanReport classical_limit_scan(const DiscreteActionSpec& spec, const MetropolisConfig& config,
                                       const std::vector<double>& hbars) {
    require(!hbars.empty(), "classical_limit_scan: need at least one hbar");
    for (std::size_t k = 1; k < hbars.size(); ++k)
        require(hbars[k] <= hbars[k - 1], "classical_limit_scan: hbar values must be non-increasing");

    ScanReport rep;
    for (double h : hbars) {
        DiscreteActionSpec s = spec;
        s.hbar = h;
        const auto ens = metropolis_sample(s, config);
        rep.entries.push_back({h, mean_q2(ens), ens.acceptance_rate(), ens.tau_int});
    }
    for (std::size_t k = 1; k < rep.entries.size(); ++k) {
        const auto& prev = rep.entries[k - 1].variance;
        const auto& cur = rep.entries[k].variance;
        rep.ratios.push_back(cur.value / prev.value);
        const double tol = 3.0 * std::hypot(prev.error, cur.error);
        if (cur.value > prev.value + tol) {
            rep.violations.push_back("variance rises from " + std::to_string(prev.value) + " to " +
                                     std::to_string(cur.value) + " at hbar " + std::to_string(rep.entries[k].hbar));
        }
    }
    return rep;
}

}  // namespace emergence::paths
