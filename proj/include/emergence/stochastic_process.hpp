#pragma once

// Langevin dynamics dx/dt = -beta(x) + f(t) with delta-correlated Gaussian
// forcing, ensemble simulation, Kramers-Moyal coefficient estimation, and the
// random action process dS/dt = -E - eps(t).
//
// Noise convention: increments over dt have variance 2 D dt, so that the
// ensemble density obeys dP/dt = d/dx [beta P + D dP/dx] exactly as written
// in fokker_planck.hpp.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "emergence/common.hpp"

namespace emergence::stochastic {

/// The slow drift beta(x). Positive beta pushes x downwards.
struct DriftField {
    enum class Kind { zero, linear, cubic, constant };
    Kind kind = Kind::zero;
    double gamma = 0.0;

    static DriftField zero() { return {Kind::zero, 0.0}; }
    static DriftField linear(double gamma) { return {Kind::linear, gamma}; }
    static DriftField cubic(double gamma) { return {Kind::cubic, gamma}; }
    static DriftField constant(double value) { return {Kind::constant, value}; }

    static DriftField parse(const std::string& name, double gamma) {
        if (name == "zero") return zero();
        if (name == "linear") return linear(gamma);
        if (name == "cubic") return cubic(gamma);
        if (name == "constant") return constant(gamma);
        throw InvalidArgument("unknown drift '" + name + "' (expected zero|linear|cubic|constant)");
    }

    double operator()(double x) const noexcept {
        switch (kind) {
            case Kind::zero: return 0.0;
            case Kind::linear: return gamma * x;
            case Kind::cubic: return gamma * x * x * x;
            case Kind::constant: return gamma;
        }
        return 0.0;
    }

    std::string name() const {
        switch (kind) {
            case Kind::zero: return "zero";
            case Kind::linear: return "linear";
            case Kind::cubic: return "cubic";
            case Kind::constant: return "constant";
        }
        return "?";
    }
};

struct NoiseSpec {
    double diffusion = 0.0; ///< D
    std::uint64_t seed = 0;

    void validate() const { require(diffusion >= 0.0 && std::isfinite(diffusion), "NoiseSpec: D must be >= 0"); }
};

/// A uniform random stream plus a standard normal sampler over it.
class NoiseStream {
public:
    explicit NoiseStream(std::uint64_t seed) : rng_(seed) {}
    explicit NoiseStream(Rng rng) : rng_(std::move(rng)) {}

    double gaussian() { return normal_(rng_); }
    Rng& engine() noexcept { return rng_; }

private:
    Rng rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Euler-Maruyama step: x - beta(x) dt + sqrt(2 D dt) xi.
inline double langevin_step(const DriftField& drift, const NoiseSpec& noise, double x, double dt, NoiseStream& rng) {
    require(dt > 0.0, "langevin_step: dt must be positive");
    noise.validate();
    double next = x - drift(x) * dt;
    if (noise.diffusion > 0.0) next += std::sqrt(2.0 * noise.diffusion * dt) * rng.gaussian();
    if (!std::isfinite(next)) throw DivergedError("langevin_step: non-finite position");
    return next;
}

struct EnsembleQuality {
    std::size_t requested = 0;
    std::size_t excluded = 0;
    std::vector<std::size_t> excluded_indices;

    double excluded_fraction() const noexcept {
        return requested == 0 ? 0.0 : static_cast<double>(excluded) / static_cast<double>(requested);
    }
};

/// Trajectories recorded on a shared time grid. Values are row-major:
/// trajectory j, record k at values[j * n_records + k].
struct EnsembleSample {
    double dt = 0.0;                 ///< integration step
    std::size_t record_every = 1;    ///< steps between stored records
    double t0 = 0.0;
    std::size_t n_records = 0;
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> stream_ids; ///< per kept trajectory
    std::vector<double> values;
    EnsembleQuality quality;

    std::size_t n_traj() const noexcept { return stream_ids.size(); }
    double record_dt() const noexcept { return dt * static_cast<double>(record_every); }
    double time(std::size_t k) const noexcept { return t0 + record_dt() * static_cast<double>(k); }
    double at(std::size_t traj, std::size_t k) const { return values[traj * n_records + k]; }

    /// Index of the record closest to time t.
    std::size_t record_index(double t) const {
        const double r = (t - t0) / record_dt();
        const auto k = std::llround(r);
        if (k < 0 || static_cast<std::size_t>(k) >= n_records || std::abs(r - static_cast<double>(k)) > 1e-6) {
            throw DomainError("ensemble has no record at t = " + std::to_string(t));
        }
        return static_cast<std::size_t>(k);
    }

    std::vector<double> snapshot(std::size_t k) const {
        std::vector<double> out(n_traj());
        for (std::size_t j = 0; j < n_traj(); ++j) out[j] = at(j, k);
        return out;
    }
};

struct EnsembleOptions {
    std::size_t record_every = 1;
    /// Reflect at this wall (x < wall becomes 2 wall - x).
    std::optional<double> reflect_below;
};

/// n_traj independent Euler-Maruyama trajectories. Trajectory j draws from
/// stream stream_seed(noise.seed, j), so results do not depend on threading.
/// Trajectories that leave the finite numbers are dropped and counted.
inline EnsembleSample simulate_ensemble(const DriftField& drift, const NoiseSpec& noise, double x0, double t_end,
                                        double dt, std::size_t n_traj, const EnsembleOptions& opts = {}) {
    noise.validate();
    require(n_traj >= 1, "simulate_ensemble: n_traj must be >= 1");
    require(dt > 0.0, "simulate_ensemble: dt must be positive");
    require(t_end > 0.0, "simulate_ensemble: t_end must be positive");
    require(opts.record_every >= 1, "simulate_ensemble: record_every must be >= 1");

    const auto steps = static_cast<std::size_t>(std::llround(t_end / dt));
    require(steps >= 1, "simulate_ensemble: t_end shorter than one step");
    require(steps % opts.record_every == 0, "simulate_ensemble: record_every must divide the step count");
    const std::size_t n_rec = steps / opts.record_every + 1;

    std::vector<double> buffer(n_traj * n_rec);
    std::vector<char> ok(n_traj, 1);
    const double sigma = std::sqrt(2.0 * noise.diffusion * dt);

    parallel_for(n_traj, [&](std::size_t j) {
        NoiseStream rng(stream_seed(noise.seed, j));
        double* row = buffer.data() + j * n_rec;
        double x = x0;
        row[0] = x;
        for (std::size_t s = 1; s <= steps; ++s) {
            x -= drift(x) * dt;
            if (sigma > 0.0) x += sigma * rng.gaussian();
            if (opts.reflect_below && x < *opts.reflect_below) x = 2.0 * *opts.reflect_below - x;
            if (!std::isfinite(x)) {
                ok[j] = 0;
                return;
            }
            if (s % opts.record_every == 0) row[s / opts.record_every] = x;
        }
    });

    EnsembleSample out;
    out.dt = dt;
    out.record_every = opts.record_every;
    out.n_records = n_rec;
    out.seed = noise.seed;
    out.quality.requested = n_traj;
    out.values.reserve(n_traj * n_rec);
    for (std::size_t j = 0; j < n_traj; ++j) {
        if (!ok[j]) {
            out.quality.excluded_indices.push_back(j);
            continue;
        }
        out.stream_ids.push_back(j);
        out.values.insert(out.values.end(), buffer.begin() + static_cast<std::ptrdiff_t>(j * n_rec),
                          buffer.begin() + static_cast<std::ptrdiff_t>((j + 1) * n_rec));
    }
    out.quality.excluded = out.quality.excluded_indices.size();
    return out;
}

struct KMBin {
    double center = 0.0;
    double a1 = 0.0, a1_se = 0.0;
    double a2 = 0.0, a2_se = 0.0;
    double a3 = 0.0, a3_se = 0.0;
    std::size_t count = 0;
};

struct KMCoefficients {
    double lag_time = 0.0;
    double lower = 0.0, upper = 0.0; ///< binned range
    std::vector<KMBin> bins;
};

struct KMOptions {
    std::size_t min_count = 100;
    double coverage = 0.95; ///< central fraction of starting points that is binned
};

/// Conditional moments of increments over lag * record_dt, binned by the
/// starting position:
///   a1 = <dx> / dt,  a2 = <(dx - <dx>)^2> / (2 dt),  a3 = <(dx - <dx>)^3> / dt.
/// a2 and a3 use central moments, which removes the beta^2 dt^2 piece of the
/// raw second moment (it is not first order in dt). Standard errors treat
/// pairs as independent, which holds for lag 1.
inline KMCoefficients estimate_km_coefficients(const EnsembleSample& ens, std::size_t lag, std::size_t bins,
                                               const KMOptions& opts = {}) {
    require(ens.n_records >= 2, "estimate_km_coefficients: need at least two time points");
    require(lag >= 1 && lag < ens.n_records, "estimate_km_coefficients: lag out of range");
    require(bins >= 1, "estimate_km_coefficients: need at least one bin");
    require(opts.coverage > 0.0 && opts.coverage <= 1.0, "estimate_km_coefficients: coverage in (0, 1]");

    const std::size_t starts = ens.n_records - lag;
    std::vector<double> x;
    x.reserve(ens.n_traj() * starts);
    for (std::size_t j = 0; j < ens.n_traj(); ++j)
        for (std::size_t k = 0; k < starts; ++k) x.push_back(ens.at(j, k));
    require(!x.empty(), "estimate_km_coefficients: ensemble is empty");

    const double tail = 0.5 * (1.0 - opts.coverage);
    auto quantile = [&x](double q) {
        std::vector<double> tmp = x;
        const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(tmp.size() - 1)));
        std::nth_element(tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(idx), tmp.end());
        return tmp[idx];
    };
    KMCoefficients out;
    out.lag_time = ens.record_dt() * static_cast<double>(lag);
    out.lower = quantile(tail);
    out.upper = quantile(1.0 - tail);
    if (!(out.upper > out.lower)) return out;
    const double width = (out.upper - out.lower) / static_cast<double>(bins);

    auto bin_of = [&](double v) -> std::ptrdiff_t {
        if (v < out.lower || v > out.upper) return -1;
        auto b = static_cast<std::ptrdiff_t>((v - out.lower) / width);
        return std::min<std::ptrdiff_t>(b, static_cast<std::ptrdiff_t>(bins) - 1);
    };

    std::vector<std::size_t> n(bins, 0);
    std::vector<double> sum(bins, 0.0);
    for (std::size_t j = 0; j < ens.n_traj(); ++j) {
        for (std::size_t k = 0; k < starts; ++k) {
            const auto b = bin_of(ens.at(j, k));
            if (b < 0) continue;
            ++n[b];
            sum[b] += ens.at(j, k + lag) - ens.at(j, k);
        }
    }
    std::vector<double> mu(bins, 0.0);
    for (std::size_t b = 0; b < bins; ++b) mu[b] = n[b] ? sum[b] / static_cast<double>(n[b]) : 0.0;

    // Central moments 2..6 per bin.
    std::vector<std::array<double, 5>> m(bins, {0, 0, 0, 0, 0});
    for (std::size_t j = 0; j < ens.n_traj(); ++j) {
        for (std::size_t k = 0; k < starts; ++k) {
            const auto b = bin_of(ens.at(j, k));
            if (b < 0) continue;
            const double d = ens.at(j, k + lag) - ens.at(j, k) - mu[b];
            const double d2 = d * d;
            m[b][0] += d2;
            m[b][1] += d2 * d;
            m[b][2] += d2 * d2;
            m[b][3] += d2 * d2 * d;
            m[b][4] += d2 * d2 * d2;
        }
    }

    const double tau = out.lag_time;
    for (std::size_t b = 0; b < bins; ++b) {
        if (n[b] == 0 || n[b] < opts.min_count) continue;
        const double cnt = static_cast<double>(n[b]);
        const double m2 = m[b][0] / cnt, m3 = m[b][1] / cnt, m4 = m[b][2] / cnt, m6 = m[b][4] / cnt;
        KMBin bin;
        bin.center = out.lower + width * (static_cast<double>(b) + 0.5);
        bin.count = n[b];
        bin.a1 = mu[b] / tau;
        bin.a1_se = std::sqrt(m2 / cnt) / tau;
        bin.a2 = m2 / (2.0 * tau);
        bin.a2_se = std::sqrt(std::max(m4 - m2 * m2, 0.0) / cnt) / (2.0 * tau);
        bin.a3 = m3 / tau;
        bin.a3_se = std::sqrt(std::max(m6 - m3 * m3 - 6.0 * m4 * m2 + 9.0 * m2 * m2 * m2, 0.0) / cnt) / tau;
        out.bins.push_back(bin);
    }
    return out;
}

/// Parameters of the perturbed closed system H = E + eps(t) with
/// <eps(t) eps(t')> = hbar E delta(t - t').
struct PerturbationSpec {
    double energy = 1.0; ///< E
    double hbar = 0.1;
    double dt = 1e-3;

    void validate() const {
        require(energy > 0.0 && std::isfinite(energy), "PerturbationSpec: E must be positive");
        require(hbar >= 0.0 && std::isfinite(hbar), "PerturbationSpec: hbar must be >= 0");
        require(dt > 0.0, "PerturbationSpec: dt must be positive");
    }

    /// The action process is a Langevin process with constant drift E and
    /// diffusion hbar E.
    DriftField drift() const { return DriftField::constant(energy); }
    NoiseSpec noise(std::uint64_t seed) const { return {hbar * energy, seed}; }
};

/// One realization of S(t), S(0) = 0, dS = -E dt + eta, Var(eta) = 2 hbar E dt.
/// The drift is applied as -E t_k rather than accumulated, so hbar = 0 gives
/// S(t_k) = -E t_k exactly.
inline std::vector<double> action_process(const PerturbationSpec& p, double t_end, NoiseStream& rng) {
    p.validate();
    require(t_end > 0.0, "action_process: t_end must be positive");
    const auto steps = static_cast<std::size_t>(std::llround(t_end / p.dt));
    require(steps >= 1, "action_process: t_end shorter than one step");
    const double sigma = std::sqrt(2.0 * p.hbar * p.energy * p.dt);

    std::vector<double> s(steps + 1);
    double noise = 0.0;
    s[0] = 0.0;
    for (std::size_t k = 1; k <= steps; ++k) {
        if (sigma > 0.0) noise += sigma * rng.gaussian();
        s[k] = -p.energy * (p.dt * static_cast<double>(k)) + noise;
        if (!std::isfinite(s[k])) throw DivergedError("action_process: non-finite action");
    }
    return s;
}

/// Ensemble of action processes started at S = 0. With `reflect_at_zero`
/// the process lives on S >= 0, matching a zero-flux wall at the minimum.
inline EnsembleSample simulate_action_ensemble(const PerturbationSpec& p, double t_end, std::size_t n_traj,
                                               std::uint64_t seed, std::size_t record_every = 1,
                                               bool reflect_at_zero = false) {
    p.validate();
    EnsembleOptions opts;
    opts.record_every = record_every;
    if (reflect_at_zero) opts.reflect_below = 0.0;
    return simulate_ensemble(p.drift(), p.noise(seed), 0.0, t_end, p.dt, n_traj, opts);
}

}  // namespace emergence::stochastic
