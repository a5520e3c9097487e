#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "emergence/common.hpp"

namespace emergence::stats {

inline double mean(std::span<const double> xs) {
    require(!xs.empty(), "mean of empty sample");
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// Unbiased sample variance.
inline double variance(std::span<const double> xs) {
    require(xs.size() >= 2, "variance needs at least two samples");
    const double m = mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return s / static_cast<double>(xs.size() - 1);
}

/// Naive standard error of the mean (independent samples).
inline double standard_error(std::span<const double> xs) {
    return std::sqrt(variance(xs) / static_cast<double>(xs.size()));
}

struct Estimate {
    double value = 0.0;
    double error = 0.0;
};

/// Means of consecutive blocks of length `block`; a trailing partial block
/// is dropped.
inline std::vector<double> block_means(std::span<const double> xs, std::size_t block) {
    require(block >= 1, "block length must be positive");
    const std::size_t nb = xs.size() / block;
    std::vector<double> out(nb);
    for (std::size_t b = 0; b < nb; ++b) {
        double s = 0.0;
        for (std::size_t i = 0; i < block; ++i) s += xs[b * block + i];
        out[b] = s / static_cast<double>(block);
    }
    return out;
}

/// Mean with the error from the scatter of block means.
inline Estimate binned_mean(std::span<const double> xs, std::size_t block) {
    const auto bm = block_means(xs, block);
    require(bm.size() >= 2, "binned_mean: fewer than two blocks");
    return {mean(xs.first(bm.size() * block)), standard_error(bm)};
}

/// Jackknife over blocks: `samples[b]` are the leave-one-out estimates.
inline double jackknife_error(std::span<const double> samples) {
    const std::size_t n = samples.size();
    require(n >= 2, "jackknife needs at least two samples");
    const double m = mean(samples);
    double s = 0.0;
    for (double x : samples) s += (x - m) * (x - m);
    return std::sqrt(static_cast<double>(n - 1) / static_cast<double>(n) * s);
}

/// Integrated autocorrelation time with the automatic window of Madras and
/// Sokal (window W is the first with W >= c * tau(W)).
inline double integrated_autocorrelation_time(std::span<const double> xs, double c = 6.0) {
    const std::size_t n = xs.size();
    require(n >= 4, "autocorrelation needs at least four samples");
    const double m = mean(xs);
    double c0 = 0.0;
    for (double x : xs) c0 += (x - m) * (x - m);
    c0 /= static_cast<double>(n);
    if (c0 == 0.0) return 0.5;
    double tau = 0.5;
    for (std::size_t w = 1; w < n / 2; ++w) {
        double cw = 0.0;
        for (std::size_t i = 0; i + w < n; ++i) cw += (xs[i] - m) * (xs[i + w] - m);
        cw /= static_cast<double>(n - w);
        tau += cw / c0;
        if (static_cast<double>(w) >= c * tau) break;
    }
    return std::max(tau, 0.5);
}

/// Autocorrelation of xs at lag `lag`, normalized by the lag-0 value.
inline double autocorrelation(std::span<const double> xs, std::size_t lag) {
    const std::size_t n = xs.size();
    require(lag < n, "autocorrelation lag exceeds sample length");
    const double m = mean(xs);
    double c0 = 0.0, cl = 0.0;
    for (std::size_t i = 0; i < n; ++i) c0 += (xs[i] - m) * (xs[i] - m);
    for (std::size_t i = 0; i + lag < n; ++i) cl += (xs[i] - m) * (xs[i + lag] - m);
    return (cl / static_cast<double>(n - lag)) / (c0 / static_cast<double>(n));
}

/// Least-squares slope of y against x.
inline double linear_slope(std::span<const double> x, std::span<const double> y) {
    require(x.size() == y.size() && x.size() >= 2, "linear_slope: need matching samples");
    const double mx = mean(x), my = mean(y);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    return sxy / sxx;
}

}  // namespace emergence::stats
