#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace emergence {

/// Base of every error the library throws. Callers that only care about
/// "something in the numerics went wrong" can catch this one type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Non-finite value produced by an integrator or sampler.
class DivergedError : public Error {
public:
    using Error::Error;
};

/// Input lies outside the lattice/grid it is supposed to live on.
class DomainError : public Error {
public:
    using Error::Error;
};

using Rng = std::mt19937_64;

/// SplitMix64 finalizer. Used to turn (seed, index) pairs into
/// well-separated seeds for independent streams.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for stream `index` derived from `base`. Depends only on the pair,
/// never on the order in which streams are created.
constexpr std::uint64_t stream_seed(std::uint64_t base, std::uint64_t index) noexcept {
    return splitmix64(splitmix64(base) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng make_stream(std::uint64_t base, std::uint64_t index) {
    return Rng{stream_seed(base, index)};
}

/// Runs fn(i) for i in [0, n) on a few worker threads. Each index must
/// write only to its own output slot so results do not depend on scheduling.
/// If any call throws, the exception from the lowest failing index is
/// rethrown after all workers have stopped.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
    const std::size_t workers = std::min(hw, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::mutex mu;
    std::size_t failed_at = n;
    std::exception_ptr error;
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < n; i += workers) {
                    try {
                        fn(i);
                    } catch (...) {
                        std::lock_guard lock(mu);
                        if (i < failed_at) {
                            failed_at = i;
                            error = std::current_exception();
                        }
                        return;
                    }
                }
            });
        }
    }
    if (error) std::rethrow_exception(error);
}

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
    if (n < 2) throw InvalidArgument("linspace needs at least two points");
    std::vector<double> out(n);
    const double h = (hi - lo) / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) out[i] = lo + h * static_cast<double>(i);
    out.back() = hi;
    return out;
}

inline bool all_finite(std::span<const double> xs) {
    return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

inline void require(bool cond, const std::string& what) {
    if (!cond) throw InvalidArgument(what);
}

}  // namespace emergence
