#pragma once

// Seeded, counter-based random streams and low-discrepancy point sets.
//
// Every random draw in the library comes from a CounterRng whose key is a
// hash of (seed, tags...). Draw i of a stream is avalanche(key + i * golden),
// so any sample can be regenerated in isolation and datasets are identical
// regardless of the order (or thread) in which samples are produced.
// Gaussians use the Box-Muller transform; results are bit-exact for a given
// platform libm (std::log / std::cos / std::sin).

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace emrate {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

/// SplitMix64 finalizer.
constexpr std::uint64_t avalanche(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t mix64(std::uint64_t z) noexcept { return avalanche(z + kGolden); }

/// Derives an independent stream key: seed ⊕ mix(tag), folded left over the tags.
template <typename... Tags>
constexpr std::uint64_t derive_seed(std::uint64_t seed, Tags... tags) noexcept {
    ((seed = mix64(seed ^ mix64(static_cast<std::uint64_t>(tags)))), ...);
    return seed;
}

/// Seed namespaces so that datasets, starting points and population proxies never collide.
enum class SeedNamespace : std::uint64_t {
    Sample = 0x53414d50,      // per-sample streams inside a dataset
    Replicate = 0x5245504c,   // experiment replicate datasets
    StartPoint = 0x53545254,  // theta0 directions
    Proxy = 0x50524f58,       // population-proxy datasets
};

class CounterRng {
public:
    explicit CounterRng(std::uint64_t key) noexcept : key_(key) {}

    std::uint64_t next_u64() noexcept { return avalanche(key_ + (++counter_) * kGolden); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller; the second variate of each pair is cached.
    double normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    /// +1 or -1 with equal probability.
    double rademacher() noexcept { return (next_u64() >> 63) ? 1.0 : -1.0; }

    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// First `count` primes.
inline std::vector<unsigned> first_primes(std::size_t count) {
    std::vector<unsigned> primes;
    for (unsigned candidate = 2; primes.size() < count; ++candidate) {
        bool prime = true;
        for (unsigned q : primes) {
            if (q * q > candidate) break;
            if (candidate % q == 0) {
                prime = false;
                break;
            }
        }
        if (prime) primes.push_back(candidate);
    }
    return primes;
}

/// Radical inverse of `index` in `base` (van der Corput / Halton coordinate).
inline double radical_inverse(unsigned base, std::uint64_t index) noexcept {
    double result = 0.0;
    double scale = 1.0 / base;
    while (index > 0) {
        result += static_cast<double>(index % base) * scale;
        index /= base;
        scale /= base;
    }
    return result;
}

/// Quasi-uniform directions on the unit sphere in R^p.
///
/// Point i is a Cranley-Patterson rotated Halton point (bases = first p primes,
/// shift_j = frac(sqrt(prime_j))) pushed through the standard normal quantile and
/// normalized. The sequence is prefix-nested: the first D directions of a larger
/// request are exactly the D directions of a smaller one.
inline std::vector<Eigen::VectorXd> sphere_directions(std::size_t p, std::size_t count) {
    const auto primes = first_primes(p);
    const boost::math::normal_distribution<double> standard;
    std::vector<Eigen::VectorXd> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Eigen::VectorXd z(static_cast<Eigen::Index>(p));
        for (std::size_t j = 0; j < p; ++j) {
            const double shift = std::sqrt(static_cast<double>(primes[j]));
            double u = radical_inverse(primes[j], i) + (shift - std::floor(shift));
            u -= std::floor(u);
            u = std::clamp(u, 1e-12, 1.0 - 1e-12);
            z[static_cast<Eigen::Index>(j)] = boost::math::quantile(standard, u);
        }
        const double norm = z.norm();
        if (norm > 0.0) {
            z /= norm;
        } else {
            z.setZero();
            z[0] = 1.0;
        }
        out.push_back(std::move(z));
    }
    return out;
}

/// Log-spaced radii in (min_fraction * radius, radius), ordered by the base-2
/// van der Corput sequence so that every prefix is itself a spread-out grid.
inline std::vector<double> nested_log_radii(double radius, std::size_t count, double min_fraction) {
    std::vector<double> out;
    out.reserve(count);
    const double inside = radius * (1.0 - 1e-9);  // open ball
    for (std::size_t j = 0; j < count; ++j) {
        out.push_back(inside * std::pow(min_fraction, radical_inverse(2, j)));
    }
    return out;
}

/// Uniformly random unit vector from a seeded stream.
inline Eigen::VectorXd random_unit_vector(std::size_t p, std::uint64_t key) {
    CounterRng rng(key);
    Eigen::VectorXd u(static_cast<Eigen::Index>(p));
    do {
        for (Eigen::Index j = 0; j < u.size(); ++j) u[j] = rng.normal();
    } while (u.norm() == 0.0);
    return u / u.norm();
}

}  // namespace emrate
