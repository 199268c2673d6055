#pragma once

#include "emrate/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace emrate {

/// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double value) noexcept {
        const double t = sum_ + value;
        if (std::abs(sum_) >= std::abs(value))
            correction_ += (sum_ - t) + value;
        else
            correction_ += (value - t) + sum_;
        sum_ = t;
    }
    double value() const noexcept { return sum_ + correction_; }

private:
    double sum_ = 0.0;
    double correction_ = 0.0;
};

inline double mean(const std::vector<double>& xs) {
    if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
    CompensatedSum s;
    for (double x : xs) s.add(x);
    return s.value() / static_cast<double>(xs.size());
}

/// Sample standard deviation (n−1 denominator); NaN for fewer than two values.
inline double sample_sd(const std::vector<double>& xs) {
    if (xs.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    const double m = mean(xs);
    CompensatedSum s;
    for (double x : xs) s.add((x - m) * (x - m));
    return std::sqrt(s.value() / static_cast<double>(xs.size() - 1));
}

/// Linear-interpolated quantile (type 7) of an unsorted sample.
inline double quantile(std::vector<double> xs, double q) {
    if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(xs.begin(), xs.end());
    const double h = q * static_cast<double>(xs.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, xs.size() - 1);
    return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline double median(std::vector<double> xs) { return quantile(std::move(xs), 0.5); }

inline double iqr(const std::vector<double>& xs) { return quantile(xs, 0.75) - quantile(xs, 0.25); }

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};

/// Ordinary least squares y ≈ intercept + slope·x.
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size() && x.size() >= 2, "line fit needs at least two paired points");
    const double mx = mean(x);
    const double my = mean(y);
    CompensatedSum sxx, sxy, syy;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx.add((x[i] - mx) * (x[i] - mx));
        sxy.add((x[i] - mx) * (y[i] - my));
        syy.add((y[i] - my) * (y[i] - my));
    }
    require(sxx.value() > 0.0, "line fit needs distinct x values");
    LineFit fit;
    fit.slope = sxy.value() / sxx.value();
    fit.intercept = my - fit.slope * mx;
    fit.r_squared = syy.value() > 0.0 ? (sxy.value() * sxy.value()) / (sxx.value() * syy.value()) : 1.0;
    return fit;
}

/// Slope of log(y) against log(x).
inline LineFit fit_log_log(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < x.size(); ++i) {
        lx.push_back(std::log(x[i]));
        ly.push_back(std::log(y[i]));
    }
    return fit_line(lx, ly);
}

}  // namespace emrate
