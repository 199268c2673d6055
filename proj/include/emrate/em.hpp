#pragma once

#include "emrate/format.hpp"
#include "emrate/model.hpp"
#include "emrate/stats.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace emrate {

enum class StopReason { MaxIters, ParamTol };

inline std::string to_string(StopReason reason) { return reason == StopReason::MaxIters ? "max_iters" : "param_tol"; }

struct EMSettings {
    std::size_t max_iters = 500;
    double param_tol = 1e-10;
    /// Outer radius R for the diagnostic "iterate left B_R(θ*)" flag; infinite by default.
    double outer_radius = std::numeric_limits<double>::infinity();
};

struct EMTrajectory {
    std::vector<Vector> iterates;      // θ⁰..θᵀ
    std::vector<double> errors;        // ‖θᵗ−θ*‖
    std::vector<double> q_gains;       // Qₙ(θᵗ⁺¹|θᵗ) − Qₙ(θᵗ|θᵗ), one per step
    std::vector<double> loglik;        // Lₙ(θᵗ)
    std::uint64_t dataset_seed = 0;
    StopReason stopped_reason = StopReason::MaxIters;
    bool exited_ball = false;

    std::size_t steps() const { return q_gains.size(); }
};

inline EMTrajectory run_em(const Dataset& data, const Vector& theta0, const EMSettings& settings = {}) {
    const ModelSpec& model = data.model;
    check_dim(model, theta0, "theta0");
    require(settings.max_iters >= 1, "max_iters must be >= 1");
    require(settings.param_tol >= 0.0, "param_tol must be >= 0");
    require(settings.outer_radius > 0.0, "outer radius must be > 0");

    EMTrajectory traj;
    traj.dataset_seed = data.seed;
    auto record = [&](const Vector& theta) {
        traj.iterates.push_back(theta);
        const double err = (theta - model.theta_star).norm();
        traj.errors.push_back(err);
        if (err > settings.outer_radius) traj.exited_ball = true;
        traj.loglik.push_back(log_likelihood(data, theta));
    };
    record(theta0);
    for (std::size_t t = 0; t < settings.max_iters; ++t) {
        const Vector& current = traj.iterates.back();
        Vector next;
        try {
            next = m_step(data, current);
        } catch (const SingularSystem& e) {
            throw SingularSystem("M-step system is singular or ill-conditioned", t);
        }
        traj.q_gains.push_back(q_n_value(data, next, current) - q_n_value(data, current, current));
        const double change = (next - current).norm();
        record(next);
        if (change <= settings.param_tol) {
            traj.stopped_reason = StopReason::ParamTol;
            return traj;
        }
    }
    traj.stopped_reason = StopReason::MaxIters;
    return traj;
}

inline EMTrajectory run_em(const ModelSpec& model, const Dataset& data, const Vector& theta0, std::size_t max_iters,
                           double param_tol) {
    require(model.kind == data.model.kind && model.p() == data.p(), "model does not match dataset");
    EMSettings settings;
    settings.max_iters = max_iters;
    settings.param_tol = param_tol;
    return run_em(data, theta0, settings);
}

/// What the fitted error sequence measures distance to.
enum class ErrorReference {
    TrueParameter,  // ‖θᵗ−θ*‖
    FinalIterate,   // ‖θᵗ−θᵀ‖, distance to the point EM converged to
};

inline std::string to_string(ErrorReference ref) {
    return ref == ErrorReference::TrueParameter ? "true_parameter" : "final_iterate";
}

inline ErrorReference parse_error_reference(const std::string& text) {
    if (text == "true_parameter") return ErrorReference::TrueParameter;
    if (text == "final_iterate") return ErrorReference::FinalIterate;
    throw InvalidArgument("unknown rate reference '" + text + "' (expected true_parameter or final_iterate)");
}

struct RateOptions {
    double tail_fraction = 0.2;
    double floor_multiplier = 3.0;
    ErrorReference reference = ErrorReference::TrueParameter;
};

struct RateEstimate {
    double rate = std::numeric_limits<double>::quiet_NaN();
    double floor = 0.0;
    std::size_t fit_first = 0;
    std::size_t fit_last = 0;
    double r_squared = 0.0;
    ErrorReference reference = ErrorReference::TrueParameter;
};

/// Fits log error ≈ a + t·log(rate) over the prefix of errors above the floor.
/// The floor is the median of the trailing `tail_fraction` of the sequence.
inline RateEstimate estimate_rate_from_errors(const std::vector<double>& errors, const RateOptions& options = {}) {
    require(errors.size() >= 5, "rate estimation needs at least 5 iterates");
    require(options.tail_fraction > 0.0 && options.tail_fraction <= 1.0, "tail_fraction must lie in (0, 1]");
    require(options.floor_multiplier >= 1.0, "floor_multiplier must be >= 1");
    const auto count = errors.size();
    const auto tail = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(options.tail_fraction * count)));
    RateEstimate est;
    est.reference = options.reference;
    est.floor = median(std::vector<double>(errors.end() - static_cast<std::ptrdiff_t>(tail), errors.end()));
    const double threshold = options.floor_multiplier * est.floor;
    std::size_t window = 0;
    while (window < count && errors[window] > threshold && errors[window] > 0.0) ++window;
    if (window < 3)
        throw TooFewPoints("only " + std::to_string(window) + " error(s) above " +
                           format_double(options.floor_multiplier) + "x the floor; need 3");
    std::vector<double> t, log_err;
    for (std::size_t i = 0; i < window; ++i) {
        t.push_back(static_cast<double>(i));
        log_err.push_back(std::log(errors[i]));
    }
    const LineFit fit = fit_line(t, log_err);
    est.rate = std::exp(fit.slope);
    est.fit_first = 0;
    est.fit_last = window - 1;
    est.r_squared = fit.r_squared;
    return est;
}

/// Error sequence of a trajectory relative to the chosen reference point.
/// The final-iterate reference drops the last iterate, whose distance is zero.
inline std::vector<double> reference_errors(const EMTrajectory& traj, ErrorReference reference) {
    if (reference == ErrorReference::TrueParameter) return traj.errors;
    std::vector<double> out;
    const Vector& last = traj.iterates.back();
    for (std::size_t t = 0; t + 1 < traj.iterates.size(); ++t) out.push_back((traj.iterates[t] - last).norm());
    return out;
}

inline RateEstimate estimate_rate(const EMTrajectory& traj, const RateOptions& options = {}) {
    return estimate_rate_from_errors(reference_errors(traj, options.reference), options);
}

/// CSV with columns t, error, loglik, q_gain (gain of the step leaving t), and optionally theta_j.
inline void write_trajectory_csv(std::ostream& out, const EMTrajectory& traj, bool with_iterates = false) {
    out << "t,error,loglik,q_gain";
    const std::size_t p = traj.iterates.empty() ? 0 : static_cast<std::size_t>(traj.iterates.front().size());
    if (with_iterates)
        for (std::size_t j = 0; j < p; ++j) out << ",theta_" << j;
    out << '\n';
    for (std::size_t t = 0; t < traj.iterates.size(); ++t) {
        out << t << ',' << format_double(traj.errors[t]) << ',' << format_double(traj.loglik[t]) << ',';
        if (t < traj.q_gains.size()) out << format_double(traj.q_gains[t]);
        if (with_iterates)
            for (std::size_t j = 0; j < p; ++j) out << ',' << format_double(traj.iterates[t][static_cast<Eigen::Index>(j)]);
        out << '\n';
    }
}

}  // namespace emrate
