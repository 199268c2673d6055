#pragma once

// Population-level quantities: closed-form contraction bounds, Monte-Carlo
// estimates from a large "population proxy" dataset, exact RMC expectations
// for a fixed missing pattern, concentration-bound shapes and sample-size checks.
//
// Absolute constants (c, C1..C4, the MLR exponent slack) are unknown; the
// defaults fix the bound shapes only and are not meant as calibrated values.

#include "emrate/model.hpp"
#include "emrate/rates.hpp"
#include "emrate/stats.hpp"

#include "json.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>

namespace emrate {

struct BoundConstants {
    double c = 1.0;
    double C1 = 1.0;
    double C2 = 1.0;
    double C3 = 1.0;
    double C4 = 1.0;
    double mlr_exponent_slack = 0.01;  // n^{1/2 − slack} in the MLR gradient bound
};

enum class Provenance { ClosedFormBound, MonteCarloEstimate };

inline std::string to_string(Provenance p) {
    return p == Provenance::ClosedFormBound ? "closed_form_bound" : "monte_carlo_estimate";
}

struct ContractionParams {
    double gamma = 0.0;
    double nu = 0.0;
    double kappa = 0.0;
    Provenance provenance = Provenance::ClosedFormBound;
    std::optional<double> mc_stderr;
    bool nu_exact = true;

    bool is_contraction() const { return kappa < 1.0; }
};

/// Closed-form (γ, ν) for the model on B_r(θ*); throws OutOfRegime outside the validity domain.
inline ContractionParams closed_form_bounds(const ModelSpec& model, const BallSpec& ball, const BoundConstants& k = {}) {
    model.validate();
    ball.validate();
    const double norm = model.theta_star.norm();
    if (!(norm > 0.0)) throw OutOfRegime("closed-form bounds need theta_star != 0");
    const double s2 = model.sigma * model.sigma;
    const double eta = model.snr();
    const double omega = ball.r / norm;
    ContractionParams out;
    out.provenance = Provenance::ClosedFormBound;
    switch (model.kind) {
        case ModelKind::GMM:
            if (omega > 0.25) throw OutOfRegime("gmm bound needs r <= |theta_star|/4 (omega = " + format_double(omega) + ")");
            out.gamma = std::exp(-k.c * eta * eta) / s2;
            out.nu = 1.0 / (2.0 * s2);
            break;
        case ModelKind::MLR:
            if (omega > 0.25) throw OutOfRegime("mlr bound needs omega = r/|theta_star| <= 1/4 (omega = " + format_double(omega) + ")");
            out.gamma = (7.3 * omega + 17.0 / eta) / s2;
            out.nu = 1.0 / (2.0 * s2);
            break;
        case ModelKind::RMC: {
            const double eps = model.epsilon_miss;
            const double lower = 1.0 / std::sqrt(1.0 + omega);
            const double upper = eps > 0.0 ? 1.0 / (3.0 * (1.0 + omega) * std::pow(eps, 0.25)) : std::numeric_limits<double>::infinity();
            if (!(eta > lower && eta < upper))
                throw OutOfRegime("rmc bound needs 1/sqrt(1+omega) < snr < 1/(3(1+omega)eps^(1/4)); got snr = " +
                                  format_double(eta) + ", window (" + format_double(lower) + ", " + format_double(upper) + ")");
            const double xi = (1.0 + omega) * eta * eta;
            const double spread = std::sqrt(eps * (1.0 - eps));
            out.gamma = ((omega * xi * xi + (3.0 * omega + 2.0) * xi + 1.0) * eps + xi * spread) / s2;
            out.nu = (1.0 - 2.0 * omega * xi * spread - (1.0 + omega) * xi * eps) / (2.0 * s2);
            if (!(out.nu > 0.0)) throw OutOfRegime("rmc concavity bound is not positive");
            break;
        }
    }
    out.kappa = out.gamma / out.nu;
    return out;
}

/// Large dataset standing in for the population, drawn from its own seed namespace.
inline Dataset population_proxy(const ModelSpec& model, std::size_t n_mc, std::uint64_t seed, std::size_t threads = 1) {
    return sample_dataset(model, n_mc, derive_seed(seed, static_cast<std::uint64_t>(SeedNamespace::Proxy), n_mc), threads);
}

/// Standard error of ‖mean Γ(θ)‖/‖θ−θ*‖, using the projection of each
/// per-sample GRV onto the direction of the mean.
inline double grv_ratio_stderr(const Dataset& data, const Vector& theta) {
    const Vector offset = theta - data.model.theta_star;
    const double dist = offset.norm();
    if (!(dist > 0.0)) return 0.0;
    const Vector mean_grv = empirical_grv(data, theta);
    const double mean_norm = mean_grv.norm();
    const Vector u = mean_norm > 0.0 ? Vector(mean_grv / mean_norm) : Vector(Vector::Unit(offset.size(), 0));
    std::vector<double> proj(data.n());
    for (std::size_t k = 0; k < data.n(); ++k)
        proj[k] = per_sample_quantities(data.model, data.model.theta_star, theta, data.sample(k)).grv.dot(u);
    return sample_sd(proj) / std::sqrt(static_cast<double>(data.n())) / dist;
}

struct PopulationEstimate {
    ContractionParams params;
    Vector argmax;
    std::vector<std::string> warnings;
};

/// Monte-Carlo estimate of γ̄ = sup ‖E Γ(θ)‖/‖θ−θ*‖ over the punctured ball, by
/// running the empirical search on a population proxy. ν̄ is exact for GMM and
/// MLR (1/(2σ²)) and a proxy search value for RMC.
inline PopulationEstimate mc_population_grv_bound(const ModelSpec& model, const BallSpec& ball, std::size_t n_mc,
                                                  const SearchBudget& budget = {}, std::uint64_t seed = 0,
                                                  bool with_stderr = true) {
    require(n_mc >= 1, "n_mc must be >= 1");
    const Dataset proxy = population_proxy(model, n_mc, seed, budget.threads);
    const GammaSearch gamma = search_gamma_bar_n(proxy, ball, budget);
    PopulationEstimate out;
    out.params.provenance = Provenance::MonteCarloEstimate;
    out.params.gamma = gamma.value;
    out.argmax = gamma.argmax;
    out.warnings = gamma.warnings;
    const double s2 = model.sigma * model.sigma;
    if (model.kind == ModelKind::RMC) {
        const VSearch v = search_v_bar_n(proxy, ball, budget);
        out.params.nu = v.value;
        out.params.nu_exact = false;
        out.warnings.insert(out.warnings.end(), v.warnings.begin(), v.warnings.end());
    } else {
        out.params.nu = 1.0 / (2.0 * s2);
    }
    out.params.kappa = out.params.gamma / out.params.nu;
    if (with_stderr && budget.directions > 0) {
        const double se = grv_ratio_stderr(proxy, gamma.argmax);
        out.params.mc_stderr = se;
    } else {
        out.params.mc_stderr = 0.0;
    }
    return out;
}

struct RmcPopulationMoments {
    Matrix e_sigma;  // E Σ_θ for the fixed pattern
    Vector e_grv;    // E Γ(θ) for the fixed pattern
};

/// Exact expectations over (Y, X_s) for a fixed observation mask (1 = observed).
inline RmcPopulationMoments rmc_population_moments(const ModelSpec& model, const Vector& theta, const Vector& mask) {
    require(model.kind == ModelKind::RMC, "population moments are defined only for the rmc model");
    check_dim(model, theta, "theta");
    check_dim(model, mask, "mask");
    const Vector& truth = model.theta_star;
    const auto p = truth.size();
    const Vector missing = Vector::Ones(p) - mask;
    const Vector th_m = theta.cwiseProduct(missing);
    const Vector th_o = theta.cwiseProduct(mask);
    const Vector tr_m = truth.cwiseProduct(missing);
    const Vector tr_o = truth.cwiseProduct(mask);
    const double s2 = model.sigma * model.sigma;
    const double denom = s2 + th_m.squaredNorm();
    const Vector gap_o = tr_o - th_o;

    RmcPopulationMoments out;
    out.e_sigma = Matrix::Identity(p, p);
    out.e_sigma += (th_m * gap_o.transpose() + gap_o * th_m.transpose()) / denom;
    out.e_sigma += ((tr_m.squaredNorm() - th_m.squaredNorm() + gap_o.squaredNorm()) / (denom * denom)) * th_m * th_m.transpose();

    const double overlap = th_m.dot(tr_m);
    const double zeta = (denom - overlap) * (tr_m.squaredNorm() - th_m.squaredNorm()) - overlap * gap_o.squaredNorm();
    out.e_grv = (th_m - tr_m + (overlap / denom) * (th_o - tr_o) + (zeta / (denom * denom)) * th_m) / s2;
    return out;
}

struct EpsilonBounds {
    double eps1 = 0.0;
    double eps2 = 0.0;
    double eps_s = 0.0;
    double delta = 0.05;
    double log_l_over_delta = 0.0;
    std::size_t n = 0;
    BoundConstants constants;
    // Filled when contraction parameters are supplied.
    std::optional<double> gamma_n;
    std::optional<double> nu_n;
    std::optional<double> kappa_n;
};

/// log(L/δ) with the covering-number bound L < 5^p.
inline double log_cover_over_delta(std::size_t p, double delta) {
    return static_cast<double>(p) * std::log(5.0) + std::log(1.0 / delta);
}

/// C(ω, η) multiplying the RMC gradient concentration bound.
inline double rmc_gradient_constant(double omega, double eta, const BoundConstants& k) {
    const double a = eta * (1.0 + eta) * (2.0 + omega) + 1.0;
    return k.C1 * a * eta * (1.0 + eta) * (1.0 + omega) + k.C2 * a * (1.0 + omega) * eta * eta +
           k.C3 * ((1.0 + omega) * eta * eta + 1.0) * (2.0 + omega) * eta * eta;
}

inline EpsilonBounds epsilon_bounds(const ModelSpec& model, double delta, const BallSpec& ball, std::size_t n,
                                    const BoundConstants& k = {},
                                    const std::optional<ContractionParams>& params = std::nullopt) {
    model.validate();
    ball.validate();
    require(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
    require(n >= 1, "n must be >= 1");
    EpsilonBounds out;
    out.delta = delta;
    out.n = n;
    out.constants = k;
    const double nn = static_cast<double>(n);
    const double s2 = model.sigma * model.sigma;
    const double eta = model.snr();
    const double log_ld = log_cover_over_delta(model.p(), delta);
    out.log_l_over_delta = log_ld;
    const double root = std::sqrt(log_ld / nn);
    switch (model.kind) {
        case ModelKind::GMM: {
            const double scale = model.scale();
            out.eps1 = k.C1 * (scale * scale / s2) * root;
            out.eps2 = 0.0;
            out.eps_s = k.C2 * (scale / s2) * root;
            break;
        }
        case ModelKind::MLR:
            out.eps1 = (k.C1 / s2) * log_ld / std::pow(nn, 0.5 - k.mlr_exponent_slack);
            out.eps2 = (k.C2 / s2) * std::sqrt(std::log(1.0 / delta) / nn);
            out.eps_s = (k.C3 / model.sigma) * (1.0 + 2.0 * eta) * root;
            break;
        case ModelKind::RMC: {
            const double norm = model.theta_star.norm();
            const double omega = norm > 0.0 ? ball.r / norm : 0.0;
            out.eps1 = (rmc_gradient_constant(omega, eta, k) / s2) * root;
            out.eps2 = (k.C1 / s2) * root;
            out.eps_s = k.C2 * (1.0 + eta) / model.sigma * root;
            break;
        }
    }
    if (params) {
        out.gamma_n = params->gamma + out.eps1;
        out.nu_n = params->nu - out.eps2;
        out.kappa_n = *out.nu_n > 0.0 ? *out.gamma_n / *out.nu_n : std::numeric_limits<double>::infinity();
    }
    return out;
}

struct ConditionCheck {
    std::string name;
    bool satisfied = false;
    double margin = 0.0;  // positive when satisfied
};

struct SampleSizeReport {
    std::vector<ConditionCheck> conditions;
    bool contraction_pair = false;  // ν̄ − γ̄ > 0

    bool all_satisfied() const {
        for (const auto& c : conditions)
            if (!c.satisfied) return false;
        return contraction_pair;
    }
};

inline SampleSizeReport check_sample_size_conditions(const ContractionParams& params, const EpsilonBounds& eps,
                                                     const BallSpec& ball) {
    SampleSizeReport report;
    report.contraction_pair = params.nu - params.gamma > 0.0;
    const double r = ball.r;
    const double m1 = r * (params.nu - params.gamma) - (eps.eps_s + r * eps.eps1 + r * eps.eps2);
    report.conditions.push_back({"eps_s + r*eps1 + r*eps2 < r*(nu - gamma)", m1 > 0.0, m1});
    const double m2 = params.nu / 2.0 - eps.eps2;
    report.conditions.push_back({"eps2 < nu/2", m2 > 0.0, m2});
    const double m3 = params.nu - eps.eps2;
    report.conditions.push_back({"nu_n > 0", m3 > 0.0, m3});
    return report;
}

inline nlohmann::json to_json(const BoundConstants& k) {
    return {{"c", k.c}, {"C1", k.C1}, {"C2", k.C2}, {"C3", k.C3}, {"C4", k.C4},
            {"mlr_exponent_slack", k.mlr_exponent_slack}, {"note", "bound-shape only"}};
}

inline nlohmann::json to_json(const ContractionParams& c) {
    nlohmann::json j{{"gamma", c.gamma}, {"nu", c.nu}, {"kappa", c.kappa}, {"provenance", to_string(c.provenance)},
                     {"contraction", c.is_contraction()}, {"nu_exact", c.nu_exact}};
    j["mc_stderr"] = c.mc_stderr ? nlohmann::json(*c.mc_stderr) : nlohmann::json(nullptr);
    return j;
}

inline nlohmann::json to_json(const EpsilonBounds& e) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"eps1", e.eps1}, {"eps2", e.eps2}, {"eps_s", e.eps_s}, {"delta", e.delta}, {"n", e.n},
            {"log_l_over_delta", e.log_l_over_delta}, {"constants", to_json(e.constants)},
            {"gamma_n", opt(e.gamma_n)}, {"nu_n", opt(e.nu_n)}, {"kappa_n", opt(e.kappa_n)}};
}

inline nlohmann::json to_json(const SampleSizeReport& r) {
    nlohmann::json conds = nlohmann::json::array();
    for (const auto& c : r.conditions) conds.push_back({{"condition", c.name}, {"satisfied", c.satisfied}, {"margin", c.margin}});
    return {{"conditions", conds}, {"contraction_pair", r.contraction_pair}, {"all_satisfied", r.all_satisfied()}};
}

inline BoundConstants constants_from_json(const nlohmann::json& j) {
    require(j.is_object(), "constants must be a JSON object");
    BoundConstants k;
    for (const auto& [key, value] : j.items()) {
        require(value.is_number(), "constant '" + key + "' must be a number");
        const double v = value.get<double>();
        if (key == "c") k.c = v;
        else if (key == "C1") k.C1 = v;
        else if (key == "C2") k.C2 = v;
        else if (key == "C3") k.C3 = v;
        else if (key == "C4") k.C4 = v;
        else if (key == "mlr_exponent_slack") k.mlr_exponent_slack = v;
        else throw InvalidArgument("unknown constant '" + key + "'");
    }
    return k;
}

}  // namespace emrate
