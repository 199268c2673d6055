#pragma once

// Empirical contraction quantities for one dataset and ball around θ*:
// the averaged gradient-difference vector Γₙ(θ), concavity Vₙ(θ'|θ) and
// statistical error 𝓔ₙ, plus search-based estimates of
//   Γ̄ₙ = sup_{θ ∈ B_r \ {θ*}} ‖Γₙ(θ)‖/‖θ−θ*‖     (reported as a lower bound)
//   V̄ₙ = inf −Vₙ(θ'|θ)/‖θ'−θ*‖²                 (exact for GMM/MLR)
// and the resulting empirical rate K̄ₙ.

#include "emrate/em.hpp"
#include "emrate/model.hpp"
#include "emrate/parallel.hpp"
#include "emrate/random.hpp"

#include "json.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace emrate {

struct BallSpec {
    double r = 1.0;
    double R = std::numeric_limits<double>::infinity();

    void validate() const {
        require(std::isfinite(r) && r > 0.0, "inner radius r must be a positive finite number");
        require(R >= r, "outer radius R must be >= r");
    }
};

/// Default ball: r = ‖θ*‖/4, R = ∞.
inline BallSpec default_ball(const ModelSpec& model) {
    BallSpec ball;
    ball.r = model.theta_star.norm() / 4.0;
    if (!(ball.r > 0.0)) ball.r = model.sigma / 4.0;
    return ball;
}

struct SearchBudget {
    std::size_t directions = 64;
    std::size_t radii = 8;
    std::size_t refine_steps = 20;
    double min_radius_fraction = 1e-3;
    std::size_t threads = 1;

    void validate() const {
        require(min_radius_fraction > 0.0 && min_radius_fraction < 1.0, "min_radius_fraction must lie in (0, 1)");
        require(directions == 0 || radii >= 1, "a nonempty direction set needs at least one radius");
    }
};

// ---------------------------------------------------------------------------
// Empirical means

/// Caches the θ*-dependent parts of Γₙ so repeated evaluations cost one pass over the data.
class GrvEvaluator {
public:
    explicit GrvEvaluator(const Dataset& data) : data_(data) {
        const ModelSpec& model = data.model;
        n_ = static_cast<double>(data.n());
        s2_ = model.sigma * model.sigma;
        switch (model.kind) {
            case ModelKind::GMM:
            case ModelKind::MLR:
                w_star_ = posterior_weights(data, model.theta_star);
                break;
            case ModelKind::RMC: {
                missing_ = Matrix::Ones(data.mask.rows(), data.mask.cols()) - data.mask;
                missing_colsum_ = missing_.colwise().sum().transpose();
                const RmcBatch batch = rmc_batch(data, model.theta_star);
                mu_y_star_ = batch.mu.transpose() * data.response;
                sigma_theta_star_star_ = batch.sigma_sum * model.theta_star;
                break;
            }
        }
    }

    /// Γₙ(θ) = (1/n) Σ_k Γ(θ; sample k).
    Vector operator()(const Vector& theta) const {
        const ModelSpec& model = data_.model;
        switch (model.kind) {
            case ModelKind::GMM: {
                const Vector dw = posterior_weights(data_, theta) - w_star_;
                return data_.obs.transpose() * dw * (2.0 / (s2_ * n_));
            }
            case ModelKind::MLR: {
                const Vector dw = (posterior_weights(data_, theta) - w_star_).cwiseProduct(data_.response);
                return data_.obs.transpose() * dw * (2.0 / (s2_ * n_));
            }
            case ModelKind::RMC: {
                const Vector& truth = model.theta_star;
                const Vector denom = (missing_ * theta.cwiseProduct(theta)).array() + s2_;
                const Vector residual = (data_.response - data_.obs * theta).cwiseQuotient(denom);
                const Matrix mu = data_.obs + residual.asDiagonal() * (missing_ * theta.asDiagonal());
                // Σ_k Σ_θ(k) θ* without forming the p×p sum
                const Vector inner = (missing_ * theta.cwiseProduct(truth)).cwiseQuotient(denom);
                Vector sigma_theta_star = mu.transpose() * (mu * truth);
                sigma_theta_star += missing_colsum_.cwiseProduct(truth);
                sigma_theta_star -= theta.cwiseProduct(missing_.transpose() * inner);
                const Vector mu_y = mu.transpose() * data_.response;
                return (mu_y - mu_y_star_ - (sigma_theta_star - sigma_theta_star_star_)) / (s2_ * n_);
            }
        }
        return {};
    }

    const Dataset& data() const { return data_; }

private:
    const Dataset& data_;
    double n_ = 1.0;
    double s2_ = 1.0;
    Vector w_star_;
    Matrix missing_;
    Vector missing_colsum_;
    Vector mu_y_star_;
    Vector sigma_theta_star_star_;
};

inline Vector empirical_grv(const Dataset& data, const Vector& theta) {
    check_dim(data.model, theta, "theta");
    return GrvEvaluator(data)(theta);
}

/// (1/n)Σ_k −V-matrix: the matrix S with Vₙ(θ'|θ) = −(θ'−θ*)ᵀ S (θ'−θ*)/(2σ²).
inline Matrix concavity_matrix(const Dataset& data, const Vector& theta) {
    const double n = static_cast<double>(data.n());
    const auto p = static_cast<Eigen::Index>(data.p());
    switch (data.model.kind) {
        case ModelKind::GMM: return Matrix::Identity(p, p);
        case ModelKind::MLR: return data.obs.transpose() * data.obs / n;
        case ModelKind::RMC: return rmc_batch(data, theta).sigma_sum / n;
    }
    return {};
}

inline double empirical_crv(const Dataset& data, const Vector& theta_prime, const Vector& theta) {
    check_dim(data.model, theta_prime, "theta_prime");
    check_dim(data.model, theta, "theta");
    const double s2 = data.model.sigma * data.model.sigma;
    const Vector step = theta_prime - data.model.theta_star;
    if (data.model.kind == ModelKind::GMM) return -step.squaredNorm() / (2.0 * s2);
    return -step.dot(concavity_matrix(data, theta) * step) / (2.0 * s2);
}

/// 𝓔ₙ = (1/n)Σ_k ∇₁Q(θ*|θ*; sample k).
inline Vector empirical_sev(const Dataset& data) {
    return q_n_gradient(data, data.model.theta_star, data.model.theta_star);
}

// ---------------------------------------------------------------------------
// Search over the punctured ball

namespace detail {

struct Candidate {
    double value = -std::numeric_limits<double>::infinity();
    Vector point;
};

inline bool inside_search_region(const Vector& offset, double r, double min_radius) {
    const double rho = offset.norm();
    return rho >= min_radius && rho < r;
}

/// Compass (coordinate pattern) search maximizing f(offset) over the region
/// min_radius ≤ ‖offset‖ < r. Deterministic given its start.
template <typename Objective>
Candidate compass_search(const Objective& f, Candidate start, double r, double min_radius, std::size_t steps) {
    if (steps == 0) return start;
    const auto p = start.point.size();
    double step = std::max(0.25 * start.point.norm(), min_radius);
    for (std::size_t it = 0; it < steps; ++it) {
        Candidate best = start;
        for (Eigen::Index j = 0; j < p; ++j) {
            for (double sign : {1.0, -1.0}) {
                Vector trial = start.point;
                trial[j] += sign * step;
                if (!inside_search_region(trial, r, min_radius)) continue;
                const double value = f(trial);
                if (value > best.value) best = {value, std::move(trial)};
            }
        }
        if (best.value > start.value)
            start = std::move(best);
        else
            step *= 0.5;
        if (step < 1e-6 * min_radius) break;
    }
    return start;
}

/// Result of a lattice-plus-refinement maximization.
struct SearchResult {
    double grid_best = -std::numeric_limits<double>::infinity();
    double refined_best = -std::numeric_limits<double>::infinity();
    Vector argmax;  // offset from θ*
};

/// Maximizes f(offset) over offsets ρ·u with u from `directions` sphere points and ρ from
/// the nested radius grid, then refines from the best lattice point of every
/// power-of-two prefix (d, g). A budget that doubles directions and radii therefore
/// searches a superset of starts and never returns a smaller value.
template <typename Objective>
SearchResult lattice_search(const Objective& f, std::size_t p, double r, const SearchBudget& budget) {
    budget.validate();
    SearchResult result;
    if (budget.directions == 0) return result;
    const auto dirs = sphere_directions(p, budget.directions);
    const auto radii = nested_log_radii(r, budget.radii, budget.min_radius_fraction);
    const std::size_t D = dirs.size();
    const std::size_t G = radii.size();
    std::vector<double> values(D * G);
    parallel_for(D * G, budget.threads, [&](std::size_t idx) {
        const std::size_t d = idx / G;
        const std::size_t g = idx % G;
        values[idx] = f(Vector(radii[g] * dirs[d]));
    });

    auto prefix_sizes = [](std::size_t total) {
        std::vector<std::size_t> sizes;
        for (std::size_t s = 1; s < total; s *= 2) sizes.push_back(s);
        sizes.push_back(total);
        return sizes;
    };
    std::set<std::size_t> starts;
    for (std::size_t dn : prefix_sizes(D)) {
        for (std::size_t gn : prefix_sizes(G)) {
            std::size_t best = 0;
            double best_value = -std::numeric_limits<double>::infinity();
            for (std::size_t d = 0; d < dn; ++d)
                for (std::size_t g = 0; g < gn; ++g)
                    if (values[d * G + g] > best_value) {
                        best_value = values[d * G + g];
                        best = d * G + g;
                    }
            starts.insert(best);
        }
    }
    const std::size_t best_idx = static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
    result.grid_best = values[best_idx];
    result.refined_best = result.grid_best;
    result.argmax = radii[best_idx % G] * dirs[best_idx / G];

    const std::vector<std::size_t> start_list(starts.begin(), starts.end());
    std::vector<Candidate> refined(start_list.size());
    const double min_radius = budget.min_radius_fraction * r;
    parallel_for(start_list.size(), budget.threads, [&](std::size_t i) {
        const std::size_t idx = start_list[i];
        Candidate start{values[idx], radii[idx % G] * dirs[idx / G]};
        refined[i] = compass_search(f, std::move(start), r, min_radius, budget.refine_steps);
    });
    for (auto& c : refined) {
        if (c.value > result.refined_best) {
            result.refined_best = c.value;
            result.argmax = c.point;
        }
    }
    return result;
}

}  // namespace detail

struct GammaSearch {
    double value = 0.0;        // max(grid, refined): lower bound on the supremum
    double grid_value = 0.0;
    Vector argmax;             // θ attaining `value`
    std::vector<std::string> warnings;
};

inline GammaSearch search_gamma_bar_n(const Dataset& data, const BallSpec& ball, const SearchBudget& budget = {}) {
    ball.validate();
    const Vector& truth = data.model.theta_star;
    const GrvEvaluator grv(data);
    auto ratio = [&](const Vector& offset) { return grv(truth + offset).norm() / offset.norm(); };
    const auto found = detail::lattice_search(ratio, data.p(), ball.r, budget);
    GammaSearch out;
    if (budget.directions == 0) {
        out.argmax = truth;
        return out;
    }
    out.value = found.refined_best;
    out.grid_value = found.grid_best;
    out.argmax = truth + found.argmax;
    if (out.grid_value > 0.0 && out.value > 1.05 * out.grid_value)
        out.warnings.push_back("gamma_bar_n: refinement exceeds grid maximum by " +
                               format_double(100.0 * (out.value / out.grid_value - 1.0)) + "%");
    return out;
}

inline double estimate_gamma_bar_n(const Dataset& data, const BallSpec& ball, const SearchBudget& budget = {}) {
    return search_gamma_bar_n(data, ball, budget).value;
}

inline double min_eigenvalue(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(m, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) throw NumericalError("symmetric eigensolve failed");
    return solver.eigenvalues().minCoeff();
}

struct VSearch {
    double value = 0.0;
    bool exact = true;  // false: search-based upper bound on the infimum
    std::vector<std::string> warnings;
};

inline VSearch search_v_bar_n(const Dataset& data, const BallSpec& ball, const SearchBudget& budget = {}) {
    ball.validate();
    const ModelSpec& model = data.model;
    const double s2 = model.sigma * model.sigma;
    VSearch out;
    switch (model.kind) {
        case ModelKind::GMM:
            out.value = 1.0 / (2.0 * s2);
            return out;
        case ModelKind::MLR:
            out.value = min_eigenvalue(concavity_matrix(data, model.theta_star)) / (2.0 * s2);
            return out;
        case ModelKind::RMC: {
            out.exact = false;
            const Vector& truth = model.theta_star;
            auto neg_lambda = [&](const Vector& offset) {
                return -min_eigenvalue(concavity_matrix(data, Vector(truth + offset)));
            };
            const double center = -neg_lambda(Vector::Zero(truth.size()));
            const auto found = detail::lattice_search(neg_lambda, data.p(), ball.r, budget);
            const double grid_min = std::min(center, -found.grid_best);
            const double refined_min = std::min(center, -found.refined_best);
            out.value = refined_min / (2.0 * s2);
            if (grid_min > 0.0 && refined_min < 0.95 * grid_min)
                out.warnings.push_back("v_bar_n: refinement undercuts grid minimum by " +
                                       format_double(100.0 * (1.0 - refined_min / grid_min)) + "%");
            return out;
        }
    }
    return out;
}

inline double estimate_v_bar_n(const Dataset& data, const BallSpec& ball, const SearchBudget& budget = {}) {
    return search_v_bar_n(data, ball, budget).value;
}

/// K̄ₙ = min(Γ̄ₙ/V̄ₙ, κ̄ₙ) when 0 < V̄ₙ < ∞, otherwise κ̄ₙ.
inline double compute_k_bar_n(double gamma_bar_n, double v_bar_n, double kappa_n_ceiling) {
    if (v_bar_n > 0.0 && std::isfinite(v_bar_n)) return std::min(gamma_bar_n / v_bar_n, kappa_n_ceiling);
    return kappa_n_ceiling;
}

struct EmpiricalRates {
    double gamma_bar_n = 0.0;
    double v_bar_n = 0.0;
    double e_bar_n = 0.0;
    double k_bar_n = 0.0;
    double kappa_n_ceiling = std::numeric_limits<double>::infinity();
    std::string ceiling_source = "none";
    std::optional<double> floor_bound;  // Ēₙ/(V̄ₙ−Γ̄ₙ) when V̄ₙ > Γ̄ₙ
    double gamma_grid = 0.0;
    bool gamma_is_lower_bound = true;
    bool v_is_upper_bound = false;
    BallSpec ball;
    SearchBudget budget;
    std::vector<std::string> warnings;
};

inline EmpiricalRates compute_empirical_rates(const Dataset& data, const BallSpec& ball, const SearchBudget& budget = {},
                                              double kappa_n_ceiling = std::numeric_limits<double>::infinity(),
                                              std::string ceiling_source = "none") {
    EmpiricalRates out;
    out.ball = ball;
    out.budget = budget;
    const GammaSearch gamma = search_gamma_bar_n(data, ball, budget);
    const VSearch v = search_v_bar_n(data, ball, budget);
    out.gamma_bar_n = gamma.value;
    out.gamma_grid = gamma.grid_value;
    out.v_bar_n = v.value;
    out.v_is_upper_bound = !v.exact;
    out.e_bar_n = empirical_sev(data).norm();
    out.kappa_n_ceiling = kappa_n_ceiling;
    out.ceiling_source = std::move(ceiling_source);
    out.k_bar_n = compute_k_bar_n(out.gamma_bar_n, out.v_bar_n, kappa_n_ceiling);
    if (out.v_bar_n > out.gamma_bar_n) out.floor_bound = out.e_bar_n / (out.v_bar_n - out.gamma_bar_n);
    out.warnings = gamma.warnings;
    out.warnings.insert(out.warnings.end(), v.warnings.begin(), v.warnings.end());
    return out;
}

struct ContractionAudit {
    std::vector<bool> per_step_ok;     // errors[t+1] ≤ K̄ₙ·errors[t] + Ēₙ/V̄ₙ
    std::vector<bool> cumulative_ok;   // errors[t] ≤ K̄ₙᵗ·errors[0] + Ēₙ/(V̄ₙ−Γ̄ₙ)
    std::size_t per_step_violations = 0;
    std::size_t cumulative_violations = 0;
    bool cumulative_available = false;  // needs V̄ₙ > Γ̄ₙ

    bool cumulative_holds() const { return cumulative_available && cumulative_violations == 0; }
};

inline ContractionAudit verify_contraction_inequality(const std::vector<double>& errors, const EmpiricalRates& rates,
                                                      double tolerance = 1e-10) {
    ContractionAudit audit;
    const double k = rates.k_bar_n;
    const double step_floor = rates.v_bar_n > 0.0 ? rates.e_bar_n / rates.v_bar_n : std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t + 1 < errors.size(); ++t) {
        const bool ok = errors[t + 1] <= k * errors[t] + step_floor + tolerance;
        audit.per_step_ok.push_back(ok);
        if (!ok) ++audit.per_step_violations;
    }
    audit.cumulative_available = rates.floor_bound.has_value();
    if (audit.cumulative_available) {
        double power = 1.0;
        for (std::size_t t = 0; t < errors.size(); ++t) {
            const bool ok = errors[t] <= power * errors[0] + *rates.floor_bound + tolerance;
            audit.cumulative_ok.push_back(ok);
            if (!ok) ++audit.cumulative_violations;
            power *= k;
        }
    }
    return audit;
}

inline ContractionAudit verify_contraction_inequality(const EMTrajectory& traj, const EmpiricalRates& rates,
                                                      double tolerance = 1e-10) {
    return verify_contraction_inequality(traj.errors, rates, tolerance);
}

inline nlohmann::json to_json(const SearchBudget& b) {
    return {{"directions", b.directions},
            {"radii", b.radii},
            {"refine_steps", b.refine_steps},
            {"min_radius_fraction", b.min_radius_fraction}};
}

inline nlohmann::json to_json(const EmpiricalRates& rates) {
    nlohmann::json j;
    j["gamma_bar_n"] = rates.gamma_bar_n;
    j["gamma_bar_n_grid"] = rates.gamma_grid;
    j["gamma_bar_n_bound"] = rates.gamma_is_lower_bound ? "lower" : "exact";
    j["v_bar_n"] = rates.v_bar_n;
    j["v_bar_n_bound"] = rates.v_is_upper_bound ? "upper" : "exact";
    j["e_bar_n"] = rates.e_bar_n;
    j["k_bar_n"] = std::isfinite(rates.k_bar_n) ? nlohmann::json(rates.k_bar_n) : nlohmann::json(format_double(rates.k_bar_n));
    j["kappa_n_ceiling"] = std::isfinite(rates.kappa_n_ceiling) ? nlohmann::json(rates.kappa_n_ceiling)
                                                               : nlohmann::json(format_double(rates.kappa_n_ceiling));
    j["ceiling_source"] = rates.ceiling_source;
    j["floor_bound"] = rates.floor_bound ? nlohmann::json(*rates.floor_bound) : nlohmann::json(nullptr);
    j["r"] = rates.ball.r;
    j["R"] = std::isfinite(rates.ball.R) ? nlohmann::json(rates.ball.R) : nlohmann::json("inf");
    j["budget"] = to_json(rates.budget);
    j["warnings"] = rates.warnings;
    return j;
}

}  // namespace emrate
