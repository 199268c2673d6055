#pragma once

// The three latent-variable models: symmetric two-component Gaussian mixture
// (GMM), mixture of two symmetric linear regressions (MLR), and linear
// regression with covariates missing completely at random (RMC).
//
// Per-sample functions take a Sample; dataset-level functions (m_step,
// log_likelihood, q_n_*) work on the columnar Dataset storage directly.

#include "emrate/errors.hpp"
#include "emrate/parallel.hpp"
#include "emrate/random.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

namespace emrate {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class ModelKind { GMM, MLR, RMC };

inline std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::GMM: return "gmm";
        case ModelKind::MLR: return "mlr";
        case ModelKind::RMC: return "rmc";
    }
    return "unknown";
}

inline ModelKind parse_model_kind(const std::string& text) {
    if (text == "gmm" || text == "GMM") return ModelKind::GMM;
    if (text == "mlr" || text == "MLR") return ModelKind::MLR;
    if (text == "rmc" || text == "RMC") return ModelKind::RMC;
    throw InvalidArgument("unknown model kind '" + text + "' (expected gmm, mlr or rmc)");
}

struct ModelSpec {
    ModelKind kind = ModelKind::GMM;
    Vector theta_star;
    double sigma = 1.0;
    double epsilon_miss = 0.0;

    ModelSpec() = default;
    ModelSpec(ModelKind k, Vector theta, double s, double eps = 0.0)
        : kind(k), theta_star(std::move(theta)), sigma(s), epsilon_miss(eps) {
        validate();
    }

    static ModelSpec gmm(Vector theta, double s) { return {ModelKind::GMM, std::move(theta), s}; }
    static ModelSpec mlr(Vector theta, double s) { return {ModelKind::MLR, std::move(theta), s}; }
    static ModelSpec rmc(Vector theta, double s, double eps) { return {ModelKind::RMC, std::move(theta), s, eps}; }

    void validate() const {
        require(theta_star.size() >= 1, "model dimension p must be >= 1");
        require(std::isfinite(sigma) && sigma > 0.0, "sigma must be > 0");
        require(theta_star.allFinite(), "theta_star must be finite");
        require(epsilon_miss >= 0.0 && epsilon_miss < 1.0, "epsilon_miss must lie in [0, 1)");
        require(kind == ModelKind::RMC || epsilon_miss == 0.0, "epsilon_miss must be 0 unless the model is rmc");
    }

    std::size_t p() const { return static_cast<std::size_t>(theta_star.size()); }
    /// Signal-to-noise ratio ‖θ*‖/σ.
    double snr() const { return theta_star.norm() / sigma; }
    /// Sub-gaussian scale σ(1 + SNR).
    double scale() const { return sigma * (1.0 + snr()); }
};

/// One observation. GMM stores its draw in `obs`; MLR and RMC store covariates
/// in `obs` and the response in `response`. RMC zeroes missing covariates and
/// sets mask_j = 0 for them; `mask` is empty for GMM and MLR.
struct Sample {
    Vector obs;
    double response = 0.0;
    Vector mask;
};

/// n samples in columnar form: row k of `obs` (and of `mask` for RMC) is sample k.
struct Dataset {
    ModelSpec model;
    std::uint64_t seed = 0;
    Matrix obs;
    Vector response;
    Matrix mask;

    std::size_t n() const { return static_cast<std::size_t>(obs.rows()); }
    std::size_t p() const { return static_cast<std::size_t>(obs.cols()); }

    Sample sample(std::size_t k) const {
        const auto row = static_cast<Eigen::Index>(k);
        Sample s;
        s.obs = obs.row(row).transpose();
        if (response.size() > 0) s.response = response[row];
        if (mask.size() > 0) s.mask = mask.row(row).transpose();
        return s;
    }

    static Dataset from_samples(const ModelSpec& model, const std::vector<Sample>& samples, std::uint64_t seed = 0) {
        require(!samples.empty(), "dataset must contain at least one sample");
        const auto p = static_cast<Eigen::Index>(model.p());
        const auto n = static_cast<Eigen::Index>(samples.size());
        Dataset data;
        data.model = model;
        data.seed = seed;
        data.obs.resize(n, p);
        if (model.kind != ModelKind::GMM) data.response.resize(n);
        if (model.kind == ModelKind::RMC) data.mask.resize(n, p);
        for (Eigen::Index k = 0; k < n; ++k) {
            const Sample& s = samples[static_cast<std::size_t>(k)];
            require(s.obs.size() == p, "sample dimension does not match the model");
            data.obs.row(k) = s.obs.transpose();
            if (model.kind != ModelKind::GMM) data.response[k] = s.response;
            if (model.kind == ModelKind::RMC) {
                Vector m = s.mask.size() == p ? s.mask : Vector::Ones(p);
                for (Eigen::Index j = 0; j < p; ++j) {
                    require(m[j] == 0.0 || m[j] == 1.0, "mask entries must be 0 or 1");
                    if (m[j] == 0.0) data.obs(k, j) = 0.0;
                }
                data.mask.row(k) = m.transpose();
            }
        }
        return data;
    }
};

/// ς(t) = 1/(1+e^{-t}) without overflow for large |t|.
inline double logistic(double t) noexcept {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

/// log cosh(t) without overflow.
inline double log_cosh(double t) noexcept {
    const double a = std::abs(t);
    return a + std::log1p(std::exp(-2.0 * a)) - std::numbers::ln2;
}

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log √(2π)

// ---------------------------------------------------------------------------
// Sampling

/// Draws sample k of a dataset with the given seed. Each sample uses its own
/// counter stream keyed by derive_seed(seed, Sample, k).
inline Sample draw_sample(const ModelSpec& model, std::uint64_t seed, std::uint64_t k) {
    CounterRng rng(derive_seed(seed, static_cast<std::uint64_t>(SeedNamespace::Sample), k));
    const auto p = static_cast<Eigen::Index>(model.p());
    Sample s;
    s.obs.resize(p);
    switch (model.kind) {
        case ModelKind::GMM: {
            const double z = rng.rademacher();
            for (Eigen::Index j = 0; j < p; ++j) s.obs[j] = z * model.theta_star[j] + model.sigma * rng.normal();
            break;
        }
        case ModelKind::MLR: {
            for (Eigen::Index j = 0; j < p; ++j) s.obs[j] = rng.normal();
            const double z = rng.rademacher();
            s.response = z * s.obs.dot(model.theta_star) + model.sigma * rng.normal();
            break;
        }
        case ModelKind::RMC: {
            for (Eigen::Index j = 0; j < p; ++j) s.obs[j] = rng.normal();
            s.response = s.obs.dot(model.theta_star) + model.sigma * rng.normal();
            s.mask.resize(p);
            for (Eigen::Index j = 0; j < p; ++j) {
                const bool missing = rng.uniform() < model.epsilon_miss;
                s.mask[j] = missing ? 0.0 : 1.0;
                if (missing) s.obs[j] = 0.0;
            }
            break;
        }
    }
    return s;
}

/// n i.i.d. samples; bit-identical for a given (model, n, seed) regardless of thread count.
inline Dataset sample_dataset(const ModelSpec& model, std::size_t n, std::uint64_t seed, std::size_t threads = 1) {
    model.validate();
    require(n >= 1, "sample size n must be >= 1");
    const auto p = static_cast<Eigen::Index>(model.p());
    Dataset data;
    data.model = model;
    data.seed = seed;
    data.obs.resize(static_cast<Eigen::Index>(n), p);
    if (model.kind != ModelKind::GMM) data.response.resize(static_cast<Eigen::Index>(n));
    if (model.kind == ModelKind::RMC) data.mask.resize(static_cast<Eigen::Index>(n), p);
    constexpr std::size_t kChunk = 4096;
    const std::size_t chunks = (n + kChunk - 1) / kChunk;
    parallel_for(chunks, threads, [&](std::size_t c) {
        const std::size_t end = std::min(n, (c + 1) * kChunk);
        for (std::size_t k = c * kChunk; k < end; ++k) {
            const auto row = static_cast<Eigen::Index>(k);
            Sample s = draw_sample(model, seed, k);
            data.obs.row(row) = s.obs.transpose();
            if (model.kind != ModelKind::GMM) data.response[row] = s.response;
            if (model.kind == ModelKind::RMC) data.mask.row(row) = s.mask.transpose();
        }
    });
    return data;
}

// ---------------------------------------------------------------------------
// Per-sample Q-function machinery

inline void check_dim(const ModelSpec& model, const Vector& v, const char* name) {
    if (static_cast<std::size_t>(v.size()) != model.p())
        throw InvalidArgument(std::string(name) + " has dimension " + std::to_string(v.size()) +
                              ", expected p = " + std::to_string(model.p()));
}

/// Posterior probability of the + component (GMM, MLR).
inline double posterior_weight(const ModelSpec& model, const Vector& theta, const Sample& s) {
    const double s2 = model.sigma * model.sigma;
    if (model.kind == ModelKind::GMM) return logistic(2.0 * theta.dot(s.obs) / s2);
    return logistic(2.0 * s.response * s.obs.dot(theta) / s2);
}

inline Vector rmc_mask_of(const Sample& s) { return s.mask.size() > 0 ? s.mask : Vector::Ones(s.obs.size()); }

struct RmcMoments {
    Vector mu;      // conditional mean of the covariate
    Matrix a;       // conditional covariance of the covariate
    Matrix sigma;   // conditional second moment μμᵀ + A
};

inline RmcMoments rmc_conditional_moments(const ModelSpec& model, const Vector& theta, const Sample& s) {
    require(model.kind == ModelKind::RMC, "conditional moments are defined only for the rmc model");
    check_dim(model, theta, "theta");
    const Vector mask = rmc_mask_of(s);
    const Vector missing = Vector::Ones(mask.size()) - mask;
    const Vector theta_missing = theta.cwiseProduct(missing);
    const Vector theta_observed = theta.cwiseProduct(mask);
    const Vector x_observed = s.obs.cwiseProduct(mask);
    const double denom = model.sigma * model.sigma + theta_missing.squaredNorm();
    const double residual = (s.response - theta_observed.dot(x_observed)) / denom;
    RmcMoments m;
    m.mu = x_observed + residual * theta_missing;
    m.a = Matrix(missing.asDiagonal()) - theta_missing * theta_missing.transpose() / denom;
    m.sigma = m.mu * m.mu.transpose() + m.a;
    return m;
}

/// log ψ(pattern) = #missing·log ε + #observed·log(1−ε).
inline double log_pattern_probability(double epsilon, const Vector& mask) {
    const double observed = mask.sum();
    const double missing = static_cast<double>(mask.size()) - observed;
    double value = observed > 0.0 ? observed * std::log1p(-epsilon) : 0.0;
    if (missing > 0.0) value += missing * std::log(epsilon);
    return value;
}

inline double q_value(const ModelSpec& model, const Vector& theta_prime, const Vector& theta, const Sample& s) {
    check_dim(model, theta_prime, "theta_prime");
    check_dim(model, theta, "theta");
    const double s2 = model.sigma * model.sigma;
    const double p = static_cast<double>(model.p());
    const double log_sigma = std::log(model.sigma);
    switch (model.kind) {
        case ModelKind::GMM: {
            const double w = posterior_weight(model, theta, s);
            const double quad = w * (s.obs - theta_prime).squaredNorm() + (1.0 - w) * (s.obs + theta_prime).squaredNorm();
            return -quad / (2.0 * s2) - (std::numbers::ln2 + p * (kLogSqrt2Pi + log_sigma));
        }
        case ModelKind::MLR: {
            const double w = posterior_weight(model, theta, s);
            const double fit = s.obs.dot(theta_prime);
            const double quad = w * (s.response - fit) * (s.response - fit) + (1.0 - w) * (s.response + fit) * (s.response + fit);
            return -quad / (2.0 * s2) - 0.5 * s.obs.squaredNorm() - (std::numbers::ln2 + (p + 1.0) * (kLogSqrt2Pi + log_sigma));
        }
        case ModelKind::RMC: {
            const RmcMoments m = rmc_conditional_moments(model, theta, s);
            const double y = s.response;
            const double quad = y * y - 2.0 * y * theta_prime.dot(m.mu) + theta_prime.dot(m.sigma * theta_prime);
            return -quad / (2.0 * s2) - 0.5 * m.sigma.trace() - p * kLogSqrt2Pi +
                   log_pattern_probability(model.epsilon_miss, rmc_mask_of(s));
        }
    }
    return 0.0;
}

/// Gradient of q_value in its first argument.
inline Vector q_gradient(const ModelSpec& model, const Vector& theta_prime, const Vector& theta, const Sample& s) {
    check_dim(model, theta_prime, "theta_prime");
    check_dim(model, theta, "theta");
    const double s2 = model.sigma * model.sigma;
    switch (model.kind) {
        case ModelKind::GMM: {
            const double w = posterior_weight(model, theta, s);
            return ((2.0 * w - 1.0) * s.obs - theta_prime) / s2;
        }
        case ModelKind::MLR: {
            const double w = posterior_weight(model, theta, s);
            return (((2.0 * w - 1.0) * s.response - s.obs.dot(theta_prime)) / s2) * s.obs;
        }
        case ModelKind::RMC: {
            const RmcMoments m = rmc_conditional_moments(model, theta, s);
            return (s.response * m.mu - m.sigma * theta_prime) / s2;
        }
    }
    return {};
}

struct PerSampleQuantities {
    Vector grv;   // ∇₁Q(θ*|θ) − ∇₁Q(θ*|θ*)
    double crv;   // Q(θ'|θ) − Q(θ*|θ) − ⟨∇₁Q(θ*|θ), θ'−θ*⟩
    Vector sev;   // ∇₁Q(θ*|θ*)
};

inline PerSampleQuantities per_sample_quantities(const ModelSpec& model, const Vector& theta_prime, const Vector& theta,
                                                 const Sample& s) {
    check_dim(model, theta_prime, "theta_prime");
    check_dim(model, theta, "theta");
    const Vector& truth = model.theta_star;
    const double s2 = model.sigma * model.sigma;
    const Vector step = theta_prime - truth;
    PerSampleQuantities out;
    switch (model.kind) {
        case ModelKind::GMM: {
            const double w = posterior_weight(model, theta, s);
            const double w_star = posterior_weight(model, truth, s);
            out.grv = (2.0 * (w - w_star) / s2) * s.obs;
            out.crv = -step.squaredNorm() / (2.0 * s2);
            out.sev = ((2.0 * w_star - 1.0) * s.obs - truth) / s2;
            break;
        }
        case ModelKind::MLR: {
            const double w = posterior_weight(model, theta, s);
            const double w_star = posterior_weight(model, truth, s);
            out.grv = (2.0 * (w - w_star) * s.response / s2) * s.obs;
            const double proj = s.obs.dot(step);
            out.crv = -proj * proj / (2.0 * s2);
            out.sev = (((2.0 * w_star - 1.0) * s.response - s.obs.dot(truth)) / s2) * s.obs;
            break;
        }
        case ModelKind::RMC: {
            const RmcMoments m = rmc_conditional_moments(model, theta, s);
            const RmcMoments m_star = rmc_conditional_moments(model, truth, s);
            out.grv = (s.response * (m.mu - m_star.mu) - (m.sigma - m_star.sigma) * truth) / s2;
            out.crv = -step.dot(m.sigma * step) / (2.0 * s2);
            out.sev = (s.response * m_star.mu - m_star.sigma * truth) / s2;
            break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset-level (vectorized) quantities

/// 2w−1 = tanh(t/2) for every sample (GMM, MLR), where w is the posterior weight.
inline Vector signed_weights(const Dataset& data, const Vector& theta) {
    const double s2 = data.model.sigma * data.model.sigma;
    Vector t = data.obs * theta;
    if (data.model.kind == ModelKind::MLR) t = t.cwiseProduct(data.response);
    return t.unaryExpr([s2](double v) { return std::tanh(v / s2); });
}

/// Posterior weights w for every sample (GMM, MLR).
inline Vector posterior_weights(const Dataset& data, const Vector& theta) {
    const double s2 = data.model.sigma * data.model.sigma;
    Vector t = data.obs * theta;
    if (data.model.kind == ModelKind::MLR) t = t.cwiseProduct(data.response);
    return t.unaryExpr([s2](double v) { return logistic(2.0 * v / s2); });
}

/// Stacked RMC conditional moments: row k of `mu` is μ_θ for sample k and
/// `sigma_sum` = Σ_k Σ_θ(sample k).
struct RmcBatch {
    Matrix mu;
    Matrix sigma_sum;
};

inline RmcBatch rmc_batch(const Dataset& data, const Vector& theta) {
    const double s2 = data.model.sigma * data.model.sigma;
    const Matrix& mask = data.mask;
    const Matrix missing = Matrix::Ones(mask.rows(), mask.cols()) - mask;
    const Vector theta_sq = theta.cwiseProduct(theta);
    const Vector denom = (missing * theta_sq).array() + s2;
    const Vector residual = (data.response - data.obs * theta).cwiseQuotient(denom);
    RmcBatch batch;
    batch.mu = data.obs + residual.asDiagonal() * (missing * theta.asDiagonal());
    const Vector inv_denom = denom.cwiseInverse();
    const Matrix weighted = missing.transpose() * inv_denom.asDiagonal() * missing;
    batch.sigma_sum = batch.mu.transpose() * batch.mu;
    batch.sigma_sum.diagonal() += missing.colwise().sum().transpose();
    batch.sigma_sum -= theta.asDiagonal() * weighted * theta.asDiagonal();
    return batch;
}

/// Solves A x = b for symmetric positive-definite A. On failure, adds
/// 1e-10·trace(A)/p to the diagonal once and retries before throwing SingularSystem.
inline Vector solve_spd(const Matrix& a, const Vector& b, double rcond_threshold = 1e-14) {
    auto attempt = [&](const Matrix& m, Vector& out) {
        Eigen::LLT<Matrix> llt(m);
        if (llt.info() != Eigen::Success || !(llt.rcond() > rcond_threshold)) return false;
        out = llt.solve(b);
        return out.allFinite();
    };
    Vector x;
    if (attempt(a, x)) return x;
    Matrix jittered = a;
    const double jitter = 1e-10 * a.trace() / static_cast<double>(a.rows());
    jittered.diagonal().array() += jitter;
    if (jitter > 0.0 && attempt(jittered, x)) return x;
    throw SingularSystem("M-step system is singular or ill-conditioned");
}

/// argmax over θ' ∈ ℝᵖ of Qₙ(θ'|θ).
inline Vector m_step(const Dataset& data, const Vector& theta) {
    const ModelSpec& model = data.model;
    check_dim(model, theta, "theta");
    require(data.n() >= 1, "dataset must be nonempty");
    const double n = static_cast<double>(data.n());
    switch (model.kind) {
        case ModelKind::GMM:
            return data.obs.transpose() * signed_weights(data, theta) / n;
        case ModelKind::MLR: {
            const Vector rhs = data.obs.transpose() * signed_weights(data, theta).cwiseProduct(data.response);
            const Matrix gram = data.obs.transpose() * data.obs;
            return solve_spd(gram, rhs);
        }
        case ModelKind::RMC: {
            const RmcBatch batch = rmc_batch(data, theta);
            return solve_spd(batch.sigma_sum, batch.mu.transpose() * data.response);
        }
    }
    return {};
}

inline Vector m_step(const ModelSpec& model, const Vector& theta, const Dataset& data) {
    require(model.kind == data.model.kind && model.p() == data.p(), "model does not match dataset");
    return m_step(data, theta);
}

/// Qₙ(θ'|θ) = (1/n)Σ_k Q(θ'|θ; sample k).
inline double q_n_value(const Dataset& data, const Vector& theta_prime, const Vector& theta) {
    const ModelSpec& model = data.model;
    check_dim(model, theta_prime, "theta_prime");
    check_dim(model, theta, "theta");
    const double n = static_cast<double>(data.n());
    const double s2 = model.sigma * model.sigma;
    const double p = static_cast<double>(model.p());
    const double log_sigma = std::log(model.sigma);
    switch (model.kind) {
        case ModelKind::GMM: {
            // w‖y−θ'‖² + (1−w)‖y+θ'‖² = ‖y‖² + ‖θ'‖² − 2(2w−1)⟨y,θ'⟩
            const Vector sw = signed_weights(data, theta);
            const double quad = data.obs.squaredNorm() / n + theta_prime.squaredNorm() -
                                2.0 * sw.dot(data.obs * theta_prime) / n;
            return -quad / (2.0 * s2) - (std::numbers::ln2 + p * (kLogSqrt2Pi + log_sigma));
        }
        case ModelKind::MLR: {
            const Vector sw = signed_weights(data, theta);
            const Vector fit = data.obs * theta_prime;
            const double quad = (data.response.squaredNorm() + fit.squaredNorm() -
                                 2.0 * sw.cwiseProduct(data.response).dot(fit)) / n;
            return -quad / (2.0 * s2) - 0.5 * data.obs.squaredNorm() / n -
                   (std::numbers::ln2 + (p + 1.0) * (kLogSqrt2Pi + log_sigma));
        }
        case ModelKind::RMC: {
            const RmcBatch batch = rmc_batch(data, theta);
            const double quad = (data.response.squaredNorm() - 2.0 * data.response.dot(batch.mu * theta_prime) +
                                 theta_prime.dot(batch.sigma_sum * theta_prime)) / n;
            double log_psi = 0.0;
            for (Eigen::Index k = 0; k < data.mask.rows(); ++k)
                log_psi += log_pattern_probability(model.epsilon_miss, data.mask.row(k).transpose());
            return -quad / (2.0 * s2) - 0.5 * batch.sigma_sum.trace() / n - p * kLogSqrt2Pi + log_psi / n;
        }
    }
    return 0.0;
}

/// ∇₁Qₙ(θ'|θ).
inline Vector q_n_gradient(const Dataset& data, const Vector& theta_prime, const Vector& theta) {
    const ModelSpec& model = data.model;
    check_dim(model, theta_prime, "theta_prime");
    check_dim(model, theta, "theta");
    const double n = static_cast<double>(data.n());
    const double s2 = model.sigma * model.sigma;
    switch (model.kind) {
        case ModelKind::GMM:
            return (data.obs.transpose() * signed_weights(data, theta) / n - theta_prime) / s2;
        case ModelKind::MLR: {
            const Vector coef = signed_weights(data, theta).cwiseProduct(data.response) - data.obs * theta_prime;
            return data.obs.transpose() * coef / (n * s2);
        }
        case ModelKind::RMC: {
            const RmcBatch batch = rmc_batch(data, theta);
            return (batch.mu.transpose() * data.response - batch.sigma_sum * theta_prime) / (n * s2);
        }
    }
    return {};
}

/// Lₙ(θ) = (1/n)Σ log p_θ(observed sample k), using exact marginal densities.
/// RMC uses the joint density of the response and the observed covariates.
inline double log_likelihood(const Dataset& data, const Vector& theta) {
    const ModelSpec& model = data.model;
    check_dim(model, theta, "theta");
    const double n = static_cast<double>(data.n());
    const double s2 = model.sigma * model.sigma;
    const double p = static_cast<double>(model.p());
    const double log_sigma = std::log(model.sigma);
    double total = 0.0;
    switch (model.kind) {
        case ModelKind::GMM: {
            const Vector t = data.obs * theta / s2;
            const Vector sq = data.obs.rowwise().squaredNorm();
            const double theta_sq = theta.squaredNorm();
            for (Eigen::Index k = 0; k < t.size(); ++k)
                total += log_cosh(t[k]) - (sq[k] + theta_sq) / (2.0 * s2);
            return total / n - p * (kLogSqrt2Pi + log_sigma);
        }
        case ModelKind::MLR: {
            const Vector fit = data.obs * theta;
            const Vector sq = data.obs.rowwise().squaredNorm();
            for (Eigen::Index k = 0; k < fit.size(); ++k) {
                const double y = data.response[k];
                total += log_cosh(y * fit[k] / s2) - (y * y + fit[k] * fit[k]) / (2.0 * s2) - 0.5 * sq[k];
            }
            return total / n - (p + 1.0) * kLogSqrt2Pi - log_sigma;
        }
        case ModelKind::RMC: {
            const Vector theta_sq = theta.cwiseProduct(theta);
            for (Eigen::Index k = 0; k < data.obs.rows(); ++k) {
                const Vector mask = data.mask.row(k).transpose();
                const double variance = s2 + theta_sq.dot(Vector::Ones(mask.size()) - mask);
                const double resid = data.response[k] - data.obs.row(k).dot(theta.cwiseProduct(mask));
                const double observed = mask.sum();
                total += -0.5 * resid * resid / variance - 0.5 * std::log(variance) - kLogSqrt2Pi;
                total += -0.5 * data.obs.row(k).squaredNorm() - observed * kLogSqrt2Pi;
                total += log_pattern_probability(model.epsilon_miss, mask);
            }
            return total / n;
        }
    }
    return 0.0;
}

inline double log_likelihood(const ModelSpec& model, const Vector& theta, const Dataset& data) {
    require(model.kind == data.model.kind && model.p() == data.p(), "model does not match dataset");
    return log_likelihood(data, theta);
}

}  // namespace emrate
