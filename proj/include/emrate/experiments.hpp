#pragma once

// Replicate studies over seeded datasets:
//   rate_fluctuation   one sample size, spread of realized rates across datasets
//   rate_stabilization several sample sizes, how that spread shrinks with n
//   consistency        final-error scaling with n
// All three share one runner; they differ in validation and in the summary fits.

#include "emrate/em.hpp"
#include "emrate/format.hpp"
#include "emrate/model.hpp"
#include "emrate/oracle.hpp"
#include "emrate/parallel.hpp"
#include "emrate/rates.hpp"
#include "emrate/stats.hpp"

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace emrate {

inline constexpr int kConfigSchemaVersion = 1;

enum class StudyKind { RateFluctuation, RateStabilization, Consistency };

inline std::string to_string(StudyKind s) {
    switch (s) {
        case StudyKind::RateFluctuation: return "rate_fluctuation";
        case StudyKind::RateStabilization: return "rate_stabilization";
        case StudyKind::Consistency: return "consistency";
    }
    return "unknown";
}

inline StudyKind parse_study_kind(const std::string& s) {
    if (s == "rate_fluctuation") return StudyKind::RateFluctuation;
    if (s == "rate_stabilization") return StudyKind::RateStabilization;
    if (s == "consistency") return StudyKind::Consistency;
    throw InvalidArgument("unknown study '" + s + "' (expected rate_fluctuation, rate_stabilization or consistency)");
}

enum class CeilingSource { None, ClosedForm, MonteCarlo };

inline std::string to_string(CeilingSource c) {
    switch (c) {
        case CeilingSource::None: return "none";
        case CeilingSource::ClosedForm: return "closed_form";
        case CeilingSource::MonteCarlo: return "monte_carlo";
    }
    return "unknown";
}

inline CeilingSource parse_ceiling_source(const std::string& s) {
    if (s == "none") return CeilingSource::None;
    if (s == "closed_form") return CeilingSource::ClosedForm;
    if (s == "monte_carlo") return CeilingSource::MonteCarlo;
    throw InvalidArgument("unknown ceiling source '" + s + "' (expected none, closed_form or monte_carlo)");
}

struct Theta0Policy {
    enum class Kind { RandomInBall, FixedOffset } kind = Kind::RandomInBall;
    double radius_fraction = 0.5;  // RandomInBall: ‖θ⁰−θ*‖ = fraction·r
    Vector offset;                 // FixedOffset: θ⁰ = θ* + offset
};

struct ExperimentConfig {
    StudyKind study = StudyKind::RateFluctuation;
    ModelSpec model;
    std::vector<std::size_t> sample_sizes;
    std::size_t replicates = 20;
    Theta0Policy theta0;
    BallSpec ball;
    EMSettings em;
    RateOptions rate{0.2, 3.0, ErrorReference::FinalIterate};
    SearchBudget search;
    bool compute_rates = true;
    CeilingSource ceiling = CeilingSource::None;
    std::size_t proxy_n = 0;  // 0 disables the population proxy
    double delta = 0.05;
    BoundConstants constants;
    std::uint64_t master_seed = 1;
    std::size_t threads = 0;

    void validate() const {
        model.validate();
        ball.validate();
        search.validate();
        require(replicates >= 2, "replicates must be >= 2");
        require(!sample_sizes.empty(), "sample_sizes must be nonempty");
        for (std::size_t i = 0; i < sample_sizes.size(); ++i) {
            require(sample_sizes[i] >= 1, "sample sizes must be >= 1");
            if (i) require(sample_sizes[i] > sample_sizes[i - 1], "sample sizes must be strictly increasing");
        }
        require(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
        require(ceiling != CeilingSource::MonteCarlo || proxy_n >= 1, "monte_carlo ceiling needs proxy_n >= 1");
        if (theta0.kind == Theta0Policy::Kind::FixedOffset)
            require(static_cast<std::size_t>(theta0.offset.size()) == model.p(), "theta0 offset must have dimension p");
        else
            require(theta0.radius_fraction > 0.0 && theta0.radius_fraction < 1.0, "theta0 radius_fraction must lie in (0, 1)");
        switch (study) {
            case StudyKind::RateFluctuation:
                require(sample_sizes.size() == 1, "rate_fluctuation takes exactly one sample size");
                break;
            case StudyKind::RateStabilization:
                require(sample_sizes.size() >= 3, "rate_stabilization needs at least 3 sample sizes");
                break;
            case StudyKind::Consistency:
                require(sample_sizes.size() >= 4, "consistency needs at least 4 sample sizes");
                require(static_cast<double>(sample_sizes.back()) >= 100.0 * static_cast<double>(sample_sizes.front()),
                        "consistency sample sizes must span at least two decades");
                break;
        }
    }
};

/// θ⁰ used by every replicate of a study.
inline Vector initial_point(const ExperimentConfig& cfg) {
    if (cfg.theta0.kind == Theta0Policy::Kind::FixedOffset) return cfg.model.theta_star + cfg.theta0.offset;
    const Vector u = random_unit_vector(cfg.model.p(), derive_seed(cfg.master_seed, static_cast<std::uint64_t>(SeedNamespace::StartPoint)));
    return cfg.model.theta_star + cfg.theta0.radius_fraction * cfg.ball.r * u;
}

inline std::uint64_t replicate_seed(std::uint64_t master, std::size_t n, std::size_t replicate) {
    return derive_seed(master, static_cast<std::uint64_t>(SeedNamespace::Replicate), n, replicate);
}

struct ExperimentRecord {
    std::size_t n = 0;
    std::size_t replicate = 0;
    std::uint64_t seed = 0;
    std::string rate_status = "ok";
    RateEstimate rate;
    double final_error = 0.0;
    std::size_t iterations = 0;
    StopReason stopped_reason = StopReason::MaxIters;
    bool exited_ball = false;
    std::optional<EmpiricalRates> rates;
    std::optional<ContractionAudit> audit;
    std::vector<double> errors;  // ‖θᵗ−θ*‖
};

struct ExperimentAggregate {
    std::size_t n = 0;
    std::size_t records = 0;
    std::size_t rates_used = 0;
    std::size_t skipped_too_few_points = 0;
    double rate_mean = NAN, rate_sd = NAN, rate_iqr = NAN;
    double k_bar_mean = NAN, k_bar_sd = NAN, k_bar_iqr = NAN;
    double final_error_mean = NAN, final_error_sd = NAN;
    double frac_rate_below_kappa = NAN;
    std::size_t cumulative_bound_holds = 0;
};

struct ExperimentResult {
    ExperimentConfig config;
    Vector theta0;
    std::vector<ExperimentRecord> records;  // sorted by (n, replicate)
    std::vector<ExperimentAggregate> aggregates;
    std::optional<PopulationEstimate> population;  // κ̄ proxy when proxy_n > 0
    std::optional<ContractionParams> closed_form;
    std::string regime_note;
    std::optional<LineFit> k_bar_dispersion_fit;  // log sd(K̄ₙ) vs log n
    std::optional<LineFit> rate_dispersion_fit;   // log sd(rate) vs log n
    std::optional<LineFit> final_error_fit;       // log mean final error vs log n
    double seconds = 0.0;
};

inline std::vector<ExperimentAggregate> aggregate_records(const std::vector<ExperimentRecord>& records,
                                                          const std::vector<std::size_t>& sizes,
                                                          std::optional<double> kappa_proxy) {
    std::vector<ExperimentAggregate> out;
    for (std::size_t n : sizes) {
        ExperimentAggregate agg;
        agg.n = n;
        std::vector<double> rates, kbars, finals;
        std::size_t below = 0;
        for (const auto& rec : records) {
            if (rec.n != n) continue;
            ++agg.records;
            finals.push_back(rec.final_error);
            if (rec.rate_status == "ok") {
                rates.push_back(rec.rate.rate);
                if (kappa_proxy && rec.rate.rate < *kappa_proxy) ++below;
            } else {
                ++agg.skipped_too_few_points;
            }
            if (rec.rates && std::isfinite(rec.rates->k_bar_n)) kbars.push_back(rec.rates->k_bar_n);
            if (rec.audit && rec.audit->cumulative_holds()) ++agg.cumulative_bound_holds;
        }
        agg.rates_used = rates.size();
        agg.rate_mean = mean(rates);
        agg.rate_sd = sample_sd(rates);
        if (!rates.empty()) agg.rate_iqr = iqr(rates);
        if (!kbars.empty()) {
            agg.k_bar_mean = mean(kbars);
            agg.k_bar_sd = sample_sd(kbars);
            agg.k_bar_iqr = iqr(kbars);
        }
        agg.final_error_mean = mean(finals);
        agg.final_error_sd = sample_sd(finals);
        if (kappa_proxy && !rates.empty()) agg.frac_rate_below_kappa = static_cast<double>(below) / static_cast<double>(rates.size());
        out.push_back(agg);
    }
    return out;
}

inline ExperimentRecord run_replicate(const ExperimentConfig& cfg, const Vector& theta0, std::size_t n, std::size_t replicate,
                                      double kappa_ceiling, const std::string& ceiling_name) {
    ExperimentRecord rec;
    rec.n = n;
    rec.replicate = replicate;
    rec.seed = replicate_seed(cfg.master_seed, n, replicate);
    const Dataset data = sample_dataset(cfg.model, n, rec.seed);
    const EMTrajectory traj = run_em(data, theta0, cfg.em);
    rec.errors = traj.errors;
    rec.final_error = traj.errors.back();
    rec.iterations = traj.steps();
    rec.stopped_reason = traj.stopped_reason;
    rec.exited_ball = traj.exited_ball;
    try {
        rec.rate = estimate_rate(traj, cfg.rate);
    } catch (const TooFewPoints&) {
        rec.rate_status = "too_few_points";
    } catch (const InvalidArgument&) {
        rec.rate_status = "too_few_points";
    }
    if (cfg.compute_rates) {
        SearchBudget budget = cfg.search;
        budget.threads = 1;
        rec.rates = compute_empirical_rates(data, cfg.ball, budget, kappa_ceiling, ceiling_name);
        rec.audit = verify_contraction_inequality(traj, *rec.rates);
    }
    return rec;
}

inline void fit_summaries(ExperimentResult& result) {
    std::vector<double> ns, kbar_sd, rate_sd, err_mean;
    bool kbar_ok = true, rate_ok = true, err_ok = true;
    for (const auto& agg : result.aggregates) {
        ns.push_back(static_cast<double>(agg.n));
        kbar_sd.push_back(agg.k_bar_sd);
        rate_sd.push_back(agg.rate_sd);
        err_mean.push_back(agg.final_error_mean);
        kbar_ok = kbar_ok && agg.k_bar_sd > 0.0;
        rate_ok = rate_ok && agg.rate_sd > 0.0;
        err_ok = err_ok && agg.final_error_mean > 0.0;
    }
    if (ns.size() < 2) return;
    if (kbar_ok) result.k_bar_dispersion_fit = fit_log_log(ns, kbar_sd);
    if (rate_ok) result.rate_dispersion_fit = fit_log_log(ns, rate_sd);
    if (err_ok) result.final_error_fit = fit_log_log(ns, err_mean);
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    ExperimentResult result;
    result.config = cfg;
    result.theta0 = initial_point(cfg);

    if (cfg.model.kind == ModelKind::GMM && cfg.model.snr() < 2.0)
        result.regime_note = "snr below 2: outside the large-snr regime where the gmm contraction bound is proven";
    try {
        result.closed_form = closed_form_bounds(cfg.model, cfg.ball, cfg.constants);
    } catch (const OutOfRegime& e) {
        if (!result.regime_note.empty()) result.regime_note += "; ";
        result.regime_note += std::string("closed-form bound unavailable: ") + e.what();
    }
    if (cfg.proxy_n > 0) {
        SearchBudget budget = cfg.search;
        budget.threads = cfg.threads;
        result.population = mc_population_grv_bound(cfg.model, cfg.ball, cfg.proxy_n, budget, cfg.master_seed);
    }

    std::vector<double> ceilings;
    for (std::size_t n : cfg.sample_sizes) {
        double ceiling = std::numeric_limits<double>::infinity();
        std::optional<ContractionParams> base;
        if (cfg.ceiling == CeilingSource::ClosedForm) {
            if (!result.closed_form) throw OutOfRegime("closed_form ceiling requested but the bound is unavailable: " + result.regime_note);
            base = result.closed_form;
        } else if (cfg.ceiling == CeilingSource::MonteCarlo) {
            base = result.population->params;
        }
        if (base) {
            const EpsilonBounds eps = epsilon_bounds(cfg.model, cfg.delta, cfg.ball, n, cfg.constants, base);
            ceiling = *eps.kappa_n;
        }
        ceilings.push_back(ceiling);
    }

    struct Job {
        std::size_t size_index;
        std::size_t replicate;
    };
    std::vector<Job> jobs;
    for (std::size_t i = 0; i < cfg.sample_sizes.size(); ++i)
        for (std::size_t r = 0; r < cfg.replicates; ++r) jobs.push_back({i, r});
    result.records.resize(jobs.size());
    const std::string ceiling_name = to_string(cfg.ceiling);
    parallel_for(jobs.size(), cfg.threads, [&](std::size_t j) {
        const Job& job = jobs[j];
        result.records[j] = run_replicate(cfg, result.theta0, cfg.sample_sizes[job.size_index], job.replicate,
                                          ceilings[job.size_index], ceiling_name);
    });

    std::optional<double> kappa_proxy;
    if (result.population) kappa_proxy = result.population->params.kappa;
    result.aggregates = aggregate_records(result.records, cfg.sample_sizes, kappa_proxy);
    fit_summaries(result);
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

inline ExperimentResult run_rate_fluctuation_study(ExperimentConfig cfg) {
    cfg.study = StudyKind::RateFluctuation;
    return run_experiment(cfg);
}

inline ExperimentResult run_rate_stabilization_study(ExperimentConfig cfg) {
    cfg.study = StudyKind::RateStabilization;
    return run_experiment(cfg);
}

inline ExperimentResult run_consistency_study(ExperimentConfig cfg) {
    cfg.study = StudyKind::Consistency;
    return run_experiment(cfg);
}

// ---------------------------------------------------------------------------
// Configuration files

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
    require(j.is_object(), where + " must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw InvalidArgument("unknown key '" + key + "' in " + where);
}

inline double number_or_inf(const nlohmann::json& j, const std::string& what) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        throw InvalidArgument(what + " must be a number or \"inf\"");
    }
    require(j.is_number(), what + " must be a number");
    return j.get<double>();
}

inline Vector vector_from_json(const nlohmann::json& j, const std::string& what) {
    require(j.is_array() && !j.empty(), what + " must be a nonempty array of numbers");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        require(j[i].is_number(), what + " must contain only numbers");
        v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    }
    return v;
}

inline nlohmann::json vector_to_json(const Vector& v) {
    nlohmann::json j = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
    return j;
}

template <typename T>
T get_as(const nlohmann::json& j, const std::string& what) {
    try {
        return j.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw InvalidArgument(what + " has the wrong type");
    }
}

}  // namespace detail

/// Model block: {"kind", "sigma", "epsilon_miss"?, and either "theta_star": [...] or "p" + "snr"}.
/// With p and snr, θ* = snr·σ·(1,…,1)/√p.
inline ModelSpec model_from_json(const nlohmann::json& j) {
    detail::check_keys(j, {"kind", "theta_star", "p", "snr", "sigma", "epsilon_miss"}, "model");
    require(j.contains("kind"), "model.kind is required");
    const ModelKind kind = parse_model_kind(detail::get_as<std::string>(j["kind"], "model.kind"));
    const double sigma = j.contains("sigma") ? detail::get_as<double>(j["sigma"], "model.sigma") : 1.0;
    const double eps = j.contains("epsilon_miss") ? detail::get_as<double>(j["epsilon_miss"], "model.epsilon_miss") : 0.0;
    Vector theta;
    if (j.contains("theta_star")) {
        require(!j.contains("p") && !j.contains("snr"), "give either model.theta_star or model.p with model.snr, not both");
        theta = detail::vector_from_json(j["theta_star"], "model.theta_star");
    } else {
        require(j.contains("p") && j.contains("snr"), "model needs theta_star, or p and snr");
        const auto p = detail::get_as<long long>(j["p"], "model.p");
        require(p >= 1, "model.p must be >= 1");
        const double snr = detail::get_as<double>(j["snr"], "model.snr");
        require(snr >= 0.0, "model.snr must be >= 0");
        theta = Vector::Constant(p, snr * sigma / std::sqrt(static_cast<double>(p)));
    }
    return ModelSpec(kind, theta, sigma, eps);
}

inline nlohmann::json model_to_json(const ModelSpec& m) {
    return {{"kind", to_string(m.kind)}, {"theta_star", detail::vector_to_json(m.theta_star)}, {"sigma", m.sigma},
            {"epsilon_miss", m.epsilon_miss}};
}

inline SearchBudget search_from_json(const nlohmann::json& j, SearchBudget b = {}) {
    detail::check_keys(j, {"directions", "radii", "refine_steps", "min_radius_fraction"}, "search");
    if (j.contains("directions")) b.directions = detail::get_as<std::size_t>(j["directions"], "search.directions");
    if (j.contains("radii")) b.radii = detail::get_as<std::size_t>(j["radii"], "search.radii");
    if (j.contains("refine_steps")) b.refine_steps = detail::get_as<std::size_t>(j["refine_steps"], "search.refine_steps");
    if (j.contains("min_radius_fraction"))
        b.min_radius_fraction = detail::get_as<double>(j["min_radius_fraction"], "search.min_radius_fraction");
    return b;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    detail::check_keys(j, {"schema_version", "study", "model", "sample_sizes", "replicates", "theta0", "ball", "em", "rate",
                           "search", "rates", "constants", "master_seed", "threads"},
                       "config");
    require(j.contains("schema_version"), "config.schema_version is required");
    const int version = detail::get_as<int>(j["schema_version"], "schema_version");
    require(version == kConfigSchemaVersion, "unsupported schema_version " + std::to_string(version) + " (expected " +
                                                 std::to_string(kConfigSchemaVersion) + ")");
    ExperimentConfig cfg;
    require(j.contains("study"), "config.study is required");
    cfg.study = parse_study_kind(detail::get_as<std::string>(j["study"], "study"));
    require(j.contains("model"), "config.model is required");
    cfg.model = model_from_json(j["model"]);
    require(j.contains("sample_sizes"), "config.sample_sizes is required");
    cfg.sample_sizes = detail::get_as<std::vector<std::size_t>>(j["sample_sizes"], "sample_sizes");
    if (j.contains("replicates")) cfg.replicates = detail::get_as<std::size_t>(j["replicates"], "replicates");
    if (j.contains("master_seed")) cfg.master_seed = detail::get_as<std::uint64_t>(j["master_seed"], "master_seed");
    if (j.contains("threads")) cfg.threads = detail::get_as<std::size_t>(j["threads"], "threads");

    cfg.ball = default_ball(cfg.model);
    if (j.contains("ball")) {
        const auto& b = j["ball"];
        detail::check_keys(b, {"r", "R"}, "ball");
        if (b.contains("r")) cfg.ball.r = detail::number_or_inf(b["r"], "ball.r");
        if (b.contains("R")) cfg.ball.R = detail::number_or_inf(b["R"], "ball.R");
    }
    if (j.contains("theta0")) {
        const auto& t = j["theta0"];
        detail::check_keys(t, {"policy", "radius_fraction", "offset"}, "theta0");
        const std::string policy = t.contains("policy") ? detail::get_as<std::string>(t["policy"], "theta0.policy") : "random_in_ball";
        if (policy == "random_in_ball") {
            cfg.theta0.kind = Theta0Policy::Kind::RandomInBall;
            require(!t.contains("offset"), "theta0.offset applies only to the fixed_offset policy");
            if (t.contains("radius_fraction"))
                cfg.theta0.radius_fraction = detail::get_as<double>(t["radius_fraction"], "theta0.radius_fraction");
        } else if (policy == "fixed_offset") {
            cfg.theta0.kind = Theta0Policy::Kind::FixedOffset;
            require(t.contains("offset"), "theta0.offset is required for the fixed_offset policy");
            cfg.theta0.offset = detail::vector_from_json(t["offset"], "theta0.offset");
        } else {
            throw InvalidArgument("unknown theta0.policy '" + policy + "' (expected random_in_ball or fixed_offset)");
        }
    }
    if (j.contains("em")) {
        const auto& e = j["em"];
        detail::check_keys(e, {"max_iters", "param_tol"}, "em");
        if (e.contains("max_iters")) cfg.em.max_iters = detail::get_as<std::size_t>(e["max_iters"], "em.max_iters");
        if (e.contains("param_tol")) cfg.em.param_tol = detail::get_as<double>(e["param_tol"], "em.param_tol");
    }
    cfg.em.outer_radius = cfg.ball.R;
    if (j.contains("rate")) {
        const auto& r = j["rate"];
        detail::check_keys(r, {"tail_fraction", "floor_multiplier", "reference"}, "rate");
        if (r.contains("tail_fraction")) cfg.rate.tail_fraction = detail::get_as<double>(r["tail_fraction"], "rate.tail_fraction");
        if (r.contains("floor_multiplier"))
            cfg.rate.floor_multiplier = detail::get_as<double>(r["floor_multiplier"], "rate.floor_multiplier");
        if (r.contains("reference")) cfg.rate.reference = parse_error_reference(detail::get_as<std::string>(r["reference"], "rate.reference"));
    }
    if (j.contains("search")) cfg.search = search_from_json(j["search"]);
    if (j.contains("rates")) {
        const auto& r = j["rates"];
        detail::check_keys(r, {"compute", "ceiling", "proxy_n", "delta"}, "rates");
        if (r.contains("compute")) cfg.compute_rates = detail::get_as<bool>(r["compute"], "rates.compute");
        if (r.contains("ceiling")) cfg.ceiling = parse_ceiling_source(detail::get_as<std::string>(r["ceiling"], "rates.ceiling"));
        if (r.contains("proxy_n")) cfg.proxy_n = detail::get_as<std::size_t>(r["proxy_n"], "rates.proxy_n");
        if (r.contains("delta")) cfg.delta = detail::get_as<double>(r["delta"], "rates.delta");
    }
    if (j.contains("constants")) cfg.constants = constants_from_json(j["constants"]);
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "cannot open config file " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidArgument("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["schema_version"] = kConfigSchemaVersion;
    j["study"] = to_string(cfg.study);
    j["model"] = model_to_json(cfg.model);
    j["sample_sizes"] = cfg.sample_sizes;
    j["replicates"] = cfg.replicates;
    if (cfg.theta0.kind == Theta0Policy::Kind::FixedOffset)
        j["theta0"] = {{"policy", "fixed_offset"}, {"offset", detail::vector_to_json(cfg.theta0.offset)}};
    else
        j["theta0"] = {{"policy", "random_in_ball"}, {"radius_fraction", cfg.theta0.radius_fraction}};
    j["ball"] = {{"r", cfg.ball.r}, {"R", std::isfinite(cfg.ball.R) ? nlohmann::json(cfg.ball.R) : nlohmann::json("inf")}};
    j["em"] = {{"max_iters", cfg.em.max_iters}, {"param_tol", cfg.em.param_tol}};
    j["rate"] = {{"tail_fraction", cfg.rate.tail_fraction}, {"floor_multiplier", cfg.rate.floor_multiplier},
                 {"reference", to_string(cfg.rate.reference)}};
    j["search"] = to_json(cfg.search);
    j["rates"] = {{"compute", cfg.compute_rates}, {"ceiling", to_string(cfg.ceiling)}, {"proxy_n", cfg.proxy_n}, {"delta", cfg.delta}};
    nlohmann::json constants = to_json(cfg.constants);
    constants.erase("note");
    j["constants"] = constants;
    j["master_seed"] = cfg.master_seed;
    return j;
}

// ---------------------------------------------------------------------------
// Output files

inline std::string optional_number(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

inline void write_records_csv(std::ostream& out, const ExperimentResult& result) {
    out << "n,replicate,seed,rate_status,rate,r_squared,fit_last,floor,final_error,iterations,stopped_reason,exited_ball,"
           "gamma_bar_n,v_bar_n,e_bar_n,k_bar_n,kappa_n_ceiling,floor_bound,per_step_violations,cumulative_violations,"
           "cumulative_available\n";
    for (const auto& rec : result.records) {
        const bool ok = rec.rate_status == "ok";
        out << rec.n << ',' << rec.replicate << ',' << rec.seed << ',' << rec.rate_status << ','
            << (ok ? format_double(rec.rate.rate) : "") << ',' << (ok ? format_double(rec.rate.r_squared) : "") << ','
            << (ok ? std::to_string(rec.rate.fit_last) : "") << ',' << (ok ? format_double(rec.rate.floor) : "") << ','
            << format_double(rec.final_error) << ',' << rec.iterations << ',' << to_string(rec.stopped_reason) << ','
            << (rec.exited_ball ? 1 : 0) << ',';
        if (rec.rates) {
            const auto& r = *rec.rates;
            out << format_double(r.gamma_bar_n) << ',' << format_double(r.v_bar_n) << ',' << format_double(r.e_bar_n) << ','
                << format_double(r.k_bar_n) << ',' << format_double(r.kappa_n_ceiling) << ',' << optional_number(r.floor_bound)
                << ',' << rec.audit->per_step_violations << ',' << rec.audit->cumulative_violations << ','
                << (rec.audit->cumulative_available ? 1 : 0);
        } else {
            out << ",,,,,,,,";
        }
        out << '\n';
    }
}

inline void write_aggregates_csv(std::ostream& out, const ExperimentResult& result) {
    out << "n,records,rates_used,skipped_too_few_points,rate_mean,rate_sd,rate_iqr,k_bar_mean,k_bar_sd,k_bar_iqr,"
           "final_error_mean,final_error_sd,frac_rate_below_kappa,cumulative_bound_holds\n";
    for (const auto& a : result.aggregates) {
        out << a.n << ',' << a.records << ',' << a.rates_used << ',' << a.skipped_too_few_points << ','
            << format_double(a.rate_mean) << ',' << format_double(a.rate_sd) << ',' << format_double(a.rate_iqr) << ','
            << format_double(a.k_bar_mean) << ',' << format_double(a.k_bar_sd) << ',' << format_double(a.k_bar_iqr) << ','
            << format_double(a.final_error_mean) << ',' << format_double(a.final_error_sd) << ','
            << format_double(a.frac_rate_below_kappa) << ',' << a.cumulative_bound_holds << '\n';
    }
}

inline nlohmann::json summary_json(const ExperimentResult& result) {
    auto fit = [](const std::optional<LineFit>& f) {
        return f ? nlohmann::json{{"slope", f->slope}, {"intercept", f->intercept}, {"r_squared", f->r_squared}}
                 : nlohmann::json(nullptr);
    };
    nlohmann::json j;
    j["study"] = to_string(result.config.study);
    j["theta0"] = detail::vector_to_json(result.theta0);
    j["regime_note"] = result.regime_note;
    j["closed_form"] = result.closed_form ? to_json(*result.closed_form) : nlohmann::json(nullptr);
    if (result.population) {
        j["population_proxy"] = to_json(result.population->params);
        j["population_proxy"]["n_mc"] = result.config.proxy_n;
        j["population_proxy"]["warnings"] = result.population->warnings;
    } else {
        j["population_proxy"] = nullptr;
    }
    j["k_bar_dispersion_fit"] = fit(result.k_bar_dispersion_fit);
    j["rate_dispersion_fit"] = fit(result.rate_dispersion_fit);
    j["final_error_fit"] = fit(result.final_error_fit);
    j["seconds"] = result.seconds;
    return j;
}

/// Writes records.csv, aggregates.csv, summary.json and plotdata/ into `dir`; returns the files written.
inline std::vector<std::filesystem::path> write_experiment_outputs(const ExperimentResult& result, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "plotdata");
    std::vector<fs::path> files;
    auto open = [&](const fs::path& p) {
        std::ofstream out(p, std::ios::binary);
        if (!out) throw Error("cannot write " + p.string());
        files.push_back(p);
        return out;
    };
    {
        auto out = open(dir / "records.csv");
        write_records_csv(out, result);
    }
    {
        auto out = open(dir / "aggregates.csv");
        write_aggregates_csv(out, result);
    }
    {
        auto out = open(dir / "summary.json");
        out << summary_json(result).dump(2) << '\n';
    }
    for (const auto& rec : result.records) {
        auto out = open(dir / "plotdata" / ("n" + std::to_string(rec.n) + "_rep" + std::to_string(rec.replicate) + ".csv"));
        out << "t,log_error\n";
        for (std::size_t t = 0; t < rec.errors.size(); ++t) out << t << ',' << format_double(std::log(rec.errors[t])) << '\n';
    }
    return files;
}

}  // namespace emrate
