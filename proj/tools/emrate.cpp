// emrate command-line tool.
//
//   emrate simulate   --model gmm --p 5 --snr 2 --n 1000 --seed 1
//   emrate run-em     --data out/dataset.csv
//   emrate rates      --data out/dataset.csv --r 0.5
//   emrate oracle     --model gmm --p 5 --snr 2 --mc-n 100000
//   emrate experiment --config configs/rate_fluctuation.json
//
// Every command writes into --out (default: $EMRATE_OUTPUT_DIR, else ./emrate_out)
// together with a manifest.json listing checksums and timings.
// Exit codes: 0 success, 2 invalid input, 3 numerical failure.

#include "emrate/emrate.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace emrate;

namespace {

constexpr int kExitInvalid = 2;
constexpr int kExitNumerical = 3;

std::string default_output_dir() {
    if (const char* env = std::getenv("EMRATE_OUTPUT_DIR"); env && *env) return env;
    return "emrate_out";
}

Vector parse_vector(const std::string& text, const std::string& what) {
    const auto fields = split(text, ',');
    require(!fields.empty(), what + " must be a comma-separated list of numbers");
    Vector v(static_cast<Eigen::Index>(fields.size()));
    for (std::size_t i = 0; i < fields.size(); ++i) {
        try {
            v[static_cast<Eigen::Index>(i)] = parse_double(fields[i]);
        } catch (const InvalidArgument&) {
            throw InvalidArgument(what + ": cannot parse '" + fields[i] + "'");
        }
    }
    return v;
}

std::string vector_text(const Vector& v) {
    std::string out;
    for (Eigen::Index i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
    return out;
}

struct ModelOptions {
    std::string kind = "gmm";
    std::size_t p = 5;
    std::string theta_star;
    double snr = 1.0;
    double sigma = 1.0;
    double eps_miss = 0.0;

    void add(CLI::App& app) {
        app.add_option("--model", kind, "Model kind: gmm, mlr or rmc")->check(CLI::IsMember({"gmm", "mlr", "rmc"}));
        app.add_option("--p", p, "Dimension (used with --snr when --theta-star is absent)");
        app.add_option("--theta-star", theta_star, "True parameter as a comma-separated list");
        app.add_option("--snr", snr, "Signal-to-noise ratio; theta_star = snr*sigma*(1,...,1)/sqrt(p)");
        app.add_option("--sigma", sigma, "Noise standard deviation");
        app.add_option("--eps-miss", eps_miss, "Missingness probability (rmc only)");
    }

    ModelSpec build() const {
        Vector theta;
        if (!theta_star.empty()) {
            theta = parse_vector(theta_star, "--theta-star");
        } else {
            require(p >= 1, "--p must be >= 1");
            require(snr >= 0.0, "--snr must be >= 0");
            theta = Vector::Constant(static_cast<Eigen::Index>(p), snr * sigma / std::sqrt(static_cast<double>(p)));
        }
        return ModelSpec(parse_model_kind(kind), theta, sigma, eps_miss);
    }
};

struct BallOptions {
    std::optional<double> r;
    std::optional<double> R;

    void add(CLI::App& app) {
        app.add_option("--r", r, "Inner contraction radius (default |theta_star|/4)");
        app.add_option("--R", R, "Outer radius (default infinity)");
    }

    BallSpec build(const ModelSpec& model) const {
        BallSpec ball = default_ball(model);
        if (r) ball.r = *r;
        if (R) ball.R = *R;
        ball.validate();
        return ball;
    }
};

struct BudgetOptions {
    SearchBudget budget;

    void add(CLI::App& app) {
        app.add_option("--directions", budget.directions, "Quasi-random sphere directions in the search lattice");
        app.add_option("--radii", budget.radii, "Log-spaced radii in the search lattice");
        app.add_option("--refine-steps", budget.refine_steps, "Pattern-search refinement steps per start");
    }
};

nlohmann::json model_json(const ModelSpec& m) { return model_to_json(m); }

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

void finish(RunManifest& manifest, const fs::path& dir, const Stopwatch& total) {
    manifest.add_timing("total", total.seconds());
    const auto path = manifest.write(dir);
    std::cout << "wrote " << path.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EM convergence-rate toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string out_dir = default_output_dir();
    std::size_t threads = 0;
    app.add_option("--out", out_dir, "Output directory (default: $EMRATE_OUTPUT_DIR or ./emrate_out)");
    app.add_option("--threads", threads, "Worker threads (0 = hardware parallelism)");

    // simulate
    auto* sim = app.add_subcommand("simulate", "Draw a dataset and save it as CSV");
    ModelOptions sim_model;
    sim_model.add(*sim);
    long long sim_n = 1000;
    std::uint64_t sim_seed = 1;
    sim->add_option("--n", sim_n, "Sample size (>= 1)");
    sim->add_option("--seed", sim_seed, "Dataset seed");

    // run-em
    auto* em = app.add_subcommand("run-em", "Run EM on a stored dataset and write its trajectory");
    std::string em_data;
    std::string em_theta0;
    EMSettings em_settings;
    std::uint64_t em_seed = 1;
    bool em_iterates = false;
    std::string em_reference = "true_parameter";
    BallOptions em_ball;
    em->add_option("--data", em_data, "Dataset CSV")->required();
    em->add_option("--theta0", em_theta0, "Starting point (default: theta_star plus a seeded offset of length r/2)");
    em->add_option("--max-iters", em_settings.max_iters, "Maximum EM iterations");
    em->add_option("--tol", em_settings.param_tol, "Stop when |theta_{t+1} - theta_t| <= tol");
    em->add_option("--seed", em_seed, "Seed for the default starting direction");
    em->add_flag("--iterates", em_iterates, "Include theta coordinates in the trajectory CSV");
    em->add_option("--rate-reference", em_reference, "Rate fit reference: true_parameter or final_iterate")
        ->check(CLI::IsMember({"true_parameter", "final_iterate"}));
    em_ball.add(*em);

    // rates
    auto* rates = app.add_subcommand("rates", "Empirical contraction quantities for a dataset and ball");
    std::string rates_data;
    BallOptions rates_ball;
    BudgetOptions rates_budget;
    std::string rates_ceiling = "none";
    std::size_t rates_mc_n = 1000000;
    double rates_delta = 0.05;
    std::uint64_t rates_seed = 1;
    std::string rates_constants;
    rates->add_option("--data", rates_data, "Dataset CSV")->required();
    rates_ball.add(*rates);
    rates_budget.add(*rates);
    rates->add_option("--ceiling", rates_ceiling, "Source of the rate ceiling: none, closed_form or monte_carlo")
        ->check(CLI::IsMember({"none", "closed_form", "monte_carlo"}));
    rates->add_option("--mc-n", rates_mc_n, "Population-proxy size for the monte_carlo ceiling");
    rates->add_option("--delta", rates_delta, "Confidence parameter for the concentration terms");
    rates->add_option("--seed", rates_seed, "Population-proxy seed");
    rates->add_option("--constants-file", rates_constants, "JSON file with bound constants");

    // oracle
    auto* oracle = app.add_subcommand("oracle", "Closed-form bounds, Monte-Carlo population estimates, concentration terms");
    ModelOptions oracle_model;
    oracle_model.add(*oracle);
    BallOptions oracle_ball;
    oracle_ball.add(*oracle);
    BudgetOptions oracle_budget;
    oracle_budget.add(*oracle);
    std::size_t oracle_mc_n = 0;
    std::string oracle_constants;
    double oracle_delta = 0.05;
    long long oracle_n = 10000;
    std::uint64_t oracle_seed = 1;
    oracle->add_option("--mc-n", oracle_mc_n, "Population-proxy size (0 skips the Monte-Carlo estimate)");
    oracle->add_option("--constants-file", oracle_constants, "JSON file with bound constants");
    oracle->add_option("--delta", oracle_delta, "Confidence parameter");
    oracle->add_option("--n", oracle_n, "Sample size for the concentration terms");
    oracle->add_option("--seed", oracle_seed, "Population-proxy seed");

    // experiment
    auto* exp = app.add_subcommand("experiment", "Run a replicate study from a JSON config");
    std::string exp_config;
    exp->add_option("--config", exp_config, "Study configuration (JSON)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitInvalid;
    }

    const Stopwatch total;
    try {
        if (threads > 0) default_thread_count() = threads;
        const fs::path dir(out_dir);
        auto load_constants = [](const std::string& path) {
            if (path.empty()) return BoundConstants{};
            std::ifstream in(path);
            require(static_cast<bool>(in), "cannot open constants file " + path);
            try {
                return constants_from_json(nlohmann::json::parse(in));
            } catch (const nlohmann::json::parse_error& e) {
                throw InvalidArgument("constants file " + path + " is not valid JSON: " + e.what());
            }
        };

        if (*sim) {
            require(sim_n >= 1, "--n must satisfy n >= 1 (got " + std::to_string(sim_n) + ")");
            const ModelSpec model = sim_model.build();
            fs::create_directories(dir);
            const Dataset data = sample_dataset(model, static_cast<std::size_t>(sim_n), sim_seed, threads);
            const fs::path path = dir / "dataset.csv";
            save_dataset(path.string(), data);
            RunManifest manifest("simulate", {{"model", model_json(model)}, {"n", sim_n}, {"seed", sim_seed}}, sim_seed);
            manifest.add_file(path);
            finish(manifest, dir, total);
        } else if (*em) {
            const Dataset data = load_dataset(em_data);
            const BallSpec ball = em_ball.build(data.model);
            Vector theta0;
            if (!em_theta0.empty()) {
                theta0 = parse_vector(em_theta0, "--theta0");
            } else {
                const Vector u = random_unit_vector(data.p(), derive_seed(em_seed, static_cast<std::uint64_t>(SeedNamespace::StartPoint)));
                theta0 = data.model.theta_star + 0.5 * ball.r * u;
            }
            em_settings.outer_radius = ball.R;
            const EMTrajectory traj = run_em(data, theta0, em_settings);
            fs::create_directories(dir);
            const fs::path traj_path = dir / "trajectory.csv";
            {
                std::ofstream out(traj_path, std::ios::binary);
                write_trajectory_csv(out, traj, em_iterates);
            }
            RateOptions ro;
            ro.reference = parse_error_reference(em_reference);
            nlohmann::json summary{{"theta0", vector_text(theta0)}, {"iterations", traj.steps()},
                                   {"stopped_reason", to_string(traj.stopped_reason)}, {"final_error", traj.errors.back()},
                                   {"exited_ball", traj.exited_ball}, {"dataset_seed", traj.dataset_seed}};
            try {
                const RateEstimate rate = estimate_rate(traj, ro);
                summary["rate"] = {{"rate", rate.rate}, {"floor", rate.floor}, {"fit_first", rate.fit_first},
                                   {"fit_last", rate.fit_last}, {"r_squared", rate.r_squared},
                                   {"reference", to_string(rate.reference)}};
            } catch (const TooFewPoints& e) {
                summary["rate"] = {{"error", e.what()}};
            } catch (const InvalidArgument& e) {
                summary["rate"] = {{"error", e.what()}};
            }
            const fs::path summary_path = dir / "em_summary.json";
            write_json(summary_path, summary);
            RunManifest manifest("run-em",
                                 {{"data", em_data}, {"data_sha256", sha256_file(em_data)}, {"theta0", vector_text(theta0)},
                                  {"max_iters", em_settings.max_iters}, {"tol", em_settings.param_tol},
                                  {"rate_reference", em_reference}},
                                 data.seed);
            manifest.add_files(std::vector<fs::path>{traj_path, summary_path});
            finish(manifest, dir, total);
        } else if (*rates) {
            const Dataset data = load_dataset(rates_data);
            const BallSpec ball = rates_ball.build(data.model);
            SearchBudget budget = rates_budget.budget;
            budget.threads = threads;
            const BoundConstants constants = load_constants(rates_constants);
            const CeilingSource source = parse_ceiling_source(rates_ceiling);
            double ceiling = std::numeric_limits<double>::infinity();
            nlohmann::json ceiling_info = nullptr;
            if (source != CeilingSource::None) {
                ContractionParams base = source == CeilingSource::ClosedForm
                                             ? closed_form_bounds(data.model, ball, constants)
                                             : mc_population_grv_bound(data.model, ball, rates_mc_n, budget, rates_seed).params;
                const EpsilonBounds eps = epsilon_bounds(data.model, rates_delta, ball, data.n(), constants, base);
                ceiling = *eps.kappa_n;
                ceiling_info = {{"params", to_json(base)}, {"epsilon_bounds", to_json(eps)}};
            }
            const EmpiricalRates er = compute_empirical_rates(data, ball, budget, ceiling, rates_ceiling);
            nlohmann::json j = to_json(er);
            j["ceiling_inputs"] = ceiling_info;
            fs::create_directories(dir);
            const fs::path path = dir / "rates.json";
            write_json(path, j);
            for (const auto& w : er.warnings) std::cerr << "warning: " << w << '\n';
            RunManifest manifest("rates",
                                 {{"data", rates_data}, {"data_sha256", sha256_file(rates_data)}, {"r", ball.r},
                                  {"budget", to_json(budget)}, {"ceiling", rates_ceiling}},
                                 data.seed);
            manifest.add_file(path);
            finish(manifest, dir, total);
        } else if (*oracle) {
            const ModelSpec model = oracle_model.build();
            const BallSpec ball = oracle_ball.build(model);
            const BoundConstants constants = load_constants(oracle_constants);
            require(oracle_n >= 1, "--n must be >= 1");
            SearchBudget budget = oracle_budget.budget;
            budget.threads = threads;
            nlohmann::json j;
            j["model"] = model_json(model);
            j["ball"] = {{"r", ball.r}, {"R", std::isfinite(ball.R) ? nlohmann::json(ball.R) : nlohmann::json("inf")}};
            std::optional<ContractionParams> base;
            try {
                base = closed_form_bounds(model, ball, constants);
                j["closed_form"] = to_json(*base);
            } catch (const OutOfRegime& e) {
                j["closed_form"] = {{"error", e.what()}};
            }
            if (oracle_mc_n > 0) {
                const Stopwatch mc;
                const PopulationEstimate pe = mc_population_grv_bound(model, ball, oracle_mc_n, budget, oracle_seed);
                j["monte_carlo"] = to_json(pe.params);
                j["monte_carlo"]["n_mc"] = oracle_mc_n;
                j["monte_carlo"]["budget"] = to_json(budget);
                j["monte_carlo"]["warnings"] = pe.warnings;
                j["monte_carlo"]["seconds"] = mc.seconds();
                if (!base) base = pe.params;
            }
            const EpsilonBounds eps = epsilon_bounds(model, oracle_delta, ball, static_cast<std::size_t>(oracle_n), constants, base);
            j["epsilon_bounds"] = to_json(eps);
            if (base) j["sample_size_conditions"] = to_json(check_sample_size_conditions(*base, eps, ball));
            fs::create_directories(dir);
            const fs::path path = dir / "oracle.json";
            write_json(path, j);
            RunManifest manifest("oracle",
                                 {{"model", model_json(model)}, {"mc_n", oracle_mc_n}, {"n", oracle_n}, {"delta", oracle_delta},
                                  {"constants", to_json(constants)}},
                                 oracle_seed);
            manifest.add_file(path);
            finish(manifest, dir, total);
        } else if (*exp) {
            ExperimentConfig cfg = load_config(exp_config);
            if (threads > 0) cfg.threads = threads;
            const ExperimentResult result = run_experiment(cfg);
            const auto files = write_experiment_outputs(result, dir);
            RunManifest manifest("experiment", config_to_json(cfg), cfg.master_seed);
            manifest.add_files(files);
            manifest.add_timing("study", result.seconds);
            std::cout << "records: " << result.records.size() << '\n';
            finish(manifest, dir, total);
        }
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const OutOfRegime& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
