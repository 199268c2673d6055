#include "emrate/emrate.hpp"

#include <cstdio>
#include <filesystem>
#include <numbers>
#include <sstream>
#include <string>

using namespace emrate;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o, double seconds) {
    if (!o.pass) ++failures;
    std::printf("%s  criterion %d  %-34s %7.1fs  %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), seconds, o.detail.c_str());
    std::fflush(stdout);
}

template <typename F>
void run(int id, const std::string& name, F&& body) {
    Stopwatch sw;
    Outcome o;
    try {
        o = body(sw);
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    report(id, name, o, sw.seconds());
}

std::string fmt(double x, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, x);
    return buf;
}

ExperimentConfig config(const std::string& name) { return load_config(std::filesystem::path(EMRATE_CONFIG_DIR) / name); }

std::string records_text(const ExperimentResult& r) {
    std::ostringstream out;
    write_records_csv(out, r);
    write_aggregates_csv(out, r);
    return out.str();
}

Vector random_vector(CounterRng& rng, std::size_t p) {
    Vector v(static_cast<Eigen::Index>(p));
    for (Eigen::Index j = 0; j < v.size(); ++j) v[j] = rng.normal();
    return v;
}

ModelSpec random_model(ModelKind kind, CounterRng& rng) {
    const std::size_t p = 1 + static_cast<std::size_t>(rng.uniform() * 5.0);
    const double sigma = 0.5 + 1.5 * rng.uniform();
    const Vector theta = random_vector(rng, p);
    return ModelSpec(kind, theta, sigma, kind == ModelKind::RMC ? 0.5 * rng.uniform() : 0.0);
}

Outcome rate_fluctuation(const ExperimentResult& res, double seconds) {
    const auto& agg = res.aggregates.front();
    std::size_t bad_rate = 0, bad_fit = 0;
    double worst_r2 = 1.0, max_rate = 0.0;
    for (const auto& rec : res.records) {
        if (rec.rate_status != "ok") {
            ++bad_fit;
            continue;
        }
        max_rate = std::max(max_rate, rec.rate.rate);
        worst_r2 = std::min(worst_r2, rec.rate.r_squared);
        if (!(rec.rate.rate < 1.0)) ++bad_rate;
        if (!(rec.rate.r_squared > 0.9)) ++bad_fit;
    }
    const bool pass = bad_rate == 0 && bad_fit == 0 && agg.rate_sd > 0.005 && seconds < 10.0;
    return {pass, "max rate " + fmt(max_rate) + ", rate sd " + fmt(agg.rate_sd) + " (> 0.005), min r^2 " + fmt(worst_r2) +
                      ", unfit " + std::to_string(bad_fit) + ", time < 10s"};
}

Outcome rate_stabilization(const ExperimentResult& res, double seconds) {
    bool decreasing = true;
    std::string sds;
    for (std::size_t i = 0; i < res.aggregates.size(); ++i) {
        sds += (i ? " > " : "") + fmt(res.aggregates[i].rate_sd);
        if (i && !(res.aggregates[i].rate_sd < res.aggregates[i - 1].rate_sd)) decreasing = false;
    }
    const double slope = res.k_bar_dispersion_fit ? res.k_bar_dispersion_fit->slope : std::nan("");
    const bool pass = decreasing && slope >= -0.75 && slope <= -0.25 && seconds < 120.0;
    return {pass, "rate sd " + sds + ", sd(K) slope " + fmt(slope) + " in [-0.75, -0.25], time < 120s"};
}

Outcome consistency(const ExperimentResult& res, double seconds) {
    const double slope = res.final_error_fit ? res.final_error_fit->slope : std::nan("");
    std::string means;
    for (std::size_t i = 0; i < res.aggregates.size(); ++i) means += (i ? ", " : "") + fmt(res.aggregates[i].final_error_mean);
    const bool pass = slope >= -0.6 && slope <= -0.4 && seconds < 300.0;
    return {pass, "mean final error " + means + ", slope " + fmt(slope) + " in [-0.6, -0.4], time < 300s"};
}

Outcome kbar_concentration(const ExperimentResult& res) {
    if (!res.population) return {false, "no population proxy"};
    const double kappa = res.population->params.kappa;
    bool decreasing = true;
    double prev = std::numeric_limits<double>::infinity(), gap = 0.0, se = 0.0;
    std::string gaps;
    for (const auto& agg : res.aggregates) {
        gap = std::abs(agg.k_bar_mean - kappa);
        se = agg.k_bar_sd / std::sqrt(static_cast<double>(agg.records));
        gaps += (gaps.empty() ? "" : ", ") + fmt(gap, 3) + " (" + fmt(gap / se, 3) + " se)";
        if (!(gap < prev)) decreasing = false;
        prev = gap;
    }
    const bool pass = decreasing && gap < 3.0 * se;
    return {pass, "proxy " + fmt(kappa, 5) + ", gaps " + gaps + "; decreasing and final < 3 se"};
}

Outcome contraction_audit(const ExperimentResult& res, std::size_t n) {
    for (const auto& agg : res.aggregates)
        if (agg.n == n)
            return {agg.cumulative_bound_holds >= 19,
                    "cumulative bound held in " + std::to_string(agg.cumulative_bound_holds) + "/" + std::to_string(agg.records) +
                        " runs at n=" + std::to_string(n) + " (>= 19)"};
    return {false, "sample size missing"};
}

Outcome rmc_population_oracle(double seconds_budget, const Stopwatch& sw) {
    CounterRng rng(derive_seed(6, 6));
    const std::size_t draws = 1000000;
    double worst = 0.0;
    for (int c = 0; c < 5; ++c) {
        const std::size_t p = 2 + static_cast<std::size_t>(rng.uniform() * 3.0);
        const double sigma = 0.5 + rng.uniform();
        const Vector truth = random_vector(rng, p);
        const Vector theta = truth + 0.3 * random_vector(rng, p);
        Vector mask(static_cast<Eigen::Index>(p));
        do {
            for (Eigen::Index j = 0; j < mask.size(); ++j) mask[j] = rng.uniform() < 0.5 ? 1.0 : 0.0;
        } while (mask.sum() == static_cast<double>(p));
        const ModelSpec model = ModelSpec::rmc(truth, sigma, 0.1);
        const auto exact = rmc_population_moments(model, theta, mask);
        const Dataset full = sample_dataset(ModelSpec::rmc(truth, sigma, 0.0), draws, rng.next_u64());
        const auto P = static_cast<Eigen::Index>(p);
        Matrix sum_s = Matrix::Zero(P, P), sq_s = Matrix::Zero(P, P);
        Vector sum_g = Vector::Zero(P), sq_g = Vector::Zero(P);
        for (std::size_t k = 0; k < draws; ++k) {
            Sample s = full.sample(k);
            s.obs = s.obs.cwiseProduct(mask);
            s.mask = mask;
            const Matrix sig = rmc_conditional_moments(model, theta, s).sigma;
            const Vector g = per_sample_quantities(model, theta, theta, s).grv;
            sum_s += sig;
            sq_s += sig.cwiseProduct(sig);
            sum_g += g;
            sq_g += g.cwiseProduct(g);
        }
        const double n = static_cast<double>(draws);
        auto z = [&](double sum, double sq, double target) {
            const double mean = sum / n;
            const double se = std::sqrt(std::max(sq / n - mean * mean, 0.0) / (n - 1));
            const double diff = std::abs(mean - target);
            return se > 0.0 ? diff / se : (diff < 1e-12 ? 0.0 : std::numeric_limits<double>::infinity());
        };
        for (Eigen::Index i = 0; i < P; ++i) {
            worst = std::max(worst, z(sum_g[i], sq_g[i], exact.e_grv[i]));
            for (Eigen::Index j = 0; j < P; ++j) worst = std::max(worst, z(sum_s(i, j), sq_s(i, j), exact.e_sigma(i, j)));
        }
    }
    const bool pass = worst < 5.0 && sw.seconds() < seconds_budget;
    return {pass, "largest deviation " + fmt(worst, 3) + " se over 5 configurations (< 5), time < 60s"};
}

Outcome exactness() {
    std::string notes;
    bool pass = true;
    CounterRng rng(derive_seed(7, 7));
    for (double sigma : {0.3, 1.0, 1.7}) {
        const auto m = ModelSpec::gmm(Vector::Constant(3, 1.0), sigma);
        const Dataset d = sample_dataset(m, 500, rng.next_u64());
        const double v = estimate_v_bar_n(d, default_ball(m));
        pass = pass && v == 1.0 / (2.0 * sigma * sigma);
        const auto cf = closed_form_bounds(m, default_ball(m));
        const auto eps = epsilon_bounds(m, 0.05, default_ball(m), 500, {}, cf);
        pass = pass && eps.eps2 == 0.0 && *eps.nu_n == cf.nu;
    }
    notes += std::string("gmm V exact and eps2 = 0: ") + (pass ? "yes" : "no");

    double worst = 0.0;
    for (std::size_t p : {1u, 2u, 3u}) {
        const auto m = ModelSpec::mlr(Vector::Constant(static_cast<Eigen::Index>(p), 1.0), 1.3);
        const Dataset d = sample_dataset(m, 2000, rng.next_u64());
        const double v = estimate_v_bar_n(d, default_ball(m));
        const Matrix s = concavity_matrix(d, m.theta_star) / (2.0 * 1.69);
        auto quad = [&](const Vector& u) { return u.dot(s * u) / u.squaredNorm(); };
        double brute = std::numeric_limits<double>::infinity();
        Vector best;
        auto consider = [&](const Vector& u) {
            const double q = quad(u);
            if (q < brute) {
                brute = q;
                best = u;
            }
        };
        if (p == 1) {
            consider(Vector::Ones(1));
        } else if (p == 2) {
            for (int k = 0; k < 10000; ++k) {
                const double a = std::numbers::pi * k / 10000.0;
                consider((Vector(2) << std::cos(a), std::sin(a)).finished());
            }
        } else {
            for (int i = 0; i < 100; ++i)
                for (int k = 0; k < 100; ++k) {
                    const double polar = std::numbers::pi * (i + 0.5) / 100.0;
                    const double az = 2.0 * std::numbers::pi * k / 100.0;
                    consider((Vector(3) << std::sin(polar) * std::cos(az), std::sin(polar) * std::sin(az), std::cos(polar)).finished());
                }
            // polish the best grid direction with a shrinking coordinate search
            double step = 0.05;
            while (step > 1e-9) {
                bool moved = false;
                for (Eigen::Index j = 0; j < 3; ++j)
                    for (double sign : {1.0, -1.0}) {
                        Vector trial = best;
                        trial[j] += sign * step;
                        trial.normalize();
                        if (quad(trial) < brute) {
                            brute = quad(trial);
                            best = trial;
                            moved = true;
                        }
                    }
                if (!moved) step *= 0.5;
            }
        }
        worst = std::max(worst, std::abs(v - brute) / std::max(std::abs(brute), 1e-12));
    }
    pass = pass && worst < 1e-6;
    notes += ", mlr V vs direction grid rel err " + fmt(worst, 3) + " (< 1e-6)";
    return {pass, notes};
}

Outcome numerical_correctness(const ExperimentConfig& det_cfg, const ExperimentResult& det_first) {
    CounterRng rng(derive_seed(8, 8));
    double worst_fd = 0.0, worst_crv = 0.0, worst_ascent = 0.0;
    for (ModelKind kind : {ModelKind::GMM, ModelKind::MLR, ModelKind::RMC}) {
        for (int c = 0; c < 100; ++c) {
            const ModelSpec m = random_model(kind, rng);
            const Vector theta = random_vector(rng, m.p());
            const Vector theta_prime = random_vector(rng, m.p());
            const Sample s = draw_sample(m, rng.next_u64(), 0);
            const Vector g = q_gradient(m, theta_prime, theta, s);
            Vector fd(g.size());
            for (Eigen::Index j = 0; j < g.size(); ++j) {
                Vector up = theta_prime, down = theta_prime;
                up[j] += 1e-6;
                down[j] -= 1e-6;
                fd[j] = (q_value(m, up, theta, s) - q_value(m, down, theta, s)) / 2e-6;
            }
            worst_fd = std::max(worst_fd, (fd - g).norm() / std::max(g.norm(), 1.0));
            const double crv = per_sample_quantities(m, theta_prime, theta, s).crv;
            const double taylor = q_value(m, theta_prime, theta, s) - q_value(m, m.theta_star, theta, s) -
                                  q_gradient(m, m.theta_star, theta, s).dot(theta_prime - m.theta_star);
            worst_crv = std::max(worst_crv, std::abs(crv - taylor) / std::max(std::abs(taylor), 1.0));
        }
        for (int c = 0; c < 10; ++c) {
            const ModelSpec m = random_model(kind, rng);
            const Dataset d = sample_dataset(m, 300, rng.next_u64());
            EMSettings settings;
            settings.max_iters = 50;
            const auto traj = run_em(d, random_vector(rng, m.p()), settings);
            for (std::size_t t = 0; t < traj.steps(); ++t) {
                worst_ascent = std::max(worst_ascent, -traj.q_gains[t]);
                worst_ascent = std::max(worst_ascent, traj.loglik[t] - traj.loglik[t + 1]);
            }
        }
    }
    const bool identical = records_text(run_experiment(det_cfg)) == records_text(det_first);
    const bool pass = worst_fd < 1e-5 && worst_crv <= 1e-10 && worst_ascent <= 1e-9 && identical;
    return {pass, "fd rel err " + fmt(worst_fd, 3) + ", crv err " + fmt(worst_crv, 3) + ", worst descent " +
                      fmt(worst_ascent, 3) + ", rerun bit-identical: " + (identical ? "yes" : "no")};
}

}  // namespace

int main() {
    ExperimentConfig fluct_cfg = config("rate_fluctuation.json");
    ExperimentResult fluct;
    run(1, "rate fluctuation at n=300", [&](Stopwatch& sw) {
        fluct = run_experiment(fluct_cfg);
        return rate_fluctuation(fluct, sw.seconds());
    });
    run(2, "rate stabilization across n", [&](Stopwatch& sw) {
        const auto res = run_experiment(config("rate_stabilization.json"));
        return rate_stabilization(res, sw.seconds());
    });
    run(3, "statistical error scaling", [&](Stopwatch& sw) {
        const auto res = run_experiment(config("consistency.json"));
        return consistency(res, sw.seconds());
    });
    ExperimentResult kbar;
    run(4, "empirical rate concentration", [&](Stopwatch&) {
        kbar = run_experiment(config("kbar_concentration.json"));
        return kbar_concentration(kbar);
    });
    run(5, "contraction inequality audit", [&](Stopwatch&) { return contraction_audit(kbar, 10000); });
    run(6, "rmc fixed-pattern expectations", [&](Stopwatch& sw) { return rmc_population_oracle(60.0, sw); });
    run(7, "exact concavity terms", [&](Stopwatch&) { return exactness(); });
    run(8, "numerical correctness", [&](Stopwatch&) { return numerical_correctness(fluct_cfg, fluct); });
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
