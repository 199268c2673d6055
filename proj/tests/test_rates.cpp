#include "emrate/rates.hpp"
#include "test_helpers.hpp"

#include <gtest/gtest.h>

using namespace emrate;
using emrate::testing::random_model;
using emrate::testing::random_vector;

namespace {

Vector vec(std::initializer_list<double> xs) {
    Vector v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v[i++] = x;
    return v;
}

}  // namespace

TEST(EmpiricalGrv, MatchesPerSampleAverage) {
    CounterRng rng(301);
    for (ModelKind kind : {ModelKind::GMM, ModelKind::MLR, ModelKind::RMC}) {
        for (int c = 0; c < 5; ++c) {
            const ModelSpec m = random_model(kind, rng);
            const Dataset d = sample_dataset(m, 300, rng.next_u64());
            const Vector theta = random_vector(rng, m.p());
            Vector sum = Vector::Zero(static_cast<Eigen::Index>(m.p()));
            for (std::size_t k = 0; k < d.n(); ++k) sum += per_sample_quantities(m, theta, theta, d.sample(k)).grv;
            sum /= static_cast<double>(d.n());
            EXPECT_LT((empirical_grv(d, theta) - sum).norm(), 1e-12 * std::max(1.0, sum.norm())) << to_string(kind);
            EXPECT_LT(empirical_grv(d, m.theta_star).norm(), 1e-12) << to_string(kind);
        }
    }
}

TEST(EmpiricalCrv, MatchesPerSampleAverage) {
    CounterRng rng(302);
    for (ModelKind kind : {ModelKind::GMM, ModelKind::MLR, ModelKind::RMC}) {
        const ModelSpec m = random_model(kind, rng);
        const Dataset d = sample_dataset(m, 300, rng.next_u64());
        const Vector theta = random_vector(rng, m.p());
        const Vector theta_prime = random_vector(rng, m.p());
        double sum = 0.0;
        for (std::size_t k = 0; k < d.n(); ++k) sum += per_sample_quantities(m, theta_prime, theta, d.sample(k)).crv;
        sum /= static_cast<double>(d.n());
        EXPECT_NEAR(empirical_crv(d, theta_prime, theta), sum, 1e-12 * std::max(1.0, std::abs(sum))) << to_string(kind);
    }
}

TEST(EmpiricalSev, IsGradientAtTruth) {
    const auto m = ModelSpec::gmm(vec({1.0, 2.0}), 1.0);
    const Dataset d = sample_dataset(m, 1000, 11);
    const Vector w = signed_weights(d, m.theta_star);
    const Vector expected = (d.obs.transpose() * w / 1000.0 - m.theta_star) / 1.0;
    EXPECT_LT((empirical_sev(d) - expected).norm(), 1e-13);
}

TEST(Search, CompassFindsQuadraticMaximum) {
    const Vector target = vec({0.3, -0.2});
    auto f = [&](const Vector& x) { return -(x - target).squaredNorm(); };
    const detail::Candidate start{f(vec({0.5, 0.5})), vec({0.5, 0.5})};
    const auto found = detail::compass_search(f, start, 1.0, 1e-3, 200);
    EXPECT_LT((found.point - target).norm(), 1e-5);
}

TEST(Search, StaysInsidePuncturedBall) {
    std::vector<double> norms;
    auto f = [&](const Vector& x) {
        norms.push_back(x.norm());
        return x.norm();
    };
    SearchBudget b;
    b.directions = 16;
    b.radii = 4;
    const auto res = detail::lattice_search(f, 3, 2.0, b);
    for (double n : norms) {
        EXPECT_LT(n, 2.0);
        EXPECT_GE(n, 2.0 * b.min_radius_fraction * (1 - 1e-9));
    }
    EXPECT_GE(res.refined_best, res.grid_best);
    EXPECT_NEAR(res.refined_best, 2.0, 1e-6);
}

TEST(GammaBar, MonotoneInBudget) {
    CounterRng rng(303);
    for (ModelKind kind : {ModelKind::GMM, ModelKind::MLR, ModelKind::RMC}) {
        const ModelSpec m = random_model(kind, rng);
        const Dataset d = sample_dataset(m, 400, rng.next_u64());
        const BallSpec ball = default_ball(m);
        SearchBudget small;
        small.directions = 8;
        small.radii = 2;
        SearchBudget large = small;
        large.directions = 16;
        large.radii = 4;
        EXPECT_GE(estimate_gamma_bar_n(d, ball, large), estimate_gamma_bar_n(d, ball, small)) << to_string(kind);
    }
}

TEST(GammaBar, LowerBoundsEveryEvaluatedRatio) {
    const auto m = ModelSpec::gmm(vec({1.5, -0.5}), 1.0);
    const Dataset d = sample_dataset(m, 500, 12);
    const BallSpec ball = default_ball(m);
    const GammaSearch g = search_gamma_bar_n(d, ball);
    CounterRng rng(304);
    for (int i = 0; i < 50; ++i) {
        const Vector u = random_unit_vector(2, rng.next_u64());
        const double rho = ball.r * (0.01 + 0.98 * rng.uniform());
        const double ratio = empirical_grv(d, m.theta_star + rho * u).norm() / rho;
        EXPECT_LE(ratio, g.value * 1.05);
    }
    EXPECT_LT((g.argmax - m.theta_star).norm(), ball.r);
}

TEST(GammaBar, EmptyDirectionSetGivesZero) {
    const auto m = ModelSpec::gmm(vec({1.0}), 1.0);
    const Dataset d = sample_dataset(m, 50, 13);
    SearchBudget b;
    b.directions = 0;
    const auto g = search_gamma_bar_n(d, default_ball(m), b);
    EXPECT_EQ(g.value, 0.0);
    EXPECT_EQ(g.argmax, m.theta_star);
}

TEST(GammaBar, ThreadCountDoesNotChangeResult) {
    const auto m = ModelSpec::rmc(vec({1.0, 0.5, -0.5}), 1.0, 0.1);
    const Dataset d = sample_dataset(m, 500, 14);
    SearchBudget one;
    one.directions = 16;
    one.radii = 4;
    SearchBudget four = one;
    four.threads = 4;
    EXPECT_EQ(estimate_gamma_bar_n(d, default_ball(m), one), estimate_gamma_bar_n(d, default_ball(m), four));
}

TEST(VBar, ClosedFormsForGmmAndMlr) {
    const auto g = ModelSpec::gmm(vec({1.0, 1.0}), 2.0);
    const Dataset dg = sample_dataset(g, 100, 15);
    const VSearch vg = search_v_bar_n(dg, default_ball(g));
    EXPECT_TRUE(vg.exact);
    EXPECT_DOUBLE_EQ(vg.value, 1.0 / 8.0);

    const auto m = ModelSpec::mlr(vec({1.0, 1.0}), 1.0);
    const Dataset dm = sample_dataset(m, 1000, 16);
    const Matrix gram = dm.obs.transpose() * dm.obs / 1000.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
    EXPECT_NEAR(estimate_v_bar_n(dm, default_ball(m)), es.eigenvalues().minCoeff() / 2.0, 1e-13);
}

TEST(VBar, RmcUpperBoundsInfimum) {
    const auto m = ModelSpec::rmc(vec({1.0, 1.0}), 1.0, 0.2);
    const Dataset d = sample_dataset(m, 2000, 17);
    const BallSpec ball = default_ball(m);
    const VSearch v = search_v_bar_n(d, ball);
    EXPECT_FALSE(v.exact);
    EXPECT_LE(v.value, min_eigenvalue(concavity_matrix(d, m.theta_star)) / 2.0 + 1e-15);
    EXPECT_GT(v.value, 0.0);
}

TEST(KBar, CeilingAndDegenerateCases) {
    EXPECT_DOUBLE_EQ(compute_k_bar_n(0.1, 0.5, 1.0), 0.2);
    EXPECT_DOUBLE_EQ(compute_k_bar_n(0.1, 0.5, 0.15), 0.15);
    EXPECT_DOUBLE_EQ(compute_k_bar_n(0.1, 0.0, 0.7), 0.7);
    EXPECT_DOUBLE_EQ(compute_k_bar_n(0.1, -1.0, 0.7), 0.7);
}

TEST(EmpiricalRates, FieldsConsistent) {
    const auto m = ModelSpec::gmm(vec({2.0, 1.0}), 1.0);
    const Dataset d = sample_dataset(m, 2000, 18);
    const auto rates = compute_empirical_rates(d, default_ball(m), {}, 0.9, "closed_form");
    EXPECT_DOUBLE_EQ(rates.k_bar_n, std::min(rates.gamma_bar_n / rates.v_bar_n, 0.9));
    EXPECT_DOUBLE_EQ(rates.e_bar_n, empirical_sev(d).norm());
    ASSERT_TRUE(rates.floor_bound.has_value());
    EXPECT_DOUBLE_EQ(*rates.floor_bound, rates.e_bar_n / (rates.v_bar_n - rates.gamma_bar_n));
    const auto j = to_json(rates);
    EXPECT_EQ(j["ceiling_source"], "closed_form");
    EXPECT_EQ(j["gamma_bar_n_bound"], "lower");
}

TEST(ContractionAudit, DetectsViolations) {
    EmpiricalRates rates;
    rates.k_bar_n = 0.5;
    rates.v_bar_n = 1.0;
    rates.gamma_bar_n = 0.5;
    rates.e_bar_n = 0.01;
    rates.floor_bound = 0.02;
    const auto ok = verify_contraction_inequality({1.0, 0.5, 0.25, 0.13}, rates);
    EXPECT_EQ(ok.per_step_violations, 0u);
    EXPECT_TRUE(ok.cumulative_holds());
    const auto bad = verify_contraction_inequality({1.0, 0.9, 0.25}, rates);
    EXPECT_EQ(bad.per_step_violations, 1u);
    EXPECT_FALSE(bad.cumulative_holds());
    rates.floor_bound.reset();
    EXPECT_FALSE(verify_contraction_inequality({1.0, 0.5}, rates).cumulative_available);
}

TEST(ContractionAudit, HoldsAlongGmmTrajectories) {
    const auto m = ModelSpec::gmm(vec({2.0, 2.0}), 1.0);
    const BallSpec ball = default_ball(m);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Dataset d = sample_dataset(m, 5000, 100 + seed);
        const auto rates = compute_empirical_rates(d, ball);
        const Vector start = m.theta_star + 0.9 * ball.r * random_unit_vector(2, seed);
        const auto traj = run_em(d, start);
        EXPECT_EQ(verify_contraction_inequality(traj, rates).per_step_violations, 0u) << seed;
    }
}
