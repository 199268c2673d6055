#include "emrate/oracle.hpp"
#include "test_helpers.hpp"

#include <gtest/gtest.h>

using namespace emrate;

namespace {

Vector vec(std::initializer_list<double> xs) {
    Vector v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v[i++] = x;
    return v;
}

}  // namespace

TEST(ClosedFormBounds, Gmm) {
    const auto m = ModelSpec::gmm(vec({2.0, 0.0}), 1.0);
    const auto b = closed_form_bounds(m, {0.5});
    EXPECT_DOUBLE_EQ(b.gamma, std::exp(-4.0));
    EXPECT_DOUBLE_EQ(b.nu, 0.5);
    EXPECT_DOUBLE_EQ(b.kappa, 2.0 * std::exp(-4.0));
    EXPECT_TRUE(b.is_contraction());
    EXPECT_EQ(b.provenance, Provenance::ClosedFormBound);
}

TEST(ClosedFormBounds, MlrFrozenValue) {
    const auto m = ModelSpec::mlr(vec({2.0}), 1.0);
    const auto b = closed_form_bounds(m, {0.5});
    EXPECT_NEAR(b.gamma, 10.325, 1e-13);
    EXPECT_FALSE(b.is_contraction());
}

TEST(ClosedFormBounds, RmcFrozenValue) {
    const auto m = ModelSpec::rmc(vec({1.5}), 1.0, 1e-4);
    const auto b = closed_form_bounds(m, {0.15});
    EXPECT_NEAR(b.gamma, 0.025479268719060956, 1e-15);
    EXPECT_NEAR(b.nu, 0.4973889987530939, 1e-15);
    EXPECT_NEAR(b.kappa, 0.05122603994647051, 1e-15);
}

TEST(ClosedFormBounds, OutOfRegime) {
    EXPECT_THROW(closed_form_bounds(ModelSpec::gmm(vec({1.0}), 1.0), {0.3}), OutOfRegime);
    EXPECT_THROW(closed_form_bounds(ModelSpec::mlr(vec({1.0}), 1.0), {0.3}), OutOfRegime);
    EXPECT_THROW(closed_form_bounds(ModelSpec::gmm(vec({0.0}), 1.0), {0.3}), OutOfRegime);
    // snr below the lower end of the rmc window
    EXPECT_THROW(closed_form_bounds(ModelSpec::rmc(vec({0.5}), 1.0, 1e-4), {0.05}), OutOfRegime);
    // snr above the upper end of the rmc window
    EXPECT_THROW(closed_form_bounds(ModelSpec::rmc(vec({4.0}), 1.0, 0.01), {0.4}), OutOfRegime);
}

TEST(RmcPopulationMoments, FrozenExample) {
    const auto m = ModelSpec::rmc(vec({1.0, 0.0}), 1.0, 0.1);
    const auto mo = rmc_population_moments(m, vec({0.8, 0.1}), vec({1.0, 0.0}));
    EXPECT_NEAR(mo.e_sigma(0, 0), 1.0, 1e-15);
    EXPECT_NEAR(mo.e_sigma(0, 1), 0.0198019801980198, 1e-15);
    EXPECT_NEAR(mo.e_sigma(1, 0), 0.0198019801980198, 1e-15);
    EXPECT_NEAR(mo.e_sigma(1, 1), 1.0002940888148222, 1e-15);
    EXPECT_NEAR(mo.e_grv[0], 0.0, 1e-15);
    EXPECT_NEAR(mo.e_grv[1], 0.09900990099009901, 1e-15);
}

TEST(RmcPopulationMoments, MatchMonteCarloForFixedPattern) {
    const auto m = ModelSpec::rmc(vec({1.0, -0.5, 0.7}), 0.8, 0.2);
    const Vector theta = vec({0.8, -0.2, 0.9});
    const Vector mask = vec({1.0, 0.0, 0.0});
    const auto mo = rmc_population_moments(m, theta, mask);
    const auto full = ModelSpec::rmc(m.theta_star, m.sigma, 0.0);
    const std::size_t n = 400000;
    const Dataset d = sample_dataset(full, n, 77);
    Matrix grv(static_cast<Eigen::Index>(n), 3);
    Matrix sigma_sum = Matrix::Zero(3, 3);
    for (std::size_t k = 0; k < n; ++k) {
        Sample s = d.sample(k);
        s.obs = s.obs.cwiseProduct(mask);
        s.mask = mask;
        grv.row(static_cast<Eigen::Index>(k)) = per_sample_quantities(m, theta, theta, s).grv.transpose();
        sigma_sum += rmc_conditional_moments(m, theta, s).sigma;
    }
    const Vector mean = grv.colwise().mean().transpose();
    for (Eigen::Index j = 0; j < 3; ++j) {
        const double sd = std::sqrt((grv.col(j).array() - mean[j]).square().sum() / (n - 1.0));
        EXPECT_LT(std::abs(mean[j] - mo.e_grv[j]), 5.0 * sd / std::sqrt(static_cast<double>(n))) << j;
    }
    EXPECT_LT((sigma_sum / static_cast<double>(n) - mo.e_sigma).cwiseAbs().maxCoeff(), 0.02);
}

TEST(EpsilonBounds, ScalingAndLogTerms) {
    EXPECT_DOUBLE_EQ(log_cover_over_delta(3, 0.05), 3.0 * std::log(5.0) + std::log(20.0));
    const auto g = ModelSpec::gmm(vec({1.0, 1.0}), 1.0);
    const auto small = epsilon_bounds(g, 0.05, {0.3}, 1000);
    const auto large = epsilon_bounds(g, 0.05, {0.3}, 4000);
    EXPECT_NEAR(large.eps1 / small.eps1, 0.5, 1e-14);
    EXPECT_NEAR(large.eps_s / small.eps_s, 0.5, 1e-14);
    EXPECT_EQ(small.eps2, 0.0);

    const auto m = ModelSpec::mlr(vec({1.0, 1.0}), 1.0);
    const auto e = epsilon_bounds(m, 0.05, {0.3}, 1000);
    EXPECT_NEAR(e.eps2, std::sqrt(std::log(20.0) / 1000.0), 1e-15);
    EXPECT_NEAR(e.eps1, log_cover_over_delta(2, 0.05) / std::pow(1000.0, 0.49), 1e-13);
}

TEST(EpsilonBounds, InflatedParameters) {
    const auto g = ModelSpec::gmm(vec({2.0}), 1.0);
    const auto params = closed_form_bounds(g, {0.5});
    const auto e = epsilon_bounds(g, 0.05, {0.5}, 100000, {}, params);
    ASSERT_TRUE(e.kappa_n.has_value());
    EXPECT_DOUBLE_EQ(*e.gamma_n, params.gamma + e.eps1);
    EXPECT_DOUBLE_EQ(*e.nu_n, params.nu);
    EXPECT_DOUBLE_EQ(*e.kappa_n, *e.gamma_n / *e.nu_n);

    const auto r = ModelSpec::rmc(vec({1.5}), 1.0, 1e-4);
    const auto rp = closed_form_bounds(r, {0.15});
    const auto tiny = epsilon_bounds(r, 0.05, {0.15}, 1, {}, rp);
    EXPECT_TRUE(std::isinf(*tiny.kappa_n));
}

TEST(EpsilonBounds, RejectsBadArguments) {
    const auto g = ModelSpec::gmm(vec({2.0}), 1.0);
    EXPECT_THROW(epsilon_bounds(g, 0.0, {0.5}, 10), InvalidArgument);
    EXPECT_THROW(epsilon_bounds(g, 1.0, {0.5}, 10), InvalidArgument);
    EXPECT_THROW(epsilon_bounds(g, 0.05, {0.5}, 0), InvalidArgument);
}

TEST(SampleSizeConditions, LargeNSatisfiesSmallNFails) {
    const auto g = ModelSpec::gmm(vec({3.0}), 1.0);
    const BallSpec ball{0.75};
    const auto params = closed_form_bounds(g, ball);
    const auto ok = check_sample_size_conditions(params, epsilon_bounds(g, 0.05, ball, 100000000), ball);
    EXPECT_TRUE(ok.all_satisfied());
    ASSERT_EQ(ok.conditions.size(), 3u);
    const auto bad = check_sample_size_conditions(params, epsilon_bounds(g, 0.05, ball, 10), ball);
    EXPECT_FALSE(bad.all_satisfied());
    EXPECT_LT(bad.conditions[0].margin, 0.0);
}

TEST(PopulationProxy, GmmEstimateBelowClosedFormOrder) {
    const auto g = ModelSpec::gmm(vec({2.0, 0.0}), 1.0);
    SearchBudget b;
    b.directions = 16;
    b.radii = 4;
    const auto est = mc_population_grv_bound(g, {0.5}, 50000, b, 3);
    EXPECT_EQ(est.params.provenance, Provenance::MonteCarloEstimate);
    EXPECT_GT(est.params.gamma, 0.0);
    EXPECT_DOUBLE_EQ(est.params.nu, 0.5);
    EXPECT_TRUE(est.params.nu_exact);
    EXPECT_DOUBLE_EQ(est.params.kappa, est.params.gamma / est.params.nu);
    ASSERT_TRUE(est.params.mc_stderr.has_value());
    EXPECT_GT(*est.params.mc_stderr, 0.0);
    EXPECT_LT(*est.params.mc_stderr, 0.1 * est.params.gamma);
    const auto again = mc_population_grv_bound(g, {0.5}, 50000, b, 3);
    EXPECT_EQ(again.params.gamma, est.params.gamma);
}

TEST(PopulationProxy, RmcNuIsSearchValue) {
    const auto r = ModelSpec::rmc(vec({1.0, 1.0}), 1.0, 0.1);
    SearchBudget b;
    b.directions = 8;
    b.radii = 2;
    const auto est = mc_population_grv_bound(r, default_ball(r), 5000, b, 4);
    EXPECT_FALSE(est.params.nu_exact);
    EXPECT_GT(est.params.nu, 0.0);
}

TEST(Constants, JsonRoundTripAndRejection) {
    const auto k = constants_from_json(nlohmann::json{{"c", 0.5}, {"C1", 2.0}, {"mlr_exponent_slack", 0.05}});
    EXPECT_EQ(k.c, 0.5);
    EXPECT_EQ(k.C1, 2.0);
    EXPECT_EQ(k.C2, 1.0);
    EXPECT_EQ(k.mlr_exponent_slack, 0.05);
    EXPECT_THROW(constants_from_json(nlohmann::json{{"C9", 1.0}}), InvalidArgument);
    EXPECT_THROW(constants_from_json(nlohmann::json{{"C1", "big"}}), InvalidArgument);
    const auto j = to_json(closed_form_bounds(ModelSpec::gmm(vec({2.0}), 1.0), {0.5}));
    EXPECT_EQ(j["provenance"], "closed_form_bound");
    EXPECT_TRUE(j["mc_stderr"].is_null());
}
