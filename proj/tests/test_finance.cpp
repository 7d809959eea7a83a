#include <gtest/gtest.h>

#include "hls/finance.hpp"

#include <cmath>

using namespace hls;

namespace {

const BSModel kTrue = BSModel{}.with_params(0.3, 0.1, -0.3);

double payoff(const BSModel& m, double T, double K, double z1, double z2) {
    return spread_payoff(m.r, m.s0, T, K, m.sigma1, m.sigma2, m.rho, z1, z2);
}

} // namespace

TEST(Payoff, ZeroMaturityCollapses) {
    for (double K : {0.0, 2.0, 4.0, 10.0})
        for (double z : {-2.0, 0.0, 1.5}) EXPECT_DOUBLE_EQ(payoff(kTrue, 0.0, K, z, -z), std::max(4.0 - K, 0.0));
}

TEST(Payoff, PerfectCorrelationIgnoresSecondDriver) {
    auto m = BSModel{}.with_params(0.25, 0.25, 1.0);
    EXPECT_EQ(payoff(m, 0.5, 3.0, 0.7, -3.0), payoff(m, 0.5, 3.0, 0.7, 2.0));
    auto field = payoff_field(kTrue);
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        Eigen::VectorXd x = spread_domain().from_unit(Eigen::VectorXd::NullaryExpr(5, [&] { return rng.uniform(); }));
        EXPECT_GE(field.evaluate(x, field.draw_latent(rng)), 0.0);
    }
}

TEST(Margrabe, Examples) {
    EXPECT_DOUBLE_EQ(margrabe_price(BSModel{}.with_params(0.2, 0.2, 1.0), 1.0), 4.0);
    EXPECT_DOUBLE_EQ(margrabe_price(kTrue, 0.0), 4.0);
    EXPECT_NEAR(margrabe_price(kTrue, 1e-12), 4.0, 1e-6);
    const double p = margrabe_price(kTrue, 1.0);
    EXPECT_NEAR(p, 15.46, 0.01);
    auto [mc, se] = mc_price(kTrue, 1.0, 0.0, 10000000, 3);
    EXPECT_NEAR(mc, p, 3 * se);
}

TEST(SynthMarket, CalibrationGridShapeAndLimits) {
    auto g = QuoteGrid::calibration_grid();
    EXPECT_EQ(g.maturities.size(), 7u);
    EXPECT_EQ(g.strikes.size(), 25u);
    EXPECT_DOUBLE_EQ(g.maturities.front(), 10.0 / 252);
    EXPECT_DOUBLE_EQ(g.strikes.back(), 49.0);
    auto q = synth_market(kTrue, g, 20000, 1);
    q.validate();
    // far out of the money at short maturity
    EXPECT_LT(q.prices(0, 24), 1e-6);
    // nonincreasing in strike at fixed maturity (common draws make this exact)
    for (Eigen::Index i = 0; i < q.prices.rows(); ++i)
        for (Eigen::Index j = 1; j < q.prices.cols(); ++j) EXPECT_LE(q.prices(i, j), q.prices(i, j - 1) + 4 * q.std_errors(i, j));
}

TEST(SynthMarket, ZeroStrikeMatchesMargrabe) {
    QuoteGrid g;
    g.maturities = {0.1, 0.5, 1.0};
    g.strikes = {0.0};
    auto q = synth_market(kTrue, g, 200000, 2);
    for (Eigen::Index i = 0; i < 3; ++i)
        EXPECT_NEAR(q.prices(i, 0), margrabe_price(kTrue, g.maturities[i]), 4 * q.std_errors(i, 0));
}

TEST(SynthMarket, DoublingSamplesHalvesVariance) {
    double v1 = 0.0, v2 = 0.0;
    for (std::uint64_t r = 0; r < 20; ++r) {
        v1 += std::pow(mc_price(kTrue, 0.5, 0.0, 5000, r).second, 2);
        v2 += std::pow(mc_price(kTrue, 0.5, 0.0, 10000, 100 + r).second, 2);
    }
    const double ratio = v2 / v1;
    EXPECT_GE(ratio, 0.35);
    EXPECT_LE(ratio, 0.7);
}

TEST(Degeneracy, Examples) {
    auto g = QuoteGrid::calibration_grid();
    auto same = degeneracy_probe(kTrue, kTrue, g, 20000, 1);
    EXPECT_EQ(same.max_abs_difference, 0.0);
    auto alt = degeneracy_probe(kTrue, BSModel{}.with_params(0.32, 0.18, 0.14), g, 20000, 1);
    auto far = degeneracy_probe(kTrue, BSModel{}.with_params(0.5, 0.5, -1.0), g, 20000, 1);
    EXPECT_LT(alt.max_abs_difference, 0.5);
    EXPECT_GT(far.max_abs_difference, 4 * far.std_error_at_max);
    EXPECT_GT(far.max_abs_difference, 10 * alt.max_abs_difference);
}

TEST(Calibrate, RecoversGeneratorOfZeroResidualQuotes) {
    // smooth identifiable toy price surface
    auto price = [](const Eigen::VectorXd& x) {
        const double T = x[0], K = x[1], s1 = x[2], s2 = x[3];
        return std::exp(-0.1 * K) * (1.0 + T * (s1 * s1 + 2.0 * s2) + 0.5 * T * T * s1 * s2) + 0.01 * K * s2;
    };
    auto q = QuoteGrid::calibration_grid();
    q.prices.resize(7, 25);
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 25; ++j) {
            Eigen::VectorXd x(5);
            x << q.maturities[i], q.strikes[j], 0.3, 0.1, -0.3;
            q.prices(i, j) = price(x);
        }
    auto res = calibrate(price, q);
    EXPECT_NEAR(res.sigma1, 0.3, 1e-4);
    EXPECT_NEAR(res.sigma2, 0.1, 1e-4);
    EXPECT_LT(res.loss, 1e-12);

    // truth outside the box: solution pinned to the bound
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 25; ++j) {
            Eigen::VectorXd x(5);
            x << q.maturities[i], q.strikes[j], 0.3, 0.7, -0.3;
            q.prices(i, j) = price(x);
        }
    auto pinned = calibrate(price, q);
    EXPECT_DOUBLE_EQ(pinned.sigma2, 0.5);

    CalibrationOptions bad;
    bad.init = {0.6, 0.2};
    EXPECT_THROW(calibrate(price, q, bad), config_error);
}

TEST(Surrogate, SmallRealizationEndToEnd) {
    SurrogateSettings s;
    s.n = 20;
    s.grid_log2 = 11;
    s.L = 20000;
    s.boosting.trials = 10;
    auto real = build_surrogate_realization(s, 5);
    EXPECT_EQ(real.subspace.snapshots.rows(), 2048);
    EXPECT_EQ(real.noise.source, NoiseProfile::Source::reused_snapshots);
    EXPECT_GE(real.design.m(), 40u);
    EXPECT_LE(real.design.m(), 200u);
    if (!real.design.threshold_missed) EXPECT_LT(real.design.condition(), 2.5 + 1e-9);
    for (std::size_t i = 0; i < real.design.m(); ++i)
        EXPECT_EQ(real.design.points.row(i), real.subspace.basis.grid()->grid.row(real.design.grid_indices[i]));

    auto fit1 = fit_surrogate(s, real, Pipeline::hls1, 9);
    auto fit2 = fit_surrogate(s, real, Pipeline::hls2, 9);
    ASSERT_TRUE(fit1.projected.has_value());
    EXPECT_TRUE(fit1.projected->projected);
    Rng rng(4);
    PointSet test(200, 5);
    for (Eigen::Index i = 0; i < 200; ++i)
        test.row(i) = spread_domain().from_unit(Eigen::VectorXd::NullaryExpr(5, [&] { return rng.uniform(); })).transpose();
    EXPECT_GE(fit1.projected->evaluate_rows(test).minCoeff(), -1e-8);
    EXPECT_GE(fit2.projected->evaluate_rows(test).minCoeff(), -1e-8);
    const Eigen::VectorXd ref = mc_reference(s.model, test, 20000, 1);
    const double e1 = mse(fit1.regular.evaluate_rows(test), ref);
    const double eavg = mse(mc_average_baseline(real.subspace, s.n).evaluate_rows(test), ref);
    EXPECT_TRUE(std::isfinite(e1));
    EXPECT_LT(e1, eavg);
}

TEST(Surrogate, ReplaysBitExactly) {
    SurrogateSettings s;
    s.n = 10;
    s.grid_log2 = 9;
    s.L = 2000;
    s.boosting.trials = 3;
    auto a = build_surrogate_realization(s, 77);
    auto b = build_surrogate_realization(s, 77);
    EXPECT_EQ(a.design.grid_indices, b.design.grid_indices);
    EXPECT_EQ(a.noise.sigma2, b.noise.sigma2);
    EXPECT_EQ(fit_surrogate(s, a, Pipeline::hls1, 1).regular.coefficients,
              fit_surrogate(s, b, Pipeline::hls1, 1).regular.coefficients);
}
