#include <gtest/gtest.h>

#include "hls/sampler.hpp"

#include <cmath>

using namespace hls;

TEST(InducedQuantile, ConstantBasisIsUniform) {
    InducedLegendreQuantile q(0);
    EXPECT_NEAR(q.quantile(0.5), 0.0, 1e-12);
    EXPECT_NEAR(q.quantile(0.25), -0.5, 1e-12);
    EXPECT_NEAR(q.quantile(0.9), 0.8, 1e-12);
}

TEST(InducedQuantile, LinearDegreeMedianIsZero) {
    InducedLegendreQuantile q(1);
    EXPECT_NEAR(q.quantile(0.5), 0.0, 1e-12);
    // F(t) = (t + t^3 + 2)/4 for density (1+3t^2)/4
    for (double t : {-0.9, -0.3, 0.2, 0.75}) EXPECT_NEAR(q.quantile((t + t * t * t + 2) / 4), t, 1e-12);
}

TEST(InducedQuantile, CdfInvertsQuantile) {
    for (int D : {2, 6, 12}) {
        InducedLegendreQuantile q(D);
        for (double u = 0.01; u < 1.0; u += 0.07) EXPECT_NEAR(q.cdf(q.quantile(u)), u, 1e-12) << D;
        EXPECT_NEAR(q.cdf(1.0), 1.0, 0.0);
        EXPECT_THROW(q.quantile(1.5), numerical_error);
    }
}

TEST(Sampler, ContinuousDesignShapes) {
    auto b = tensor_legendre_basis(2, 6);
    auto s = PointStream::halton(std::vector<std::uint32_t>{2, 3});
    SampleDesign d = sample_induced_continuous(b, 147, s);
    EXPECT_EQ(d.m(), 147u);
    EXPECT_EQ(d.n(), 49u);
    EXPECT_EQ(d.points.rows(), 147);
    // recorded singular values match recomputation
    Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(d.weighted_design()).singularValues();
    EXPECT_LT((sv - d.singular_values).cwiseAbs().maxCoeff(), 1e-10);
    for (Eigen::Index i = 0; i < 147; ++i) {
        EXPECT_NEAR(d.weights[i], 49.0 / d.phi[i], 1e-12);
        EXPECT_NEAR(d.design.row(i).squaredNorm() * 147.0, d.phi[i], 1e-9 * d.phi[i]);
    }
    auto s2 = PointStream::halton(std::vector<std::uint32_t>{2});
    EXPECT_THROW(sample_induced_continuous(b, 147, s2), config_error);
    EXPECT_THROW(sample_induced_continuous(b, 10, s), config_error);
}

TEST(Sampler, ZeroDegreeIsPlainMeasure) {
    auto b = tensor_legendre_basis(1, 0);
    auto s = PointStream::halton(std::vector<std::uint32_t>{2});
    SampleDesign d = sample_induced_continuous(b, 1, s);
    EXPECT_NEAR(d.points(0, 0), 0.0, 1e-12);
}

TEST(Sampler, WeightedQuadratureIsUnbiased) {
    auto b = tensor_legendre_basis(2, 3);
    auto s = PointStream::iid(2, 17);
    SampleDesign d = sample_induced_continuous(b, 10000, s);
    Eigen::MatrixXd raw = d.design * std::sqrt(10000.0);
    Rng rng(3);
    for (int t = 0; t < 10; ++t) {
        Eigen::VectorXd c(16);
        for (auto& x : c) x = rng.normal();
        Eigen::VectorXd v = raw * c;
        const double est = d.weights.dot(v.cwiseAbs2()) / 10000.0;
        EXPECT_LT(std::abs(est / c.squaredNorm() - 1.0), 0.05);
    }
}

TEST(Sampler, EmbeddingBandImpliesCondition) {
    auto b = tensor_legendre_basis(2, 2);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto s = PointStream::iid(2, derive_seed(seed, "test"));
        SampleDesign d = sample_induced_continuous(b, 400 * 9, s);
        if (d.in_embedding_band()) {
            Eigen::MatrixXd g = d.weighted_design().transpose() * d.weighted_design();
            Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(g).eigenvalues();
            EXPECT_LE(ev.maxCoeff() / ev.minCoeff(), std::pow(1.1 / 0.9, 2) + 1e-12);
        }
    }
}

namespace {
BasisSet two_point_basis() {
    // n = 1 on Q = 2 grid with values making leverage (0.75, 0.25)
    PointSet grid(2, 1);
    grid << 0.0, 1.0;
    Eigen::MatrixXd g(2, 1);
    g << std::sqrt(1.5), std::sqrt(0.5);
    return discretize_basis(g, grid);
}
} // namespace

TEST(Sampler, DiscreteLeverageFrequencies) {
    auto b = two_point_basis();
    Eigen::VectorXd p = leverage_probabilities(*b.grid());
    EXPECT_NEAR(p[0], 0.75, 1e-15);
    EXPECT_EQ(p.sum(), 1.0);
    auto s = PointStream::iid(1, 8);
    SampleDesign d = sample_induced_discrete(b, 100000, s);
    double hits = 0;
    for (auto i : d.grid_indices) hits += (i == 0);
    EXPECT_NEAR(hits / 1e5, 0.75, 0.01);
}

TEST(Sampler, DiscreteConstantBasisIsUniform) {
    PointSet grid(5, 1);
    grid << 0, 1, 2, 3, 4;
    auto b = discretize_basis(Eigen::MatrixXd::Ones(5, 1), grid);
    Eigen::VectorXd p = leverage_probabilities(*b.grid());
    for (Eigen::Index i = 0; i < 5; ++i) EXPECT_NEAR(p[i], 0.2, 1e-15);
    auto s = PointStream::iid(1, 2);
    SampleDesign d = sample_induced_discrete(b, 10, s);
    for (Eigen::Index i = 0; i < 10; ++i) EXPECT_NEAR(d.weights[i], 1.0, 1e-12);
}

TEST(Boosting, SingleTrialIsPlainCall) {
    auto b = tensor_legendre_basis(2, 2);
    auto call = [&](std::size_t t) {
        auto s = PointStream::iid(2, derive_seed(9, {t}));
        return sample_induced_continuous(b, 30, s);
    };
    SampleDesign one = boost(call, BoostingPolicy{1, 100.0, BoostingPolicy::Accept::first_below_threshold});
    SampleDesign direct = call(0);
    EXPECT_EQ(one.points, direct.points);
    EXPECT_EQ(one.trials_used, 1u);
}

TEST(Boosting, ThresholdAndMinCond) {
    auto b = tensor_legendre_basis(2, 2);
    std::vector<double> conds;
    auto call = [&](std::size_t t) {
        auto s = PointStream::iid(2, derive_seed(4, {t}));
        auto d = sample_induced_continuous(b, 12, s);
        return d;
    };
    for (std::size_t t = 0; t < 20; ++t) conds.push_back(call(t).condition());
    SampleDesign best = boost(call, BoostingPolicy{20, 1.0001, BoostingPolicy::Accept::min_cond});
    EXPECT_DOUBLE_EQ(best.condition(), *std::min_element(conds.begin(), conds.end()));
    EXPECT_TRUE(best.threshold_missed);
    SampleDesign first = boost(call, BoostingPolicy{20, 1e9, BoostingPolicy::Accept::first_below_threshold});
    EXPECT_EQ(first.trials_used, 1u);
    EXPECT_FALSE(first.threshold_missed);
    EXPECT_THROW(boost(call, BoostingPolicy{0, 2.5}), config_error);
    EXPECT_THROW(boost(call, BoostingPolicy{3, 1.0}), config_error);
}
