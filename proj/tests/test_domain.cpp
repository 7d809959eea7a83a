#include <gtest/gtest.h>

#include "hls/domain.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

using namespace hls;

TEST(Domain, RejectsBadBounds) {
    EXPECT_THROW(HyperRectangle(Eigen::Vector2d(0, 1), Eigen::Vector2d(1, 1)), config_error);
    EXPECT_THROW(HyperRectangle(Eigen::VectorXd(0), Eigen::VectorXd(0)), config_error);
    EXPECT_THROW(HyperRectangle(Eigen::Vector2d(0, 0), Eigen::Vector3d(1, 1, 1)), config_error);
}

TEST(Domain, HaltonBase2FirstThree) {
    auto s = PointStream::halton(std::vector<std::uint32_t>{2});
    PointSet p = generate_points(s, 3, HyperRectangle::unit_cube(1));
    EXPECT_DOUBLE_EQ(p(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(p(1, 0), 0.25);
    EXPECT_DOUBLE_EQ(p(2, 0), 0.75);
}

TEST(Domain, MidpointMapsToCenter) {
    auto box = HyperRectangle::symmetric_cube(1);
    EXPECT_DOUBLE_EQ(box.from_unit(Eigen::VectorXd::Constant(1, 0.5))[0], 0.0);
    // halton base 2 starts at 1/2
    auto s = PointStream::halton(std::vector<std::uint32_t>{2});
    EXPECT_DOUBLE_EQ(generate_points(s, 1, box)(0, 0), 0.0);
}

TEST(Domain, GeneratePointsErrors) {
    auto s = PointStream::iid(2, 1);
    EXPECT_THROW(generate_points(s, 0, HyperRectangle::unit_cube(2)), config_error);
    EXPECT_THROW(generate_points(s, 3, HyperRectangle::unit_cube(3)), config_error);
}

TEST(Domain, ScrambledSobolFillsFinanceBox) {
    Eigen::VectorXd lo(5), hi(5);
    lo << 0, 0, 0, 0, -1;
    hi << 1, 50, 0.5, 0.5, 1;
    HyperRectangle box(lo, hi);
    auto s = PointStream::sobol(5, true, 1234);
    PointSet p = generate_points(s, 1u << 16, box);
    ASSERT_EQ(p.rows(), 65536);
    for (Eigen::Index i = 0; i < p.rows(); ++i) ASSERT_TRUE(box.contains(p.row(i).transpose()));
    // every point distinct
    std::vector<double> first(p.col(1).data(), p.col(1).data() + p.rows());
    std::sort(first.begin(), first.end());
    EXPECT_EQ(std::adjacent_find(first.begin(), first.end()), first.end());
}

TEST(Domain, SobolMatchesReferenceTable) {
    // reference values from the Joe-Kuo direction numbers, unscrambled
    auto s = PointStream::sobol(10, false);
    PointSet p = s.take(16);
    const double r3[10] = {0.25, 0.75, 0.75, 0.75, 0.25, 0.25, 0.75, 0.25, 0.25, 0.25};
    const double r5[10] = {0.875, 0.875, 0.125, 0.375, 0.875, 0.625, 0.875, 0.375, 0.375, 0.125};
    const double r11[10] = {0.4375, 0.5625, 0.1875, 0.6875, 0.8125, 0.0625, 0.6875, 0.6875, 0.6875, 0.0625};
    const double r15[10] = {0.0625, 0.9375, 0.5625, 0.3125, 0.6875, 0.1875, 0.8125, 0.3125, 0.3125, 0.6875};
    for (int j = 0; j < 10; ++j) {
        EXPECT_DOUBLE_EQ(p(0, j), 0.0);
        EXPECT_DOUBLE_EQ(p(1, j), 0.5);
        EXPECT_DOUBLE_EQ(p(3, j), r3[j]) << j;
        EXPECT_DOUBLE_EQ(p(5, j), r5[j]) << j;
        EXPECT_DOUBLE_EQ(p(11, j), r11[j]) << j;
        EXPECT_DOUBLE_EQ(p(15, j), r15[j]) << j;
    }
}

TEST(Domain, ScrambledSobolStaysStratified) {
    // nested scrambling keeps the (0,m,s)-net property: 2^k points put one point
    // in each dyadic interval of length 2^-k per coordinate
    auto s = PointStream::sobol(3, true, 99);
    PointSet p = s.take(64);
    for (int j = 0; j < 3; ++j) {
        std::vector<int> hit(64, 0);
        for (int i = 0; i < 64; ++i) ++hit[static_cast<int>(p(i, j) * 64)];
        EXPECT_TRUE(std::all_of(hit.begin(), hit.end(), [](int h) { return h == 1; })) << j;
    }
}

TEST(Domain, ReplayIsBitExact) {
    for (auto make : {+[] { return PointStream::iid(3, 42); }, +[] { return PointStream::halton(3); },
                      +[] { return PointStream::sobol(3, true, 42); }}) {
        auto a = make(), b = make();
        PointSet pa = a.take(500), pb = b.take(500);
        EXPECT_EQ(0, std::memcmp(pa.data(), pb.data(), sizeof(double) * 1500));
        for (Eigen::Index i = 0; i < pa.size(); ++i) {
            ASSERT_GE(pa.data()[i], 0.0);
            ASSERT_LT(pa.data()[i], 1.0);
        }
    }
}

TEST(Domain, DifferentSeedsDiffer) {
    auto a = PointStream::sobol(2, true, 1), b = PointStream::sobol(2, true, 2);
    EXPECT_NE(a.take(4), b.take(4));
}

namespace {
// largest |empirical - volume| over origin-anchored boxes with corners on a fixed random set
double box_discrepancy(const PointSet& p) {
    Rng rng(2024);
    double worst = 0.0;
    for (int t = 0; t < 3000; ++t) {
        Eigen::VectorXd c(p.cols());
        for (Eigen::Index j = 0; j < c.size(); ++j) c[j] = rng.uniform();
        const double vol = c.prod();
        Eigen::Index inside = 0;
        for (Eigen::Index i = 0; i < p.rows(); ++i) inside += (p.row(i).transpose().array() < c.array()).all();
        worst = std::max(worst, std::abs(static_cast<double>(inside) / static_cast<double>(p.rows()) - vol));
    }
    return worst;
}
} // namespace

TEST(Domain, LowDiscrepancyBeatsIid) {
    for (std::size_t d = 1; d <= 3; ++d) {
        auto iid = PointStream::iid(d, 7);
        auto hal = PointStream::halton(d);
        auto sob = PointStream::sobol(d, true, 7);
        const double di = box_discrepancy(iid.take(1024));
        EXPECT_LT(box_discrepancy(hal.take(1024)), di) << d;
        EXPECT_LT(box_discrepancy(sob.take(1024)), di) << d;
    }
}

TEST(Quadrature, Oracles) {
    ProductMeasure m1(HyperRectangle::symmetric_cube(1));
    ProductMeasure m2(HyperRectangle::symmetric_cube(2));
    EXPECT_NEAR(quadrature_integral([](const Eigen::VectorXd&) { return 1.0; }, m2, 64), 1.0, 1e-14);
    EXPECT_NEAR(quadrature_integral([](const Eigen::VectorXd& x) { return x[0] * x[0]; }, m1, 64), 1.0 / 3.0, 1e-14);
    EXPECT_NEAR(quadrature_integral([](const Eigen::VectorXd& x) { return x[0] * x[1]; }, m2, 64), 0.0, 1e-15);
}

TEST(Quadrature, ExactForDegreeTwoLevelMinusOne) {
    ProductMeasure m(HyperRectangle(Eigen::Vector2d(0, -2), Eigen::Vector2d(3, 1)));
    for (std::size_t level : {1u, 2u, 5u, 10u}) {
        const int deg = static_cast<int>(2 * level - 1);
        auto g = [&](const Eigen::VectorXd& x) { return std::pow(x[0], deg) * std::pow(x[1] + 1.0, deg) + 1.0; };
        // int_0^3 x^k dx/3 = 3^k/(k+1); int_{-1}^{2} s^k ds/3 = (2^{k+1} - (-1)^{k+1})/(3(k+1))
        const double k = deg;
        const double exact = std::pow(3.0, k) / (k + 1) * (std::pow(2.0, k + 1) - std::pow(-1.0, k + 1)) / (3.0 * (k + 1)) + 1.0;
        EXPECT_NEAR(quadrature_integral(g, m, level), exact, 1e-12 * std::abs(exact)) << level;
    }
}

TEST(Quadrature, NonFiniteReportsNode) {
    ProductMeasure m(HyperRectangle::symmetric_cube(1));
    try {
        quadrature_integral([](const Eigen::VectorXd& x) { return x[0] > 0.5 ? NAN : 0.0; }, m, 4);
        FAIL();
    } catch (const numerical_error& e) {
        EXPECT_NE(std::string(e.what()).find("node ("), std::string::npos);
    }
}

TEST(Quadrature, UniformMarginalsIntegrateToOne) {
    ProductMeasure m(HyperRectangle(Eigen::Vector3d(0, 0, -1), Eigen::Vector3d(1, 50, 1)));
    for (std::size_t j = 0; j < 3; ++j) {
        const GaussRule r = gauss_legendre(16);
        const double a = m.domain().lower()[j], b = m.domain().upper()[j];
        double s = 0.0;
        for (Eigen::Index i = 0; i < 16; ++i) s += 0.5 * (b - a) * r.weights[i] * m.marginal_density(j, a + 0.5 * (r.nodes[i] + 1) * (b - a));
        EXPECT_NEAR(s, 1.0, 1e-10);
    }
}
