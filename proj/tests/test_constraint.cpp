#include <gtest/gtest.h>

#include "hls/constraint.hpp"

#include <cmath>

using namespace hls;

namespace {

// Q x n snapshot matrix of smooth, mostly positive functions on a 1-D grid.
struct Fixture {
    Eigen::MatrixXd g;
    BasisSet basis;
};

Fixture make_fixture(Eigen::Index q, Eigen::Index n, std::uint64_t seed) {
    Rng rng(seed);
    PointSet grid(q, 1);
    for (Eigen::Index i = 0; i < q; ++i) grid(i, 0) = (i + 0.5) / static_cast<double>(q);
    Eigen::MatrixXd g(q, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double a = 0.5 + rng.uniform(), b = 4 * rng.uniform(), c = rng.uniform() - 0.3;
        for (Eigen::Index i = 0; i < q; ++i) g(i, j) = std::max(a * std::sin(b * grid(i, 0) + c) + 0.2 * j * grid(i, 0), 0.0);
    }
    return {g, discretize_basis(g, grid)};
}

Approximant random_approximant(const BasisSet& b, Rng& rng, double scale = 1.0) {
    Eigen::VectorXd c(b.size());
    for (Eigen::Index i = 0; i < c.size(); ++i) c[i] = scale * rng.normal();
    return Approximant{b, c, Pipeline::hls1, false};
}

} // namespace

TEST(Nnls, HandExamples) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(3, 3);
    auto r = nnls(a, Eigen::Vector3d(1, -2, 3));
    EXPECT_EQ(r.x, Eigen::Vector3d(1, 0, 3));
    Eigen::MatrixXd one(1, 1);
    one << 1.0;
    EXPECT_EQ(nnls(one, Eigen::VectorXd::Constant(1, -1.0)).x[0], 0.0);
}

TEST(Nnls, MatchesBruteForceOverSupports) {
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        Eigen::MatrixXd a = Eigen::MatrixXd::NullaryExpr(8, 4, [&] { return rng.normal(); });
        Eigen::VectorXd b = Eigen::VectorXd::NullaryExpr(8, [&] { return rng.normal(); });
        auto r = nnls(a, b);
        double best = std::numeric_limits<double>::infinity();
        for (int mask = 0; mask < 16; ++mask) {
            std::vector<Eigen::Index> idx;
            for (int j = 0; j < 4; ++j)
                if (mask >> j & 1) idx.push_back(j);
            Eigen::VectorXd x = Eigen::VectorXd::Zero(4);
            if (!idx.empty()) {
                Eigen::MatrixXd s(8, static_cast<Eigen::Index>(idx.size()));
                for (std::size_t k = 0; k < idx.size(); ++k) s.col(k) = a.col(idx[k]);
                Eigen::VectorXd xs = s.colPivHouseholderQr().solve(b);
                if (xs.minCoeff() < 0) continue;
                for (std::size_t k = 0; k < idx.size(); ++k) x[idx[k]] = xs[k];
            }
            best = std::min(best, (a * x - b).squaredNorm());
        }
        EXPECT_NEAR((a * r.x - b).squaredNorm(), best, 1e-10);
        EXPECT_GE(r.x.minCoeff(), 0.0);
    }
}

TEST(Nnls, IterationCapRaises) {
    Rng rng(4);
    Eigen::MatrixXd a = Eigen::MatrixXd::NullaryExpr(10, 6, [&] { return rng.normal(); });
    Eigen::VectorXd b = a * Eigen::VectorXd::Ones(6);
    EXPECT_THROW(nnls(a, b, 2), numerical_error);
}

TEST(ConvexCone, GramMatchesGridEvaluation) {
    auto fx = make_fixture(400, 6, 1);
    ConvexCone cone(fx.basis);
    const Eigen::MatrixXd expected = fx.g.transpose() * fx.g / 400.0;
    EXPECT_LE((cone.gram() - expected).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, expected.cwiseAbs().maxCoeff()));
    EXPECT_EQ(cone.gram(), cone.gram().transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cone.gram());
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
    EXPECT_THROW(ConvexCone(tensor_legendre_basis(1, 2)), config_error);
}

TEST(Project, MembersAreFixed) {
    auto fx = make_fixture(300, 5, 2);
    ConvexCone cone(fx.basis);
    Eigen::VectorXd beta(5);
    beta << 0.3, 1.2, 0.0, 2.0, 0.7;
    Approximant a{fx.basis, cone.to_orthonormal(beta), Pipeline::hls1, false};
    auto p = project_detailed(a, cone);
    EXPECT_TRUE(p.approximant.projected);
    EXPECT_LE((p.approximant.coefficients - a.coefficients).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Project, SingleNegativeGeneratorClipsToZero) {
    PointSet grid(4, 1);
    grid << 0.1, 0.3, 0.6, 0.9;
    Eigen::MatrixXd g = Eigen::MatrixXd::Ones(4, 1);
    auto b = discretize_basis(g, grid);
    ConvexCone cone(b);
    Approximant a{b, cone.to_orthonormal(Eigen::VectorXd::Constant(1, -1.0)), Pipeline::hls1, false};
    auto p = project(a, cone);
    EXPECT_EQ(p.coefficients[0], 0.0);
}

TEST(Project, KktIdempotenceAndExactZeros) {
    auto fx = make_fixture(500, 12, 5);
    ConvexCone cone(fx.basis);
    Rng rng(6);
    std::size_t zeros = 0;
    for (int t = 0; t < 50; ++t) {
        auto a = random_approximant(fx.basis, rng);
        auto p = project_detailed(a, cone);
        EXPECT_LE(p.kkt_residual, 1e-8);
        EXPECT_GE(p.beta.minCoeff(), 0.0);
        // active set: gradient nonnegative; free set: gradient zero
        const Eigen::VectorXd grad = cone.gram() * (p.beta - p.beta0);
        const double scale = std::max(1.0, (cone.gram() * p.beta0).cwiseAbs().maxCoeff());
        for (Eigen::Index i = 0; i < p.beta.size(); ++i) {
            if (p.beta[i] == 0.0) {
                ++zeros;
                EXPECT_GE(grad[i], -1e-8 * scale);
            } else {
                EXPECT_LE(std::abs(grad[i]), 1e-8 * scale);
            }
        }
        auto pp = project(p.approximant, cone);
        EXPECT_LE((pp.coefficients - p.approximant.coefficients).cwiseAbs().maxCoeff(), 1e-9);
    }
    EXPECT_GT(zeros, 0u);
}

TEST(Project, ContractionOnRandomPairs) {
    auto fx = make_fixture(300, 8, 7);
    ConvexCone cone(fx.basis);
    Rng rng(8);
    for (int t = 0; t < 100; ++t) {
        auto u = random_approximant(fx.basis, rng), v = random_approximant(fx.basis, rng);
        auto [after, before] = contraction_check(u, v, cone);
        EXPECT_LE(after, before + 1e-9);
    }
    auto u = random_approximant(fx.basis, rng);
    auto same = contraction_check(u, u, cone);
    EXPECT_EQ(same.first, 0.0);
    EXPECT_EQ(same.second, 0.0);
    Approximant in1{fx.basis, cone.to_orthonormal(Eigen::VectorXd::LinSpaced(8, 0.1, 1)), Pipeline::hls1, false};
    Approximant in2{fx.basis, cone.to_orthonormal(Eigen::VectorXd::LinSpaced(8, 1, 0.2)), Pipeline::hls1, false};
    auto [a2, b2] = contraction_check(in1, in2, cone);
    EXPECT_NEAR(a2, b2, 1e-9 * b2);
}

TEST(Project, ProjectingFunctionOrItsProjectionAgrees) {
    // h has a component orthogonal to V_n on the grid; its projection onto V_n
    // projects onto the cone at the same point.
    auto fx = make_fixture(400, 7, 9);
    ConvexCone cone(fx.basis);
    const GridBasis& gb = *fx.basis.grid();
    Rng rng(10);
    Eigen::VectorXd h(400);
    for (Eigen::Index i = 0; i < 400; ++i) h[i] = std::cos(7 * gb.grid(i, 0)) - 0.2 + 0.1 * rng.normal();
    // direct projection of h: min_{beta>=0} |G beta - h|_omega
    const Eigen::VectorXd sw = gb.grid_weights.cwiseSqrt();
    auto direct = nnls(sw.asDiagonal() * fx.g, sw.cwiseProduct(h)).x;
    // orthogonal projection first, then cone projection
    const Eigen::VectorXd alpha = gb.values.transpose() * gb.grid_weights.asDiagonal() * h;
    auto p = project_detailed(Approximant{fx.basis, alpha, Pipeline::hls1, false}, cone);
    EXPECT_LE((fx.g * (direct - p.beta)).cwiseProduct(sw).norm(), 1e-8);
}
