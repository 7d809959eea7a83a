#pragma once

#include <Eigen/Dense>

#include <cmath>

#include "hls/decoder.hpp"
#include "hls/domain.hpp"
#include "hls/random_subspace.hpp"

namespace hls {

/// Smooth 2-D test function with heteroscedastic Gaussian noise on [-1,1]^2:
/// f = z1^2 z2 exp(z1 + z2), sigma(x) = 2 (1.001 - |x|_inf)^2.
struct SyntheticProblem {
    static double f(const Eigen::VectorXd& x) { return x[0] * x[0] * x[1] * std::exp(x[0] + x[1]); }

    static double sigma(const Eigen::VectorXd& x) {
        const double t = 1.001 - x.cwiseAbs().maxCoeff();
        return 2.0 * t * t;
    }

    static ProductMeasure measure() { return ProductMeasure(HyperRectangle::symmetric_cube(2)); }

    static NoisyOracle oracle() {
        NoisyOracle o;
        o.draw = [](const Eigen::VectorXd& x, Rng& rng) { return f(x) + sigma(x) * rng.normal(); };
        o.mean = [](const Eigen::VectorXd& x) { return f(x); };
        o.variance = [](const Eigen::VectorXd& x) {
            const double s = sigma(x);
            return s * s;
        };
        return o;
    }
};

/// Oracle with a polynomial mean in V_n and a chosen noise level; useful for
/// exact-recovery and unbiasedness checks.
inline NoisyOracle polynomial_oracle(const BasisSet& basis, Eigen::VectorXd coefficients,
                                     std::function<double(const Eigen::VectorXd&)> sigma) {
    NoisyOracle o;
    auto mean = [basis, c = std::move(coefficients)](const Eigen::VectorXd& x) { return basis.evaluate(x).dot(c); };
    o.mean = mean;
    o.variance = [sigma](const Eigen::VectorXd& x) {
        const double s = sigma(x);
        return s * s;
    };
    o.draw = [mean, sigma](const Eigen::VectorXd& x, Rng& rng) {
        const double s = sigma(x);
        return s == 0.0 ? mean(x) : mean(x) + s * rng.normal();
    };
    return o;
}

/// 1-D field g(x, Z) = f(x) + sum_j sqrt(lambda_j) Z_j P_j(x) on [-1, 1] with
/// orthonormal Legendre P_j (j = 1..J) and i.i.d. standard normal Z_j. Its
/// pointwise variance integrates to sum_j lambda_j.
inline RandomFieldGenerator legendre_field(std::function<double(double)> f, Eigen::VectorXd lambdas) {
    RandomFieldGenerator g;
    g.dim = 1;
    const auto J = lambdas.size();
    g.draw_latent = [J](Rng& rng) {
        Eigen::VectorXd z(J);
        for (Eigen::Index j = 0; j < J; ++j) z[j] = rng.normal();
        return z;
    };
    g.evaluate = [f, s = Eigen::VectorXd(lambdas.cwiseSqrt())](const Eigen::VectorXd& x, const Eigen::VectorXd& z) {
        std::vector<double> p(static_cast<std::size_t>(s.size()) + 1);
        legendre_normalized(x[0], static_cast<int>(s.size()), p.data());
        double v = f(x[0]);
        for (Eigen::Index j = 0; j < s.size(); ++j) v += s[j] * z[j] * p[static_cast<std::size_t>(j) + 1];
        return v;
    };
    g.mean = [f](const Eigen::VectorXd& x) { return f(x[0]); };
    return g;
}

} // namespace hls
