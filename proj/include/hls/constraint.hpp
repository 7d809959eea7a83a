#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "hls/basis.hpp"
#include "hls/decoder.hpp"
#include "hls/errors.hpp"

namespace hls {

struct NnlsResult {
    Eigen::VectorXd x;
    std::size_t iterations = 0;
};

/// Lawson-Hanson active-set solver for min ||A x - b|| subject to x >= 0.
/// Raises numerical_error after `max_iterations` outer iterations (default 10 n).
inline NnlsResult nnls(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, std::size_t max_iterations = 0) {
    const Eigen::Index n = a.cols();
    if (a.rows() != b.size()) throw config_error("nnls: shape mismatch");
    if (!a.allFinite() || !b.allFinite()) throw numerical_error("nnls: non-finite input");
    if (max_iterations == 0) max_iterations = 10 * static_cast<std::size_t>(n);
    const double tol = 10.0 * std::numeric_limits<double>::epsilon() * a.cwiseAbs().colwise().sum().maxCoeff() *
                       static_cast<double>(std::max(a.rows(), n));

    NnlsResult res;
    res.x = Eigen::VectorXd::Zero(n);
    std::vector<bool> passive(static_cast<std::size_t>(n), false);

    auto solve_passive = [&](Eigen::VectorXd& z) {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index j = 0; j < n; ++j)
            if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
        Eigen::MatrixXd ap(a.rows(), static_cast<Eigen::Index>(idx.size()));
        for (std::size_t k = 0; k < idx.size(); ++k) ap.col(static_cast<Eigen::Index>(k)) = a.col(idx[k]);
        const Eigen::VectorXd zp = ap.colPivHouseholderQr().solve(b);
        z.setZero(n);
        for (std::size_t k = 0; k < idx.size(); ++k) z[idx[k]] = zp[static_cast<Eigen::Index>(k)];
    };

    Eigen::VectorXd w = a.transpose() * (b - a * res.x);
    Eigen::VectorXd z(n);
    while (true) {
        Eigen::Index best = -1;
        double wmax = tol;
        for (Eigen::Index j = 0; j < n; ++j)
            if (!passive[static_cast<std::size_t>(j)] && w[j] > wmax) {
                wmax = w[j];
                best = j;
            }
        if (best < 0) break;
        if (++res.iterations > max_iterations)
            throw numerical_error("nnls: no convergence after " + std::to_string(max_iterations) + " active-set iterations");
        passive[static_cast<std::size_t>(best)] = true;

        solve_passive(z);
        // inner loop: step back toward feasibility while some passive entry is nonpositive
        for (Eigen::Index inner = 0; inner <= n; ++inner) {
            double alpha = std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < n; ++j)
                if (passive[static_cast<std::size_t>(j)] && z[j] <= 0.0)
                    alpha = std::min(alpha, res.x[j] / (res.x[j] - z[j]));
            if (!std::isfinite(alpha)) break;
            res.x += alpha * (z - res.x);
            for (Eigen::Index j = 0; j < n; ++j)
                if (passive[static_cast<std::size_t>(j)] && res.x[j] <= 1e-14 * res.x.cwiseAbs().maxCoeff()) {
                    passive[static_cast<std::size_t>(j)] = false;
                    res.x[j] = 0.0;
                }
            solve_passive(z);
        }
        res.x = z;
        w = a.transpose() * (b - a * res.x);
    }
    return res;
}

/// KKT residual of min ||A x - b||, x >= 0 with gradient g = A^T (A x - b):
/// max over the free set of |g_i| and over the active set of max(-g_i, 0),
/// together with the largest negative entry of x.
inline double nnls_kkt_residual(const Eigen::VectorXd& x, const Eigen::VectorXd& g) {
    double r = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        r = std::max(r, x[i] > 0.0 ? std::abs(g[i]) : std::max(-g[i], 0.0));
        r = std::max(r, -x[i]);
    }
    return r;
}

/// Nonnegative combinations of the raw snapshot functions g_i spanning a grid
/// basis. Generator coefficients beta map to orthonormal ones via alpha = R beta,
/// so the discrete L2 distance is ||R (beta - beta0)||.
class ConvexCone {
public:
    explicit ConvexCone(const BasisSet& basis) {
        const GridBasis* g = basis.grid();
        if (!g) throw config_error("ConvexCone: requires a basis discretized on a grid");
        r_ = g->to_orthonormal;
        const Eigen::MatrixXd gen = g->values * r_;
        gram_ = gen.transpose() * g->grid_weights.asDiagonal() * gen;
        gram_ = 0.5 * (gram_ + gram_.transpose()).eval();
    }

    Eigen::Index size() const { return r_.cols(); }
    const Eigen::MatrixXd& gram() const { return gram_; }
    const Eigen::MatrixXd& change_of_basis() const { return r_; }

    Eigen::VectorXd to_generator(const Eigen::VectorXd& alpha) const {
        return r_.triangularView<Eigen::Upper>().solve(alpha);
    }
    Eigen::VectorXd to_orthonormal(const Eigen::VectorXd& beta) const { return r_ * beta; }

    bool contains(const Eigen::VectorXd& alpha, double tol = 0.0) const {
        return to_generator(alpha).minCoeff() >= -tol;
    }

private:
    Eigen::MatrixXd r_;
    Eigen::MatrixXd gram_;
};

struct Projection {
    Approximant approximant;
    Eigen::VectorXd beta;       // generator coefficients, >= 0
    Eigen::VectorXd beta0;      // generator coefficients of the input
    double kkt_residual = 0.0;  // relative to max(1, |Gram beta0|_inf)
    std::size_t iterations = 0;
};

/// Metric projection onto the cone in the discrete L2 grid norm.
inline Projection project_detailed(const Approximant& approx, const ConvexCone& cone) {
    if (approx.coefficients.size() != cone.size()) throw config_error("project: coefficient length mismatch");
    Projection out{approx, {}, {}, 0.0, 0};
    out.beta0 = cone.to_generator(approx.coefficients);
    const Eigen::MatrixXd& r = cone.change_of_basis();
    NnlsResult res = nnls(r, approx.coefficients);
    out.beta = res.x;
    out.iterations = res.iterations;
    const Eigen::VectorXd grad = cone.gram() * (out.beta - out.beta0);
    const double scale = std::max(1.0, (cone.gram() * out.beta0).cwiseAbs().maxCoeff());
    out.kkt_residual = nnls_kkt_residual(out.beta, grad) / scale;
    out.approximant.coefficients = cone.to_orthonormal(out.beta);
    out.approximant.projected = true;
    return out;
}

inline Approximant project(const Approximant& approx, const ConvexCone& cone) { return project_detailed(approx, cone).approximant; }

/// (|P u - P v|, |u - v|) in the discrete L2 norm.
inline std::pair<double, double> contraction_check(const Approximant& u, const Approximant& v, const ConvexCone& cone) {
    const double before = (u.coefficients - v.coefficients).norm();
    const double after = (project(u, cone).coefficients - project(v, cone).coefficients).norm();
    return {after, before};
}

} // namespace hls
