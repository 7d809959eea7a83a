#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hls/basis.hpp"
#include "hls/constraint.hpp"
#include "hls/decoder.hpp"
#include "hls/errors.hpp"
#include "hls/rng.hpp"

namespace hls {

/// Random field g(x, Z): a latent draw Z from `draw_latent` fixes one
/// realization, evaluated pointwise by `evaluate`. When `mean_is_target` the
/// approximation target is f(x) = E_Z g(x, Z).
struct RandomFieldGenerator {
    std::size_t dim = 0;
    std::function<Eigen::VectorXd(Rng&)> draw_latent;
    std::function<double(const Eigen::VectorXd& x, const Eigen::VectorXd& z)> evaluate;
    std::function<double(const Eigen::VectorXd&)> mean; // optional closed form of f
    bool mean_is_target = true;

    /// Noisy oracle y(x) = g(x, Z) with a fresh Z per call.
    NoisyOracle oracle() const {
        NoisyOracle o;
        o.draw = [gen = *this](const Eigen::VectorXd& x, Rng& rng) { return gen.evaluate(x, gen.draw_latent(rng)); };
        o.mean = mean;
        return o;
    }

    /// Values of one realization on every grid point.
    Eigen::VectorXd on_grid(const PointSet& grid, const Eigen::VectorXd& z) const {
        Eigen::VectorXd v(grid.rows());
        for (Eigen::Index q = 0; q < grid.rows(); ++q) {
            v[q] = evaluate(grid.row(q).transpose(), z);
            if (!std::isfinite(v[q]))
                throw numerical_error("random field: non-finite value at grid point " + std::to_string(q));
        }
        return v;
    }
};

struct Subspace {
    BasisSet basis;
    ConvexCone cone;
    Eigen::MatrixXd snapshots;          // Q x n raw realizations on the grid
    std::vector<Eigen::VectorXd> latents;
    std::size_t attempts = 1;
};

/// Draws n realizations, evaluates them on the grid and orthonormalizes. A
/// rank-deficient draw is regenerated with fresh latents up to 3 times.
inline Subspace build_subspace(const RandomFieldGenerator& gen, std::size_t n, const PointSet& grid,
                               std::uint64_t seed, std::optional<Eigen::VectorXd> grid_weights = std::nullopt) {
    if (n == 0) throw config_error("build_subspace: n must be positive");
    if (static_cast<std::size_t>(grid.rows()) < n) throw config_error("build_subspace: need Q >= n");
    if (!gen.draw_latent || !gen.evaluate) throw config_error("build_subspace: incomplete field generator");
    const auto nn = static_cast<Eigen::Index>(n);
    constexpr std::size_t max_attempts = 4;
    for (std::size_t attempt = 0;; ++attempt) {
        Rng rng(derive_seed(seed, "subspace", {attempt}));
        std::vector<Eigen::VectorXd> latents(n);
        Eigen::MatrixXd snaps(grid.rows(), nn);
        for (Eigen::Index j = 0; j < nn; ++j) {
            latents[static_cast<std::size_t>(j)] = gen.draw_latent(rng);
            snaps.col(j) = gen.on_grid(grid, latents[static_cast<std::size_t>(j)]);
        }
        GeneratorFamily family = [gen, latents](const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Ref<Eigen::VectorXd> out) {
            const Eigen::VectorXd xx = x;
            for (std::size_t j = 0; j < latents.size(); ++j) out[static_cast<Eigen::Index>(j)] = gen.evaluate(xx, latents[j]);
        };
        try {
            BasisSet basis = discretize_basis(snaps, grid, grid_weights, std::move(family), "random-subspace");
            ConvexCone cone(basis);
            return Subspace{std::move(basis), std::move(cone), std::move(snaps), std::move(latents), attempt + 1};
        } catch (const rank_deficiency_error& e) {
            if (attempt + 1 >= max_attempts)
                throw rank_deficiency_error(std::string("build_subspace: snapshots rank deficient after ") +
                                                std::to_string(max_attempts) + " draws: " + e.what(),
                                            e.deficiency());
        }
    }
}

/// Generator coefficients (1/k, ..., 1/k, 0, ..., 0).
inline Eigen::VectorXd mc_average_coefficients(std::size_t k, std::size_t n) {
    if (k == 0 || k > n) throw config_error("mc_average_baseline: need 1 <= k <= n");
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    beta.head(static_cast<Eigen::Index>(k)).setConstant(1.0 / static_cast<double>(k));
    return beta;
}

/// Grid values of the average of the first k snapshots.
inline Eigen::VectorXd mc_average_on_grid(const Eigen::MatrixXd& snapshots, std::size_t k) {
    return snapshots * mc_average_coefficients(k, static_cast<std::size_t>(snapshots.cols()));
}

/// Plain Monte Carlo average of the first k snapshots, in orthonormal coordinates.
inline Approximant mc_average_baseline(const Subspace& s, std::size_t k) {
    const Eigen::VectorXd beta = mc_average_coefficients(k, static_cast<std::size_t>(s.snapshots.cols()));
    return Approximant{s.basis, s.cone.to_orthonormal(beta), Pipeline::average, false};
}

/// min over span(snapshots) of |f - v| in the discrete L2(omega) norm. Uses a
/// rank-revealing QR so that redundant snapshots are tolerated.
inline double best_approximation_error(const Eigen::MatrixXd& snapshots, const Eigen::VectorXd& f,
                                       const Eigen::VectorXd& weights) {
    if (snapshots.rows() != f.size() || f.size() != weights.size())
        throw config_error("best_approximation_error: size mismatch");
    const Eigen::VectorXd sw = weights.cwiseSqrt();
    const Eigen::MatrixXd a = sw.asDiagonal() * snapshots;
    const Eigen::VectorXd b = sw.cwiseProduct(f);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    qr.setThreshold(1e-12);
    const Eigen::VectorXd coef = qr.solve(b);
    return (a * coef - b).norm();
}

namespace detail {
inline Eigen::VectorXd normalized_weights(const std::optional<Eigen::VectorXd>& w, Eigen::Index q) {
    if (!w) return Eigen::VectorXd::Constant(q, 1.0 / static_cast<double>(q));
    if (w->size() != q) throw config_error("grid weights: expected one weight per grid point");
    return *w / w->sum();
}
} // namespace detail

struct ErrorCurvePoint {
    std::size_t n = 0;
    std::vector<double> errors; // one per replicate
    double mean = 0.0;
    double sd = 0.0;
    double min = 0.0;
    double max = 0.0;
};

/// Best-approximation error of f_reference (values on the grid) over fresh
/// n-dimensional random subspaces, replicated.
inline std::vector<ErrorCurvePoint> subspace_error_curve(const RandomFieldGenerator& gen, const Eigen::VectorXd& f_reference,
                                                         const std::vector<std::size_t>& n_values, const PointSet& grid,
                                                         std::size_t replicates, std::uint64_t seed,
                                                         std::optional<Eigen::VectorXd> grid_weights = std::nullopt) {
    if (replicates == 0) throw config_error("subspace_error_curve: replicates must be positive");
    if (f_reference.size() != grid.rows()) throw config_error("subspace_error_curve: reference must be given on the grid");
    const Eigen::VectorXd w = detail::normalized_weights(grid_weights, grid.rows());
    std::vector<ErrorCurvePoint> out;
    for (std::size_t n : n_values) {
        if (n == 0) throw config_error("subspace_error_curve: n must be positive");
        ErrorCurvePoint pt;
        pt.n = n;
        for (std::size_t r = 0; r < replicates; ++r) {
            Rng rng(derive_seed(seed, "curve", {n, r}));
            Eigen::MatrixXd snaps(grid.rows(), static_cast<Eigen::Index>(n));
            for (Eigen::Index j = 0; j < snaps.cols(); ++j) snaps.col(j) = gen.on_grid(grid, gen.draw_latent(rng));
            pt.errors.push_back(best_approximation_error(snaps, f_reference, w));
        }
        const Eigen::Map<const Eigen::VectorXd> e(pt.errors.data(), static_cast<Eigen::Index>(pt.errors.size()));
        pt.mean = e.mean();
        pt.sd = replicates > 1 ? std::sqrt((e.array() - pt.mean).square().sum() / static_cast<double>(replicates - 1)) : 0.0;
        pt.min = e.minCoeff();
        pt.max = e.maxCoeff();
        out.push_back(std::move(pt));
    }
    return out;
}

struct SpectrumDiagnostic {
    Eigen::VectorXd eigenvalues; // nonincreasing, >= 0
    Eigen::VectorXd tail_sums;   // tail_sums[s] = sum_{i >= s} eigenvalues[i]
    double clipped_mass = 0.0;   // total magnitude of negative eigenvalues set to 0
};

/// Eigenvalues of the centered snapshot Gram matrix under the grid measure,
/// scaled by 1/(n-1).
inline SpectrumDiagnostic empirical_kernel_spectrum(const Eigen::MatrixXd& snapshots,
                                                    std::optional<Eigen::VectorXd> grid_weights = std::nullopt) {
    const Eigen::Index q = snapshots.rows(), n = snapshots.cols();
    if (n < 2) throw config_error("empirical_kernel_spectrum: need at least 2 snapshots");
    const Eigen::VectorXd w = detail::normalized_weights(grid_weights, q);
    Eigen::MatrixXd c = snapshots.colwise() - snapshots.rowwise().mean();
    Eigen::MatrixXd k = c.transpose() * w.asDiagonal() * c / static_cast<double>(n - 1);
    k = 0.5 * (k + k.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k, Eigen::EigenvaluesOnly);
    SpectrumDiagnostic d;
    d.eigenvalues = es.eigenvalues().reverse();
    for (Eigen::Index i = 0; i < n; ++i)
        if (d.eigenvalues[i] < 0.0) {
            d.clipped_mass += -d.eigenvalues[i];
            d.eigenvalues[i] = 0.0;
        }
    d.tail_sums.resize(n);
    double acc = 0.0;
    for (Eigen::Index i = n - 1; i >= 0; --i) d.tail_sums[i] = (acc += d.eigenvalues[i]);
    return d;
}

/// Sample sizes from the MC-average argument: k = ceil(2 sigma_norm2 / eps^2)
/// and the smallest integer n > 1.5 log(1/delta) k.
struct McPrescription {
    std::size_t k = 0;
    std::size_t n = 0;
};

inline McPrescription mc_prescription(double sigma_norm2, double eps, double delta) {
    if (!(eps > 0.0) || !(delta > 0.0 && delta < 1.0) || !(sigma_norm2 >= 0.0))
        throw config_error("mc_prescription: need eps > 0, 0 < delta < 1, sigma_norm2 >= 0");
    McPrescription p;
    p.k = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(2.0 * sigma_norm2 / (eps * eps))));
    p.n = static_cast<std::size_t>(std::floor(1.5 * std::log(1.0 / delta) * static_cast<double>(p.k))) + 1;
    return p;
}

} // namespace hls
