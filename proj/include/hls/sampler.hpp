#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hls/basis.hpp"
#include "hls/domain.hpp"
#include "hls/errors.hpp"

namespace hls {

/// m design points with Christoffel weights and the weighted design matrix.
///
/// `design` holds V with entries v_j(x_i)/sqrt(m); the weighted least-squares
/// system matrix is W^{1/2} V = diag(sqrt(weights)) * design.
struct SampleDesign {
    PointSet points;
    Eigen::VectorXd weights;        // w(x_i) = n / Phi_n(x_i)
    Eigen::VectorXd phi;            // Phi_n(x_i)
    Eigen::MatrixXd design;         // V, m x n
    Eigen::VectorXd singular_values;
    std::vector<std::size_t> grid_indices; // set for designs drawn from a grid basis
    std::string provenance;
    std::size_t trials_used = 1;
    bool threshold_missed = false;

    std::size_t m() const { return static_cast<std::size_t>(design.rows()); }
    std::size_t n() const { return static_cast<std::size_t>(design.cols()); }

    Eigen::MatrixXd weighted_design() const { return weights.cwiseSqrt().asDiagonal() * design; }

    double condition() const {
        const double smin = singular_values[singular_values.size() - 1];
        return smin > 0.0 ? singular_values[0] / smin : std::numeric_limits<double>::infinity();
    }

    /// Event A: every singular value of W^{1/2}V lies in [lo, hi].
    bool in_embedding_band(double lo = 0.9, double hi = 1.1) const {
        return singular_values.minCoeff() >= lo && singular_values.maxCoeff() <= hi;
    }
};

/// Assembles a design from raw basis values (rows v(x_i)^T, unscaled) and weights.
inline SampleDesign make_design(PointSet points, const Eigen::MatrixXd& basis_values, Eigen::VectorXd weights,
                                std::string provenance = {}) {
    const Eigen::Index m = basis_values.rows();
    if (m == 0) throw config_error("make_design: empty design");
    if (weights.size() != m || points.rows() != m)
        throw config_error("make_design: points, weights and basis rows must agree");
    if (m < basis_values.cols())
        throw config_error("make_design: need m >= n (m=" + std::to_string(m) + ", n=" +
                           std::to_string(basis_values.cols()) + ")");
    if ((weights.array() <= 0.0).any() || !weights.allFinite())
        throw numerical_error("make_design: weights must be positive and finite");
    SampleDesign d;
    d.points = std::move(points);
    d.phi = basis_values.rowwise().squaredNorm();
    d.design = basis_values / std::sqrt(static_cast<double>(m));
    d.weights = std::move(weights);
    d.singular_values = Eigen::JacobiSVD<Eigen::MatrixXd>(d.weighted_design()).singularValues();
    d.provenance = std::move(provenance);
    return d;
}

/// Christoffel design: weights are n / Phi_n(x_i).
inline SampleDesign christoffel_design(const BasisSet& basis, PointSet points, std::string provenance = {}) {
    Eigen::MatrixXd vals = basis.evaluate_rows(points);
    Eigen::VectorXd phi = vals.rowwise().squaredNorm();
    Eigen::VectorXd w = static_cast<double>(basis.size()) * phi.cwiseInverse();
    return make_design(std::move(points), vals, std::move(w), std::move(provenance));
}

/// Inverse CDF of the univariate induced density
///   rho(t) = (1/(D+1)) * sum_k p_k(t)^2 * (1/2)   on [-1, 1],
/// where p_k are orthonormal Legendre polynomials. The CDF is tabulated on
/// Chebyshev-spaced nodes (exact Gauss integration per cell, the density is a
/// polynomial of degree 2D) and inverted by bisection with a final Newton polish.
class InducedLegendreQuantile {
public:
    explicit InducedLegendreQuantile(int degree, std::size_t table_size = 4096)
        : degree_(degree), gauss_(gauss_legendre(static_cast<std::size_t>(degree) + 1)) {
        if (degree < 0) throw config_error("InducedLegendreQuantile: degree must be >= 0");
        nodes_.resize(table_size + 1);
        cdf_.resize(table_size + 1);
        for (std::size_t k = 0; k <= table_size; ++k)
            nodes_[k] = -std::cos(std::numbers::pi * static_cast<double>(k) / static_cast<double>(table_size));
        nodes_.front() = -1.0;
        nodes_.back() = 1.0;
        cdf_[0] = 0.0;
        for (std::size_t k = 1; k <= table_size; ++k) cdf_[k] = cdf_[k - 1] + cell_integral(nodes_[k - 1], nodes_[k]);
        // The total is 1 analytically; normalize away rounding.
        const double total = cdf_.back();
        for (auto& c : cdf_) c /= total;
        cdf_.back() = 1.0;
    }

    int degree() const noexcept { return degree_; }

    double density(double t) const {
        std::vector<double> v(static_cast<std::size_t>(degree_) + 1);
        legendre_normalized(t, degree_, v.data());
        double s = 0.0;
        for (double x : v) s += x * x;
        return 0.5 * s / (degree_ + 1.0);
    }

    double cdf(double t) const {
        if (t <= -1.0) return 0.0;
        if (t >= 1.0) return 1.0;
        const auto it = std::upper_bound(nodes_.begin(), nodes_.end(), t);
        const auto k = static_cast<std::size_t>(std::distance(nodes_.begin(), it)) - 1;
        return cdf_[k] + cell_integral(nodes_[k], t);
    }

    /// Quantile for u in [0, 1]; accurate to ~1e-12 in t.
    double quantile(double u) const {
        if (!(u >= 0.0 && u <= 1.0))
            throw numerical_error("induced quantile: target quantile " + std::to_string(u) + " outside [0,1]");
        if (u == 0.0) return -1.0;
        if (u == 1.0) return 1.0;
        const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        const std::size_t k =
            std::clamp<std::size_t>(static_cast<std::size_t>(std::distance(cdf_.begin(), it)), 1, cdf_.size() - 1);
        double lo = nodes_[k - 1];
        double hi = nodes_[k];
        const double base = cdf_[k - 1];
        if (!(cdf_[k - 1] <= u && u <= cdf_[k]))
            throw numerical_error("induced quantile: lost bracket for quantile " + std::to_string(u));
        auto f = [&](double t) { return base + cell_integral(lo, t) - u; };
        double a = lo, b = hi;
        for (int it2 = 0; it2 < 200 && b - a > 1e-14; ++it2) {
            const double mid = 0.5 * (a + b);
            if (f(mid) <= 0.0) a = mid;
            else b = mid;
        }
        double t = 0.5 * (a + b);
        const double dens = density(t);
        if (dens > 0.0) {
            const double polished = t - f(t) / dens;
            if (polished >= a - 1e-13 && polished <= b + 1e-13) t = polished;
        }
        return std::clamp(t, -1.0, 1.0);
    }

private:
    double cell_integral(double a, double b) const {
        if (b <= a) return 0.0;
        const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
        double s = 0.0;
        for (Eigen::Index i = 0; i < gauss_.nodes.size(); ++i) s += gauss_.weights[i] * density(mid + half * gauss_.nodes[i]);
        return s * half;
    }

    int degree_;
    GaussRule gauss_;
    std::vector<double> nodes_;
    std::vector<double> cdf_;
};

/// Christoffel sampling for a full tensor Legendre basis: the induced measure
/// is a product of univariate induced measures, so each coordinate of the
/// stream's unit-cube sample is pushed through the univariate inverse CDF.
inline SampleDesign sample_induced_continuous(const BasisSet& basis, std::size_t m, PointStream& stream) {
    const auto* t = basis.tensor();
    if (!t) throw config_error("sample_induced_continuous: requires a tensor Legendre basis");
    if (m < basis.size()) throw config_error("sample_induced_continuous: need m >= n");
    if (stream.dim() != t->dim) throw config_error("sample_induced_continuous: stream dimension mismatch");
    const InducedLegendreQuantile inv(t->degree);
    PointSet pts(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(t->dim));
    for (std::size_t i = 0; i < m; ++i) {
        const Eigen::VectorXd u = stream.next();
        for (Eigen::Index j = 0; j < u.size(); ++j) {
            try {
                pts(static_cast<Eigen::Index>(i), j) = inv.quantile(u[j]);
            } catch (const numerical_error& e) {
                throw numerical_error(std::string(e.what()) + " (coordinate " + std::to_string(j) + ")");
            }
        }
    }
    return christoffel_design(basis, std::move(pts), "induced-continuous/" + stream.describe());
}

/// Normalized leverage-score probabilities of a grid basis: proportional to
/// omega_q * Phi_n(grid_q), summing to one.
inline Eigen::VectorXd leverage_probabilities(const GridBasis& g) {
    Eigen::VectorXd p = g.grid_weights.cwiseProduct(g.values.rowwise().squaredNorm());
    const double s = p.sum();
    if (!(s > 0.0)) throw numerical_error("leverage_probabilities: degenerate Christoffel function");
    return p / s;
}

/// Grid indices drawn i.i.d. with leverage-score probabilities from a 1-D stream.
inline std::vector<std::size_t> draw_leverage_indices(const GridBasis& g, std::size_t count, PointStream& stream) {
    if (stream.dim() != 1) throw config_error("sample_induced_discrete: needs a one-dimensional stream");
    const Eigen::VectorXd prob = leverage_probabilities(g);
    std::vector<double> cum(static_cast<std::size_t>(prob.size()));
    double acc = 0.0;
    for (Eigen::Index q = 0; q < prob.size(); ++q) cum[static_cast<std::size_t>(q)] = (acc += prob[q]);
    cum.back() = 1.0;
    std::vector<std::size_t> idx(count);
    for (auto& q : idx) {
        auto it = std::upper_bound(cum.begin(), cum.end(), stream.next()[0]);
        if (it == cum.end()) --it;
        q = static_cast<std::size_t>(std::distance(cum.begin(), it));
    }
    return idx;
}

/// Design on the given grid rows (duplicates kept) with weights n / Phi_n.
inline SampleDesign design_from_grid_indices(const BasisSet& basis, std::vector<std::size_t> idx, std::string provenance) {
    const auto* g = basis.grid();
    if (!g) throw config_error("design_from_grid_indices: requires a grid basis");
    const auto n = static_cast<Eigen::Index>(basis.size());
    const auto mm = static_cast<Eigen::Index>(idx.size());
    PointSet pts(mm, g->grid.cols());
    Eigen::MatrixXd vals(mm, n);
    Eigen::VectorXd w(mm);
    for (Eigen::Index i = 0; i < mm; ++i) {
        const auto q = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(i)]);
        if (q >= g->values.rows()) throw config_error("design_from_grid_indices: index outside the grid");
        pts.row(i) = g->grid.row(q);
        vals.row(i) = g->values.row(q);
        w[i] = static_cast<double>(n) / vals.row(i).squaredNorm();
    }
    SampleDesign d = make_design(std::move(pts), vals, std::move(w), std::move(provenance));
    d.grid_indices = std::move(idx);
    return d;
}

/// i.i.d. grid indices drawn with leverage-score probabilities. Duplicate
/// indices stay as separate design rows. Weights are w = n / Phi_n.
inline SampleDesign sample_induced_discrete(const BasisSet& basis, std::size_t m, PointStream& stream) {
    const auto* g = basis.grid();
    if (!g) throw config_error("sample_induced_discrete: requires a grid basis");
    if (m < basis.size()) throw config_error("sample_induced_discrete: need m >= n");
    auto idx = draw_leverage_indices(*g, m, stream);
    return design_from_grid_indices(basis, std::move(idx), "induced-discrete/" + stream.describe());
}

struct BoostingPolicy {
    enum class Accept { min_cond, first_below_threshold };

    std::size_t trials = 1;
    double cond_threshold = 2.5;
    Accept accept = Accept::first_below_threshold;

    void validate() const {
        if (trials < 1) throw config_error("BoostingPolicy: trials must be >= 1");
        if (!(cond_threshold > 1.0)) throw config_error("BoostingPolicy: cond_threshold must exceed 1");
    }
};

/// Repeats a sampling call and keeps a well-conditioned design.
///
/// `sampler_call(trial)` must derive its own substream from `trial`. Under
/// first-below-threshold the first design with cond(W^{1/2}V) below the
/// threshold is returned; when none qualifies the best design is returned
/// flagged `threshold_missed`. Under min-cond all trials run and the best wins.
inline SampleDesign boost(const std::function<SampleDesign(std::size_t)>& sampler_call, const BoostingPolicy& policy) {
    policy.validate();
    std::optional<SampleDesign> best;
    for (std::size_t t = 0; t < policy.trials; ++t) {
        SampleDesign d = sampler_call(t);
        const double c = d.condition();
        if (policy.accept == BoostingPolicy::Accept::first_below_threshold && c < policy.cond_threshold) {
            d.trials_used = t + 1;
            d.threshold_missed = false;
            return d;
        }
        if (!best || c < best->condition()) best = std::move(d);
    }
    best->trials_used = policy.trials;
    best->threshold_missed = !(best->condition() < policy.cond_threshold);
    return *best;
}

/// Boosting with a growing sample size: each trial draws a leverage-sampled
/// sequence of m_max grid points and finds the shortest prefix (on the grid
/// m_min, m_min + step, ...) whose weighted design has condition number below
/// the threshold. The trial with the smallest such prefix wins. Later trials
/// only probe prefixes shorter than the current best. When no trial reaches
/// the threshold the best-conditioned m_max design is returned flagged
/// `threshold_missed`.
struct AdaptiveBoosting {
    std::size_t m_min = 0;
    std::size_t m_max = 0;
    std::size_t step = 1;
    std::size_t trials = 50;
    double cond_threshold = 2.5;

    void validate(std::size_t n) const {
        if (m_min < n) throw config_error("AdaptiveBoosting: m_min must be >= n");
        if (m_max < m_min) throw config_error("AdaptiveBoosting: m_max must be >= m_min");
        if (step == 0 || trials == 0) throw config_error("AdaptiveBoosting: step and trials must be positive");
        if (!(cond_threshold > 1.0)) throw config_error("AdaptiveBoosting: cond_threshold must exceed 1");
    }
};

inline SampleDesign adaptive_boost_discrete(const BasisSet& basis, const AdaptiveBoosting& policy, std::uint64_t seed) {
    const auto* g = basis.grid();
    if (!g) throw config_error("adaptive_boost_discrete: requires a grid basis");
    policy.validate(basis.size());
    const auto n = static_cast<Eigen::Index>(basis.size());
    const double ratio_limit = policy.cond_threshold * policy.cond_threshold; // on eigenvalues of the Gram

    struct Best {
        std::vector<std::size_t> idx;
        double cond = std::numeric_limits<double>::infinity();
        bool hit = false;
        std::size_t trial = 0;
    } best;

    const std::size_t checkpoints = (policy.m_max - policy.m_min) / policy.step + 1;
    auto prefix_len = [&](std::size_t c) { return policy.m_min + c * policy.step; };

    for (std::size_t t = 0; t < policy.trials; ++t) {
        PointStream stream = PointStream::iid(1, derive_seed(seed, "adaptive-boost", {t}));
        std::vector<std::size_t> idx = draw_leverage_indices(*g, prefix_len(checkpoints - 1), stream);
        // weighted rows sqrt(w) v
        Eigen::MatrixXd rows(static_cast<Eigen::Index>(idx.size()), n);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const auto r = g->values.row(static_cast<Eigen::Index>(idx[i]));
            rows.row(static_cast<Eigen::Index>(i)) = r / r.norm();
        }
        auto cond_at = [&](std::size_t c) {
            const auto k = static_cast<Eigen::Index>(prefix_len(c));
            const Eigen::MatrixXd s = rows.topRows(k).transpose() * rows.topRows(k);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
            const double lo = es.eigenvalues()[0], hi = es.eigenvalues()[n - 1];
            return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
        };
        std::size_t hi_c = best.hit ? 0 : checkpoints - 1;
        if (best.hit) {
            // only a shorter prefix can win
            const std::size_t best_c = (best.idx.size() - policy.m_min) / policy.step;
            if (best_c == 0) break;
            hi_c = best_c - 1;
        }
        const double r_hi = cond_at(hi_c);
        if (!(r_hi < ratio_limit)) {
            if (!best.hit && hi_c == checkpoints - 1 && std::sqrt(r_hi) < best.cond) {
                best.idx = idx;
                best.cond = std::sqrt(r_hi);
                best.trial = t;
            }
            continue;
        }
        // bisection for the first passing checkpoint in [0, hi_c]
        std::size_t lo_c = 0, ok_c = hi_c;
        double ok_r = r_hi;
        if (double r0 = cond_at(0); r0 < ratio_limit) {
            ok_c = 0;
            ok_r = r0;
        } else {
            while (ok_c - lo_c > 1) {
                const std::size_t mid = (lo_c + ok_c) / 2;
                const double r = cond_at(mid);
                if (r < ratio_limit) {
                    ok_c = mid;
                    ok_r = r;
                } else {
                    lo_c = mid;
                }
            }
        }
        idx.resize(prefix_len(ok_c));
        best = Best{std::move(idx), std::sqrt(ok_r), true, t};
    }
    SampleDesign d = design_from_grid_indices(basis, std::move(best.idx), "adaptive-boost/seed=" + std::to_string(seed));
    d.trials_used = policy.trials;
    d.threshold_missed = !best.hit;
    return d;
}

} // namespace hls
