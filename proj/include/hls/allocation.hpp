#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "hls/errors.hpp"
#include "hls/sampler.hpp"

namespace hls {

/// Conditional noise variances sigma^2(x_i) at the design points.
struct NoiseProfile {
    enum class Source { exact, mc_estimated, reused_snapshots };

    Eigen::VectorXd sigma2;
    Source source = Source::exact;
    std::size_t samples = 0; // R for estimated profiles

    static NoiseProfile exact(Eigen::VectorXd s2) {
        NoiseProfile p{std::move(s2), Source::exact, 0};
        p.validate();
        return p;
    }

    void validate() const {
        if (sigma2.size() == 0) throw config_error("NoiseProfile: empty variance vector");
        if (!sigma2.allFinite() || (sigma2.array() <= 0.0).any())
            throw config_error("NoiseProfile: variances must be positive and finite");
    }
};

inline const char* to_string(NoiseProfile::Source s) {
    switch (s) {
    case NoiseProfile::Source::exact: return "exact";
    case NoiseProfile::Source::mc_estimated: return "mc-estimated";
    case NoiseProfile::Source::reused_snapshots: return "reused-snapshots";
    }
    return "?";
}

/// A probability vector over the m design points.
struct Allocation {
    enum class Kind { uniform, neyman, a_optimal };

    Eigen::VectorXd p;
    double delta = 0.0;
    Kind kind = Kind::uniform;
    double objective = std::numeric_limits<double>::quiet_NaN(); // G for uniform/neyman, H for a-optimal
    double kkt_residual = 0.0;
    std::size_t iterations = 0;
    bool tolerance_missed = false;

    std::size_t m() const { return static_cast<std::size_t>(p.size()); }
};

inline const char* to_string(Allocation::Kind k) {
    switch (k) {
    case Allocation::Kind::uniform: return "uniform";
    case Allocation::Kind::neyman: return "neyman";
    case Allocation::Kind::a_optimal: return "a-optimal";
    }
    return "?";
}

namespace detail {
inline void check_sizes(const SampleDesign& design, const NoiseProfile& noise) {
    noise.validate();
    if (static_cast<std::size_t>(noise.sigma2.size()) != design.m())
        throw config_error("allocation: noise profile has " + std::to_string(noise.sigma2.size()) +
                           " entries for " + std::to_string(design.m()) + " design points");
}
} // namespace detail

/// G(p) = (1/L) sum_i w_i^2 sigma_i^2 Phi_i / (m^2 p_i). Returns +inf when some
/// p_i = 0 on a point with positive variance.
inline double objective_G(const Eigen::VectorXd& p, const SampleDesign& design, const Eigen::VectorXd& sigma2,
                          double L) {
    const double m = static_cast<double>(design.m());
    double s = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double num = design.weights[i] * design.weights[i] * sigma2[i] * design.phi[i];
        if (num == 0.0) continue;
        if (!(p[i] > 0.0)) return std::numeric_limits<double>::infinity();
        s += num / p[i];
    }
    return s / (L * m * m);
}

inline double objective_G(const Allocation& a, const SampleDesign& design, const NoiseProfile& noise, double L) {
    return objective_G(a.p, design, noise.sigma2, L);
}

/// Closed-form minimum of G: (1/L) ((1/m) sum_i w_i sigma_i sqrt(Phi_i))^2.
inline double neyman_optimal_G(const SampleDesign& design, const NoiseProfile& noise, double L) {
    const double s = (design.weights.array() * noise.sigma2.array().sqrt() * design.phi.array().sqrt()).sum();
    const double m = static_cast<double>(design.m());
    return (s / m) * (s / m) / L;
}

inline Allocation uniform_allocation(std::size_t m) {
    if (m == 0) throw config_error("uniform_allocation: m must be positive");
    Allocation a;
    a.p = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(m), 1.0 / static_cast<double>(m));
    a.kind = Allocation::Kind::uniform;
    return a;
}

/// Neyman allocation p_i proportional to w_i sigma_i sqrt(Phi_i).
inline Allocation neyman_allocation(const SampleDesign& design, const NoiseProfile& noise) {
    detail::check_sizes(design, noise);
    Eigen::VectorXd p = design.weights.array() * noise.sigma2.array().sqrt() * design.phi.array().sqrt();
    const double s = p.sum();
    if (!(s > 0.0) || !std::isfinite(s)) throw numerical_error("neyman_allocation: degenerate weights");
    Allocation a;
    a.p = p / s;
    a.kind = Allocation::Kind::neyman;
    return a;
}

/// Euclidean projection onto P_m(delta) = {p : sum p = 1, p >= delta}.
/// Sorted-threshold algorithm on the shifted simplex, O(m log m).
inline Eigen::VectorXd project_shifted_simplex(const Eigen::VectorXd& y, double delta) {
    const Eigen::Index m = y.size();
    const double budget = 1.0 - static_cast<double>(m) * delta;
    if (m == 0) throw config_error("project_shifted_simplex: empty vector");
    if (budget < -1e-15) throw config_error("project_shifted_simplex: delta exceeds 1/m");
    if (budget <= 0.0) return Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));

    std::vector<double> u(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) u[static_cast<std::size_t>(i)] = y[i] - delta;
    std::sort(u.begin(), u.end(), std::greater<>());
    double cum = 0.0, theta = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
        cum += u[k];
        const double t = (cum - budget) / static_cast<double>(k + 1);
        if (k + 1 == u.size() || u[k + 1] <= t) {
            theta = t;
            break;
        }
    }
    Eigen::VectorXd p(m);
    for (Eigen::Index i = 0; i < m; ++i) p[i] = delta + std::max(y[i] - delta - theta, 0.0);
    return p;
}

/// Evaluates H(p) = tr(U(p)^{-1}) and its gradient, where
/// U(p) = (W^{1/2}V)^T Sigma(p)^{-1} (W^{1/2}V), Sigma(p) = diag(w sigma^2 / (L m p)).
class AOptimalObjective {
public:
    AOptimalObjective(const SampleDesign& design, const NoiseProfile& noise, double L)
        : a_(design.weighted_design()), L_(L) {
        detail::check_sizes(design, noise);
        if (!(L > 0.0)) throw config_error("AOptimalObjective: budget must be positive");
        const double m = static_cast<double>(design.m());
        c_ = (m * (design.weights.array() * noise.sigma2.array()).inverse()).matrix();
        const auto svd = Eigen::JacobiSVD<Eigen::MatrixXd>(a_).singularValues();
        if (svd.size() == 0 || !(svd[svd.size() - 1] > kRankTolerance * svd[0]))
            throw rank_deficiency_error("a_optimal_allocation: weighted design is rank deficient",
                                        static_cast<std::size_t>((svd.array() <= kRankTolerance * svd[0]).count()));
    }

    /// tr(U^{-1}); +inf when U is not positive definite.
    double value(const Eigen::VectorXd& p) const {
        Factor fac;
        if (!factor(p, fac)) return std::numeric_limits<double>::infinity();
        return fac.rinv.squaredNorm() / L_;
    }

    /// Value and gradient: dH/dp_i = -(L m / (w_i sigma_i^2)) r_i^T U^{-2} r_i.
    double value_and_gradient(const Eigen::VectorXd& p, Eigen::VectorXd& grad) const {
        Factor fac;
        if (!factor(p, fac)) {
            grad.setConstant(p.size(), 0.0);
            return std::numeric_limits<double>::infinity();
        }
        const Eigen::MatrixXd b = fac.rinv * fac.m / L_; // columns U^{-1} r_i
        grad = -L_ * c_.cwiseProduct(b.colwise().squaredNorm().transpose());
        return fac.rinv.squaredNorm() / L_;
    }

    /// d^2H/dp_i dp_j = 2 L^2 c_i c_j (r_i^T U^{-1} r_j)(r_i^T U^{-2} r_j), c = m / (w sigma^2).
    Eigen::MatrixXd hessian(const Eigen::VectorXd& p) const {
        Factor fac;
        if (!factor(p, fac)) throw numerical_error("a_optimal_allocation: singular information matrix");
        const Eigen::MatrixXd b = fac.rinv * fac.m / L_;
        const Eigen::MatrixXd k1 = fac.m.transpose() * fac.m / L_;
        const Eigen::MatrixXd k2 = b.transpose() * b;
        const Eigen::VectorXd lc = L_ * c_;
        return 2.0 * lc.asDiagonal() * k1.cwiseProduct(k2) * lc.asDiagonal();
    }

    Eigen::MatrixXd information(const Eigen::VectorXd& p) const {
        return L_ * (a_.transpose() * (c_.cwiseProduct(p)).asDiagonal() * a_);
    }

    double budget() const { return L_; }

private:
    // U = L R^T R with diag(sqrt(c p)) A = Q R; working with R instead of
    // forming U keeps the conditioning at sqrt(cond U).
    struct Factor {
        Eigen::MatrixXd rinv; // R^{-1}
        Eigen::MatrixXd m;    // R^{-T} A^T
    };

    bool factor(const Eigen::VectorXd& p, Factor& out) const {
        if ((p.array() < 0.0).any()) return false;
        const Eigen::MatrixXd scaled = (c_.cwiseProduct(p)).cwiseSqrt().asDiagonal() * a_;
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(scaled);
        const auto n = a_.cols();
        const Eigen::MatrixXd r = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
        const Eigen::VectorXd diag = r.diagonal().cwiseAbs();
        if (!(diag.minCoeff() > 1e-14 * diag.maxCoeff())) return false;
        out.rinv = r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(n, n));
        out.m = r.transpose().triangularView<Eigen::Lower>().solve(a_.transpose());
        return out.rinv.allFinite();
    }

    Eigen::MatrixXd a_;
    Eigen::VectorXd c_;
    double L_;
};

inline double objective_H(const Eigen::VectorXd& p, const SampleDesign& design, const NoiseProfile& noise, double L) {
    return AOptimalObjective(design, noise, L).value(p);
}

inline Eigen::VectorXd gradient_H(const Eigen::VectorXd& p, const SampleDesign& design, const NoiseProfile& noise,
                                  double L) {
    Eigen::VectorXd g;
    AOptimalObjective(design, noise, L).value_and_gradient(p, g);
    return g;
}

/// Scale-free stationarity measure on P_m(delta): ||P(p - g/||g||_inf) - p||_inf.
inline double kkt_residual(const Eigen::VectorXd& p, const Eigen::VectorXd& grad, double delta) {
    const double scale = grad.cwiseAbs().maxCoeff();
    if (!(scale > 0.0)) return 0.0;
    return (project_shifted_simplex(p - grad / scale, delta) - p).cwiseAbs().maxCoeff();
}

struct AOptimalOptions {
    double kkt_tolerance = 1e-8;
    double relative_decrease = 1e-12;
    std::size_t max_iterations = 100000;
    std::size_t gradient_iterations = 100; // first-order phase before the Newton refinement
    std::size_t stall_window = 20;
};

namespace detail {

/// Newton step on the free coordinates F with the equality constraint
/// sum_F d = 0: solves [H_FF 1; 1^T 0][d; nu] = [-g_F; 0] after symmetric
/// diagonal equilibration. Returns false when the system is unusable.
inline bool free_newton_step(const Eigen::MatrixXd& hess, const Eigen::VectorXd& g, const std::vector<Eigen::Index>& free,
                             Eigen::VectorXd& d, double& mu) {
    const auto k = static_cast<Eigen::Index>(free.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(k + 1, k + 1);
    Eigen::VectorXd rhs(k + 1), scale(k + 1);
    for (Eigen::Index a = 0; a < k; ++a) {
        const double h = hess(free[a], free[a]);
        if (!(h > 0.0) || !std::isfinite(h)) return false;
        scale[a] = 1.0 / std::sqrt(h);
    }
    scale[k] = 1.0;
    for (Eigen::Index a = 0; a < k; ++a) {
        for (Eigen::Index b = 0; b < k; ++b) kkt(a, b) = scale[a] * hess(free[a], free[b]) * scale[b];
        kkt(a, a) += 1e-12; // Hessian rank is at most n(n+1)/2; keep the reduced system solvable
        kkt(a, k) = kkt(k, a) = scale[a];
        rhs[a] = -scale[a] * g[free[a]];
    }
    rhs[k] = 0.0;
    // the constraint row is badly scaled next to the equilibrated block; rescale it
    const double cs = 1.0 / std::sqrt(std::max(scale.head(k).squaredNorm(), 1e-300));
    kkt.row(k) *= cs;
    kkt.col(k) *= cs;
    const Eigen::VectorXd sol = kkt.fullPivLu().solve(rhs);
    if (!sol.allFinite()) return false;
    d = Eigen::VectorXd::Zero(g.size());
    for (Eigen::Index a = 0; a < k; ++a) d[free[a]] = scale[a] * sol[a];
    mu = -sol[k] * cs; // g_F + H d + mu 1 = 0 at the solution
    return true;
}

} // namespace detail

/// Minimizes H over P_m(delta). A spectral projected-gradient phase
/// (Barzilai-Borwein steps, Armijo backtracking) started from the Neyman point
/// projected into P_m(delta) locates the active bounds; a feasible active-set
/// Newton phase then converges to KKT residual `kkt_tolerance`. Noise profiles
/// spanning many orders of magnitude make the first-order phase alone far too
/// slow. `tolerance_missed` flags a best iterate above tolerance.
inline Allocation a_optimal_allocation(const SampleDesign& design, const NoiseProfile& noise, double L, double delta,
                                       const AOptimalOptions& opt = {}) {
    detail::check_sizes(design, noise);
    const double m = static_cast<double>(design.m());
    if (!(delta > 0.0) || delta > 1.0 / m * (1.0 + 1e-12))
        throw config_error("a_optimal_allocation: delta must lie in (0, 1/m], got " + std::to_string(delta));
    const AOptimalObjective obj(design, noise, L);

    Eigen::VectorXd p = project_shifted_simplex(neyman_allocation(design, noise).p, delta);
    Eigen::VectorXd g, g_new;
    double f = obj.value_and_gradient(p, g);
    if (!std::isfinite(f)) throw numerical_error("a_optimal_allocation: information matrix singular at start");

    double alpha = 1.0 / std::max(g.cwiseAbs().maxCoeff(), 1e-300);
    double kkt = kkt_residual(p, g, delta);
    std::size_t it = 0, stalled = 0;
    const std::size_t first_order_cap = std::min(opt.gradient_iterations, opt.max_iterations);
    while (kkt > opt.kkt_tolerance && it < first_order_cap && stalled < opt.stall_window) {
        ++it;
        const Eigen::VectorXd trial = project_shifted_simplex(p - alpha * g, delta);
        const Eigen::VectorXd d = trial - p;
        const double slope = g.dot(d);
        if (!(slope < 0.0)) {
            alpha = 1.0 / std::max(g.cwiseAbs().maxCoeff(), 1e-300);
            ++stalled;
            continue;
        }
        double lambda = 1.0, f_new = 0.0;
        Eigen::VectorXd p_new;
        for (int bt = 0; bt < 60; ++bt) {
            p_new = p + lambda * d;
            f_new = obj.value_and_gradient(p_new, g_new);
            if (f_new <= f + 1e-4 * lambda * slope) break;
            lambda *= 0.5;
        }
        if (!(f_new <= f)) {
            ++stalled;
            alpha = 1.0 / std::max(g.cwiseAbs().maxCoeff(), 1e-300);
            continue;
        }
        const Eigen::VectorXd s = p_new - p;
        const Eigen::VectorXd y = g_new - g;
        const double sy = s.dot(y);
        alpha = sy > 0.0 ? std::clamp(s.squaredNorm() / sy, 1e-30, 1e30)
                         : 1.0 / std::max(g_new.cwiseAbs().maxCoeff(), 1e-300);
        stalled = (f - f_new) <= opt.relative_decrease * std::abs(f) ? stalled + 1 : 0;
        p = std::move(p_new);
        g = g_new;
        f = f_new;
        kkt = kkt_residual(p, g, delta);
    }

    // Active-set Newton refinement.
    const Eigen::Index mm = p.size();
    const double bound_tol = 1e-13 / m;
    auto at_bound = [&](Eigen::Index i) { return p[i] - delta <= bound_tol; };
    // Accepts a trial point on sufficient decrease, or, when the predicted
    // decrease is below the floating-point resolution of H, on a smaller KKT residual.
    auto accept = [&](const Eigen::VectorXd& trial, double lam, double slope, double& f_t, Eigen::VectorXd& g_t) {
        f_t = obj.value_and_gradient(trial, g_t);
        if (f_t <= f + 1e-4 * lam * slope && f_t < f) return true;
        return std::abs(slope) <= 1e-12 * std::abs(f) && f_t <= f * (1.0 + 1e-10) && kkt_residual(trial, g_t, delta) < kkt;
    };
    auto clean = [&](Eigen::VectorXd q) {
        for (Eigen::Index i = 0; i < mm; ++i)
            if (q[i] - delta <= bound_tol) q[i] = delta;
        // put the rounding drift of the sum on the largest coordinate
        Eigen::Index imax;
        q.maxCoeff(&imax);
        q[imax] += 1.0 - q.sum();
        return q;
    };
    stalled = 0;
    while (kkt > opt.kkt_tolerance && it < opt.max_iterations && stalled < opt.stall_window) {
        ++it;
        // first-order multiplier estimate from the interior coordinates
        double mu = 0.0;
        int interior = 0;
        for (Eigen::Index i = 0; i < mm; ++i)
            if (!at_bound(i)) mu += g[i], ++interior;
        mu = interior ? mu / interior : g.minCoeff();
        std::vector<Eigen::Index> free;
        for (Eigen::Index i = 0; i < mm; ++i)
            if (!at_bound(i) || g[i] < mu) free.push_back(i);

        const Eigen::MatrixXd hess = obj.hessian(p);
        Eigen::VectorXd d;
        double mu_newton = 0.0;
        bool ok = !free.empty() && detail::free_newton_step(hess, g, free, d, mu_newton);
        // coordinates released from the bound must move inward; otherwise keep them fixed
        for (int pass = 0; ok && pass < 5; ++pass) {
            std::vector<Eigen::Index> keep;
            for (auto i : free)
                if (!at_bound(i) || d[i] > 0.0) keep.push_back(i);
            if (keep.size() == free.size()) break;
            free = std::move(keep);
            ok = !free.empty() && detail::free_newton_step(hess, g, free, d, mu_newton);
        }

        bool moved = false;
        Eigen::VectorXd p_new;
        double f_new = f;
        // a rounding-level slope of either sign still gets a chance through the KKT test
        if (ok && (g.dot(d) < 0.0 || std::abs(g.dot(d)) <= 1e-12 * std::abs(f))) {
            double step_max = 1.0;
            Eigen::Index blocking = -1;
            for (Eigen::Index i = 0; i < mm; ++i) {
                if (d[i] < 0.0 && (p[i] - delta) / -d[i] < step_max) {
                    step_max = (p[i] - delta) / -d[i];
                    blocking = i;
                }
            }
            const double slope = g.dot(d);
            for (double lam = step_max; lam > 1e-20 * step_max && !moved; lam *= 0.5) {
                Eigen::VectorXd trial = (p + lam * d).cwiseMax(delta);
                if (lam == step_max && blocking >= 0) trial[blocking] = delta;
                p_new = clean(std::move(trial));
                moved = accept(p_new, lam, slope, f_new, g_new);
            }
        }
        if (!moved) {
            // Newton could not make progress (typically a bound that should
            // open): fall back to a projected-gradient step
            const double a0 = 1.0 / std::max(g.cwiseAbs().maxCoeff(), 1e-300);
            const Eigen::VectorXd dpg = project_shifted_simplex(p - a0 * g, delta) - p;
            const double slope = g.dot(dpg);
            for (double lam = 1.0; slope < 0.0 && lam > 1e-20 && !moved; lam *= 0.5) {
                p_new = clean(p + lam * dpg);
                moved = accept(p_new, lam, slope, f_new, g_new);
            }
        }
        if (!moved) {
            ++stalled;
            continue;
        }
        stalled = 0;
        p = std::move(p_new);
        g = g_new;
        f = f_new;
        kkt = kkt_residual(p, g, delta);
    }

    Allocation a;
    a.p = p;
    a.delta = delta;
    a.kind = Allocation::Kind::a_optimal;
    a.objective = f;
    a.kkt_residual = kkt;
    a.iterations = it;
    a.tolerance_missed = kkt > opt.kkt_tolerance;
    return a;
}

/// Number of entries strictly above the lower bound delta.
inline std::size_t support_sparsity(const Allocation& a) {
    return static_cast<std::size_t>((a.p.array() > a.delta).count());
}

/// Entries above delta but within `tol` of it; solver round-off can leave
/// bound-active coordinates marginally inside the feasible set.
inline std::size_t boundary_slack(const Allocation& a, double tol = 1e-6) {
    return static_cast<std::size_t>(((a.p.array() > a.delta) && (a.p.array() <= a.delta + tol)).count());
}

/// J_n = max(w sigma^2) * max(1 / (w sigma^2)) over the design points.
inline double condition_J(const SampleDesign& design, const NoiseProfile& noise) {
    detail::check_sizes(design, noise);
    const Eigen::ArrayXd ws = design.weights.array() * noise.sigma2.array();
    return ws.maxCoeff() * ws.inverse().maxCoeff();
}

/// Integer evaluation counts L_i summing exactly to L: floor(p_i L) plus a
/// largest-remainder correction, then at least one evaluation on every point
/// with p_i > 0 (taken from the largest counts).
inline std::vector<std::size_t> integer_counts(const Eigen::VectorXd& p, std::size_t L) {
    const auto m = static_cast<std::size_t>(p.size());
    std::size_t support = 0;
    for (std::size_t i = 0; i < m; ++i) support += p[static_cast<Eigen::Index>(i)] > 0.0;
    if (L < support)
        throw config_error("integer_counts: budget L=" + std::to_string(L) + " below support size " +
                           std::to_string(support));
    std::vector<std::size_t> counts(m);
    std::vector<double> rem(m);
    std::size_t used = 0;
    for (std::size_t i = 0; i < m; ++i) {
        const double x = std::max(p[static_cast<Eigen::Index>(i)], 0.0) * static_cast<double>(L);
        counts[i] = static_cast<std::size_t>(std::floor(x));
        rem[i] = x - std::floor(x);
        used += counts[i];
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (std::size_t k = 0; used < L; k = (k + 1) % m) {
        ++counts[order[k]];
        ++used;
    }
    while (used > L) { // only reachable through rounding of p summing slightly above 1
        auto it = std::max_element(counts.begin(), counts.end());
        --*it;
        --used;
    }
    for (std::size_t i = 0; i < m; ++i) {
        if (p[static_cast<Eigen::Index>(i)] > 0.0 && counts[i] == 0) {
            auto it = std::max_element(counts.begin(), counts.end());
            --*it;
            counts[i] = 1;
        }
    }
    return counts;
}

} // namespace hls
