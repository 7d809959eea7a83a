#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "hls/allocation.hpp"
#include "hls/constraint.hpp"
#include "hls/decoder.hpp"
#include "hls/domain.hpp"
#include "hls/errors.hpp"
#include "hls/random_subspace.hpp"
#include "hls/rng.hpp"
#include "hls/sampler.hpp"

namespace hls {

/// Two correlated geometric Brownian motions under the risk-neutral measure.
struct BSModel {
    double r = 0.03;
    std::array<double, 2> s0{100.0, 96.0};
    double sigma1 = 0.3;
    double sigma2 = 0.1;
    double rho = -0.3;

    void validate() const {
        if (!(s0[0] > 0.0 && s0[1] > 0.0)) throw config_error("BSModel: spot prices must be positive");
        if (!(sigma1 >= 0.0 && sigma2 >= 0.0)) throw config_error("BSModel: volatilities must be nonnegative");
        if (!(rho >= -1.0 && rho <= 1.0)) throw config_error("BSModel: correlation must lie in [-1, 1]");
        if (!std::isfinite(r)) throw config_error("BSModel: rate must be finite");
    }

    BSModel with_params(double s1, double s2, double c) const {
        BSModel m = *this;
        m.sigma1 = s1;
        m.sigma2 = s2;
        m.rho = c;
        return m;
    }
};

/// Parameter box for x = (T, K, sigma1, sigma2, rho).
inline HyperRectangle spread_domain() {
    Eigen::VectorXd lo(5), hi(5);
    lo << 0.0, 0.0, 0.0, 0.0, -1.0;
    hi << 1.0, 50.0, 0.5, 0.5, 1.0;
    return HyperRectangle(lo, hi);
}

/// Discounted spread-call payoff e^{-rT} max(S1_T - S2_T - K, 0) for one
/// standard normal pair (z1, z2).
inline double spread_payoff(double r, const std::array<double, 2>& s0, double T, double K, double s1, double s2,
                            double rho, double z1, double z2) {
    const double sq = std::sqrt(std::max(T, 0.0));
    const double c = std::sqrt(std::max(1.0 - rho * rho, 0.0));
    const double a = s0[0] * std::exp(-0.5 * s1 * s1 * T + s1 * sq * z1);
    const double b = s0[1] * std::exp(-0.5 * s2 * s2 * T + s2 * sq * (rho * z1 + c * z2));
    return std::max(a - b - K * std::exp(-r * T), 0.0);
}

/// Random field over x = (T, K, sigma1, sigma2, rho) whose mean is the spread price.
inline RandomFieldGenerator payoff_field(const BSModel& base) {
    base.validate();
    RandomFieldGenerator g;
    g.dim = 5;
    g.draw_latent = [](Rng& rng) {
        Eigen::VectorXd z(2);
        z[0] = rng.normal();
        z[1] = rng.normal();
        return z;
    };
    g.evaluate = [r = base.r, s0 = base.s0](const Eigen::VectorXd& x, const Eigen::VectorXd& z) {
        return spread_payoff(r, s0, x[0], x[1], x[2], x[3], x[4], z[0], z[1]);
    };
    return g;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Exchange option (K = 0) closed form.
inline double margrabe_price(const BSModel& m, double T) {
    m.validate();
    if (T < 0.0) throw config_error("margrabe_price: T must be nonnegative");
    const double var = m.sigma1 * m.sigma1 + m.sigma2 * m.sigma2 - 2.0 * m.rho * m.sigma1 * m.sigma2;
    const double sbar = std::sqrt(std::max(var, 0.0));
    if (sbar * std::sqrt(T) < 1e-300) return std::max(m.s0[0] - m.s0[1], 0.0);
    const double d1 = (std::log(m.s0[0] / m.s0[1]) + 0.5 * sbar * sbar * T) / (sbar * std::sqrt(T));
    const double d2 = d1 - sbar * std::sqrt(T);
    return m.s0[0] * normal_cdf(d1) - m.s0[1] * normal_cdf(d2);
}

/// Prices on a maturity x strike grid with MC standard errors.
struct QuoteGrid {
    std::vector<double> maturities;
    std::vector<double> strikes;
    Eigen::MatrixXd prices; // |T| x |K|
    Eigen::MatrixXd std_errors;
    std::size_t mc_samples = 0;
    std::uint64_t seed = 0;

    std::size_t size() const { return maturities.size() * strikes.size(); }

    static QuoteGrid calibration_grid() {
        QuoteGrid q;
        for (double d : {10.0, 20.0, 30.0, 60.0, 120.0, 180.0, 240.0}) q.maturities.push_back(d / 252.0);
        for (int k = 1; k <= 25; ++k) q.strikes.push_back(2.0 * k - 1.0);
        return q;
    }

    void validate() const {
        if (maturities.empty() || strikes.empty()) throw config_error("QuoteGrid: empty maturity or strike list");
        if (prices.rows() != static_cast<Eigen::Index>(maturities.size()) ||
            prices.cols() != static_cast<Eigen::Index>(strikes.size()))
            throw config_error("QuoteGrid: price matrix shape does not match the grid");
        if ((prices.array() < 0.0).any()) throw config_error("QuoteGrid: negative price");
    }
};

/// Sample means of the discounted payoff over `mc_samples` normal pairs. The
/// same pairs are used for every (T, K) cell.
inline QuoteGrid synth_market(const BSModel& model, QuoteGrid grid, std::size_t mc_samples, std::uint64_t seed) {
    model.validate();
    if (mc_samples < 2) throw config_error("synth_market: mc_samples must be >= 2");
    if (grid.maturities.empty() || grid.strikes.empty()) throw config_error("synth_market: empty grid");
    const auto nt = static_cast<Eigen::Index>(grid.maturities.size());
    const auto nk = static_cast<Eigen::Index>(grid.strikes.size());
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(nt, nk), m2 = Eigen::MatrixXd::Zero(nt, nk);
    Rng rng(derive_seed(seed, "market"));
    for (std::size_t s = 0; s < mc_samples; ++s) {
        const double z1 = rng.normal(), z2 = rng.normal();
        const double k1 = static_cast<double>(s + 1);
        for (Eigen::Index i = 0; i < nt; ++i)
            for (Eigen::Index j = 0; j < nk; ++j) {
                const double v = spread_payoff(model.r, model.s0, grid.maturities[static_cast<std::size_t>(i)],
                                               grid.strikes[static_cast<std::size_t>(j)], model.sigma1, model.sigma2,
                                               model.rho, z1, z2);
                const double d = v - mean(i, j);
                mean(i, j) += d / k1;
                m2(i, j) += d * (v - mean(i, j));
            }
    }
    grid.prices = mean;
    grid.std_errors = (m2 / static_cast<double>(mc_samples - 1) / static_cast<double>(mc_samples)).cwiseSqrt();
    grid.mc_samples = mc_samples;
    grid.seed = seed;
    return grid;
}

/// Single-cell MC price with its standard error.
inline std::pair<double, double> mc_price(const BSModel& model, double T, double K, std::size_t samples, std::uint64_t seed) {
    QuoteGrid g;
    g.maturities = {T};
    g.strikes = {K};
    g = synth_market(model, g, samples, seed);
    return {g.prices(0, 0), g.std_errors(0, 0)};
}

struct CalibrationResult {
    double sigma1 = 0.0;
    double sigma2 = 0.0;
    double loss = 0.0;
    std::size_t iterations = 0;
    double projected_gradient = 0.0;
    bool converged = false; // false: best iterate returned after hitting a stop without the gradient test
};

struct CalibrationOptions {
    double rho = -0.3;
    std::array<double, 2> lower{0.0, 0.0};
    std::array<double, 2> upper{0.5, 0.5};
    std::array<double, 2> init{0.2, 0.2};
    double fd_step = 1e-5;
    double gradient_tolerance = 1e-10;
    std::size_t max_iterations = 500;
};

/// Box-constrained mean-squared quote fit over (sigma1, sigma2) with rho fixed,
/// by projected Gauss-Newton with a forward-difference Jacobian and Armijo
/// backtracking. `price(T, K, sigma1, sigma2, rho)` is the pricing surrogate.
inline CalibrationResult calibrate(const std::function<double(const Eigen::VectorXd&)>& price, const QuoteGrid& quotes,
                                   const CalibrationOptions& opt = {}) {
    quotes.validate();
    for (int j = 0; j < 2; ++j)
        if (!(opt.init[j] >= opt.lower[j] && opt.init[j] <= opt.upper[j]))
            throw config_error("calibrate: initial point outside the bounds");
    const auto nt = quotes.maturities.size(), nk = quotes.strikes.size();
    const auto N = static_cast<Eigen::Index>(nt * nk);
    std::vector<Eigen::VectorXd> xs;
    Eigen::VectorXd target(N);
    for (std::size_t i = 0; i < nt; ++i)
        for (std::size_t j = 0; j < nk; ++j) {
            Eigen::VectorXd x(5);
            x << quotes.maturities[i], quotes.strikes[j], 0.0, 0.0, opt.rho;
            xs.push_back(x);
            target[static_cast<Eigen::Index>(i * nk + j)] = quotes.prices(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
    auto residual = [&](const Eigen::Vector2d& th) {
        Eigen::VectorXd r(N);
        for (Eigen::Index k = 0; k < N; ++k) {
            Eigen::VectorXd x = xs[static_cast<std::size_t>(k)];
            x[2] = th[0];
            x[3] = th[1];
            r[k] = price(x) - target[k];
        }
        if (!r.allFinite()) throw numerical_error("calibrate: non-finite surrogate price");
        return r;
    };
    const Eigen::Vector2d lo(opt.lower[0], opt.lower[1]), hi(opt.upper[0], opt.upper[1]);
    auto proj = [&](const Eigen::Vector2d& t) { return Eigen::Vector2d(t.cwiseMax(lo).cwiseMin(hi)); };
    auto loss_of = [&](const Eigen::VectorXd& r) { return r.squaredNorm() / static_cast<double>(N); };

    Eigen::Vector2d th(opt.init[0], opt.init[1]);
    Eigen::VectorXd r = residual(th);
    double f = loss_of(r);
    CalibrationResult res;
    std::size_t stalls = 0;
    for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
        Eigen::MatrixXd J(N, 2);
        for (int j = 0; j < 2; ++j) {
            Eigen::Vector2d tp = th;
            const double h = (th[j] + opt.fd_step <= hi[j]) ? opt.fd_step : -opt.fd_step;
            tp[j] += h;
            J.col(j) = (residual(tp) - r) / h;
        }
        const Eigen::Vector2d g = 2.0 * J.transpose() * r / static_cast<double>(N);
        res.projected_gradient = (proj(th - g) - th).norm();
        if (res.projected_gradient <= opt.gradient_tolerance) {
            res.converged = true;
            break;
        }
        // variables held at a bound with the gradient pushing outward stay fixed
        std::array<bool, 2> fixed{};
        for (int j = 0; j < 2; ++j)
            fixed[j] = (th[j] <= lo[j] && g[j] > 0.0) || (th[j] >= hi[j] && g[j] < 0.0);
        Eigen::Matrix2d H = J.transpose() * J;
        Eigen::Vector2d rhs = -J.transpose() * r;
        for (int j = 0; j < 2; ++j)
            if (fixed[j]) {
                H.row(j).setZero();
                H.col(j).setZero();
                H(j, j) = 1.0;
                rhs[j] = 0.0;
            }
        H.diagonal().array() += 1e-12 * std::max(1.0, H.diagonal().maxCoeff());
        Eigen::Vector2d d = H.ldlt().solve(rhs);
        if (!d.allFinite() || g.dot(d) >= 0.0) d = -g; // fall back to steepest descent
        double t = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
            const Eigen::Vector2d trial = proj(th + t * d);
            if ((trial - th).norm() == 0.0) break;
            const Eigen::VectorXd rt = residual(trial);
            const double ft = loss_of(rt);
            if (ft <= f + 1e-4 * g.dot(trial - th)) {
                th = trial;
                r = rt;
                accepted = ft < f;
                f = ft;
                break;
            }
        }
        stalls = accepted ? 0 : stalls + 1;
        if (stalls >= 3) break;
    }
    res.sigma1 = th[0];
    res.sigma2 = th[1];
    res.loss = f;
    return res;
}

inline CalibrationResult calibrate(const Approximant& surrogate, const QuoteGrid& quotes, const CalibrationOptions& opt = {}) {
    if (!surrogate.basis.evaluable_anywhere()) throw config_error("calibrate: surrogate cannot be evaluated off its grid");
    return calibrate([&](const Eigen::VectorXd& x) { return surrogate(x); }, quotes, opt);
}

struct DegeneracyResult {
    double max_abs_difference = 0.0;
    double std_error_at_max = 0.0; // MC standard error of the difference at the maximizing cell
};

/// Largest price gap over the grid between two parameter sets, both priced by
/// MC on the same normal draws.
inline DegeneracyResult degeneracy_probe(const BSModel& model_true, const BSModel& alt, const QuoteGrid& grid,
                                         std::size_t samples, std::uint64_t seed) {
    model_true.validate();
    alt.validate();
    const auto nt = static_cast<Eigen::Index>(grid.maturities.size());
    const auto nk = static_cast<Eigen::Index>(grid.strikes.size());
    if (nt == 0 || nk == 0) throw config_error("degeneracy_probe: empty grid");
    if (samples < 2) throw config_error("degeneracy_probe: samples must be >= 2");
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(nt, nk), m2 = Eigen::MatrixXd::Zero(nt, nk);
    Rng rng(derive_seed(seed, "market"));
    for (std::size_t s = 0; s < samples; ++s) {
        const double z1 = rng.normal(), z2 = rng.normal();
        const double k1 = static_cast<double>(s + 1);
        for (Eigen::Index i = 0; i < nt; ++i)
            for (Eigen::Index j = 0; j < nk; ++j) {
                const double T = grid.maturities[static_cast<std::size_t>(i)], K = grid.strikes[static_cast<std::size_t>(j)];
                const double v =
                    spread_payoff(model_true.r, model_true.s0, T, K, model_true.sigma1, model_true.sigma2, model_true.rho, z1, z2) -
                    spread_payoff(alt.r, alt.s0, T, K, alt.sigma1, alt.sigma2, alt.rho, z1, z2);
                const double d = v - mean(i, j);
                mean(i, j) += d / k1;
                m2(i, j) += d * (v - mean(i, j));
            }
    }
    Eigen::Index bi = 0, bj = 0;
    DegeneracyResult res;
    res.max_abs_difference = mean.cwiseAbs().maxCoeff(&bi, &bj);
    res.std_error_at_max = std::sqrt(m2(bi, bj) / static_cast<double>(samples - 1) / static_cast<double>(samples));
    return res;
}

/// Settings for the spread-option surrogate study.
struct SurrogateSettings {
    BSModel model{};
    std::size_t n = 100;
    std::size_t grid_log2 = 16;     // Q = 2^grid_log2 scrambled Sobol points
    AdaptiveBoosting boosting{};    // m_min/m_max of 0 are filled as 2n / 10n with step n/10
    std::size_t L = 500000;
    double delta_factor = 0.01;     // delta = delta_factor / m
    bool project = true;            // also produce cone-projected surrogates
};

struct SurrogateRealization {
    Subspace subspace;
    SampleDesign design;
    NoiseProfile noise;
};

struct SurrogateFit {
    Pipeline pipeline = Pipeline::hls1;
    Approximant regular;
    std::optional<Approximant> projected;
    Allocation allocation;
    double seconds = 0.0;
};

inline AdaptiveBoosting resolved_boosting(const SurrogateSettings& s) {
    AdaptiveBoosting b = s.boosting;
    if (b.m_min == 0) b.m_min = 2 * s.n;
    if (b.m_max == 0) b.m_max = 10 * s.n;
    if (b.step == 0) b.step = std::max<std::size_t>(1, s.n / 10);
    return b;
}

/// Subspace from n payoff realizations on a scrambled Sobol grid, an
/// adaptively boosted leverage-sampled design, and conditional variances at
/// the design points from the same n realizations.
inline SurrogateRealization build_surrogate_realization(const SurrogateSettings& s, std::uint64_t seed) {
    if (s.grid_log2 < 1 || s.grid_log2 > 24) throw config_error("surrogate: grid_log2 must lie in [1, 24]");
    const RandomFieldGenerator field = payoff_field(s.model);
    PointSet grid = detail::in_stage("grid", [&] {
        PointStream sobol = PointStream::sobol(5, true, derive_seed(seed, "grid"));
        return generate_points(sobol, std::size_t{1} << s.grid_log2, spread_domain());
    });
    Subspace sub = detail::in_stage("subspace", [&] { return build_subspace(field, s.n, grid, derive_seed(seed, "snapshots")); });
    SampleDesign design = detail::in_stage("sampling", [&] {
        return adaptive_boost_discrete(sub.basis, resolved_boosting(s), derive_seed(seed, "design"));
    });
    NoiseProfile noise;
    noise.source = NoiseProfile::Source::reused_snapshots;
    noise.samples = s.n;
    noise.sigma2.resize(static_cast<Eigen::Index>(design.m()));
    for (std::size_t i = 0; i < design.m(); ++i) {
        const auto row = sub.snapshots.row(static_cast<Eigen::Index>(design.grid_indices[i]));
        const double mean = row.mean();
        const double var = (row.array() - mean).square().sum() / static_cast<double>(s.n - 1);
        noise.sigma2[static_cast<Eigen::Index>(i)] = std::max(var, 1e-12);
    }
    return SurrogateRealization{std::move(sub), std::move(design), std::move(noise)};
}

/// One pipeline on a realization. ERM draws uniform points on the parameter box.
inline SurrogateFit fit_surrogate(const SurrogateSettings& s, const SurrogateRealization& real, Pipeline pipeline,
                                  std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const NoisyOracle oracle = payoff_field(s.model).oracle();
    SurrogateFit fit{pipeline, Approximant{real.subspace.basis, {}, pipeline, false}, std::nullopt, {}, 0.0};
    if (pipeline == Pipeline::average) {
        fit.regular = mc_average_baseline(real.subspace, s.n);
    } else if (pipeline == Pipeline::erm) {
        fit.regular = run_erm(real.subspace.basis, oracle, ProductMeasure(spread_domain()), s.L, derive_seed(seed, "erm"));
    } else {
        const double delta = s.delta_factor / static_cast<double>(real.design.m());
        HlsRun run = run_hls_on_design(pipeline, real.subspace.basis, oracle, real.design, real.noise, s.L, delta,
                                       derive_seed(seed, "evaluation"));
        fit.regular = std::move(run.approximant);
        fit.allocation = std::move(run.allocation);
    }
    if (s.project) fit.projected = detail::in_stage("projection", [&] { return project(fit.regular, real.subspace.cone); });
    fit.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return fit;
}

/// MC reference prices at test points, one independent stream per point.
inline Eigen::VectorXd mc_reference(const BSModel& model, const PointSet& points, std::size_t samples, std::uint64_t seed) {
    Eigen::VectorXd out(points.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        Rng rng(derive_seed(seed, "reference", {static_cast<std::uint64_t>(i)}));
        const auto x = points.row(i);
        double mean = 0.0;
        for (std::size_t s = 0; s < samples; ++s) {
            const double z1 = rng.normal(), z2 = rng.normal();
            mean += (spread_payoff(model.r, model.s0, x[0], x[1], x[2], x[3], x[4], z1, z2) - mean) / static_cast<double>(s + 1);
        }
        out[i] = mean;
    }
    return out;
}

} // namespace hls
