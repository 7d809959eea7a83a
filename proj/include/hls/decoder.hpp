#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hls/allocation.hpp"
#include "hls/basis.hpp"
#include "hls/domain.hpp"
#include "hls/errors.hpp"
#include "hls/rng.hpp"
#include "hls/sampler.hpp"

namespace hls {

/// y(x) = f(x) + eps(x). `draw` produces one realization using the supplied
/// generator; `mean` and `variance` are optional closed forms.
struct NoisyOracle {
    std::function<double(const Eigen::VectorXd&, Rng&)> draw;
    std::function<double(const Eigen::VectorXd&)> mean;
    std::function<double(const Eigen::VectorXd&)> variance;
};

enum class Pipeline { hls0, hls1, hls2, erm, average };

inline const char* to_string(Pipeline p) {
    switch (p) {
    case Pipeline::hls0: return "HLS-0";
    case Pipeline::hls1: return "HLS-1";
    case Pipeline::hls2: return "HLS-2";
    case Pipeline::erm: return "ERM";
    case Pipeline::average: return "AVG";
    }
    return "?";
}

inline Pipeline parse_pipeline(const std::string& s) {
    if (s == "HLS-0" || s == "hls0" || s == "hls-0") return Pipeline::hls0;
    if (s == "HLS-1" || s == "hls1" || s == "hls-1") return Pipeline::hls1;
    if (s == "HLS-2" || s == "hls2" || s == "hls-2") return Pipeline::hls2;
    if (s == "ERM" || s == "erm") return Pipeline::erm;
    if (s == "AVG" || s == "avg") return Pipeline::average;
    throw config_error("unknown pipeline '" + s + "'");
}

/// y_i = sqrt(w_i) * ybar_i / sqrt(m), ybar_i the mean of counts[i] draws at x_i.
struct EvaluationVector {
    Eigen::VectorXd y;
    Eigen::VectorXd ybar;
    std::vector<std::size_t> counts;
    std::size_t L = 0;

    /// Realized allocation L_i / L.
    Eigen::VectorXd effective_p() const {
        Eigen::VectorXd p(static_cast<Eigen::Index>(counts.size()));
        for (std::size_t i = 0; i < counts.size(); ++i)
            p[static_cast<Eigen::Index>(i)] = static_cast<double>(counts[i]) / static_cast<double>(L);
        return p;
    }
};

/// f_hat = sum_j coefficients_j v_j over a basis.
struct Approximant {
    BasisSet basis;
    Eigen::VectorXd coefficients;
    Pipeline pipeline = Pipeline::hls0;
    bool projected = false;

    double operator()(const Eigen::VectorXd& x) const { return basis.evaluate(x).dot(coefficients); }

    Eigen::VectorXd evaluate_rows(const PointSet& pts) const { return basis.evaluate_rows(pts) * coefficients; }

    /// Values on the grid of a discrete basis.
    Eigen::VectorXd on_grid() const {
        if (!basis.grid()) throw config_error("Approximant::on_grid: basis has no grid");
        return basis.grid()->values * coefficients;
    }
};

namespace detail {

template <class F>
auto in_stage(const std::string& stage, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const rank_deficiency_error& e) {
        throw rank_deficiency_error(stage_message(stage, e), e.deficiency());
    } catch (const config_error& e) {
        throw config_error(stage_message(stage, e));
    } catch (const numerical_error& e) {
        throw numerical_error(stage_message(stage, e));
    }
}

/// Pseudoinverse solve via SVD with relative cutoff 1e-12 * sigma_max. Raises
/// rank_deficiency_error when a singular value falls below the cutoff.
inline Eigen::VectorXd pinv_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const char* who) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& s = svd.singularValues();
    const double cutoff = 1e-12 * (s.size() ? s[0] : 0.0);
    const auto rank = (s.array() > cutoff).count();
    if (s.size() == 0 || rank < a.cols())
        throw rank_deficiency_error(std::string(who) + ": system matrix is rank deficient (rank " +
                                        std::to_string(rank) + " < " + std::to_string(a.cols()) + ")",
                                    static_cast<std::size_t>(a.cols() - rank));
    Eigen::VectorXd ub = svd.matrixU().transpose() * b;
    for (Eigen::Index i = 0; i < s.size(); ++i) ub[i] /= s[i];
    return svd.matrixV() * ub;
}

} // namespace detail

/// Draws L = sum L_i oracle evaluations split per the integerized allocation.
/// Point i uses its own substream derived from `seed`, so results do not depend
/// on evaluation order.
inline EvaluationVector evaluate_budget(const NoisyOracle& oracle, const SampleDesign& design, const Eigen::VectorXd& p,
                                        std::size_t L, std::uint64_t seed) {
    if (!oracle.draw) throw config_error("evaluate_budget: oracle has no draw function");
    if (static_cast<std::size_t>(p.size()) != design.m()) throw config_error("evaluate_budget: allocation size mismatch");
    EvaluationVector ev;
    ev.L = L;
    ev.counts = integer_counts(p, L);
    const auto m = static_cast<Eigen::Index>(design.m());
    ev.ybar.resize(m);
    ev.y.resize(m);
    const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));
    for (Eigen::Index i = 0; i < m; ++i) {
        const std::size_t c = ev.counts[static_cast<std::size_t>(i)];
        if (c == 0)
            throw config_error("evaluate_budget: design point " + std::to_string(i) + " receives no evaluations");
        Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
        const Eigen::VectorXd x = design.points.row(i).transpose();
        double mean = 0.0; // running mean; exact when all draws coincide
        for (std::size_t k = 0; k < c; ++k) {
            const double v = oracle.draw(x, rng);
            if (!std::isfinite(v))
                throw numerical_error("evaluate_budget: non-finite oracle draw at point " + std::to_string(i));
            mean += (v - mean) / static_cast<double>(k + 1);
        }
        ev.ybar[i] = mean;
        ev.y[i] = std::sqrt(design.weights[i]) * ev.ybar[i] * inv_sqrt_m;
    }
    return ev;
}

inline EvaluationVector evaluate_budget(const NoisyOracle& oracle, const SampleDesign& design, const Allocation& a,
                                        std::size_t L, std::uint64_t seed) {
    return evaluate_budget(oracle, design, a.p, L, seed);
}

/// Non-reweighted estimator alpha = (W^{1/2}V)^+ y.
inline Eigen::VectorXd decode_plain(const SampleDesign& design, const EvaluationVector& ev) {
    if (static_cast<std::size_t>(ev.y.size()) != design.m()) throw config_error("decode_plain: size mismatch");
    return detail::pinv_solve(design.weighted_design(), ev.y, "decode_plain");
}

/// Sigma(p) = diag(w sigma^2 / (L m p)).
inline Eigen::VectorXd noise_covariance(const SampleDesign& design, const Eigen::VectorXd& sigma2, const Eigen::VectorXd& p,
                                        double L) {
    const double m = static_cast<double>(design.m());
    return (design.weights.array() * sigma2.array() / (L * m * p.array())).matrix();
}

/// Whitened estimator alpha = (Sigma^{-1/2} W^{1/2} V)^+ Sigma^{-1/2} y, using
/// the realized allocation L_i / L in Sigma.
inline Eigen::VectorXd decode_reweighted(const SampleDesign& design, const EvaluationVector& ev, const NoiseProfile& noise) {
    detail::check_sizes(design, noise);
    const Eigen::VectorXd p = ev.effective_p();
    for (Eigen::Index i = 0; i < p.size(); ++i)
        if (!(p[i] > 0.0))
            throw config_error("decode_reweighted: point " + std::to_string(i) + " has zero allocation; whitening undefined");
    const Eigen::VectorXd gamma =
        noise_covariance(design, noise.sigma2, p, static_cast<double>(ev.L)).cwiseSqrt().cwiseInverse();
    return detail::pinv_solve(gamma.asDiagonal() * design.weighted_design(), gamma.cwiseProduct(ev.y),
                              "decode_reweighted");
}

/// Unbiased sample variance from R draws per point, floored at 1e-12.
inline NoiseProfile estimate_variance(const NoisyOracle& oracle, const PointSet& points, std::size_t R, std::uint64_t seed) {
    if (R < 2) throw config_error("estimate_variance: R must be at least 2");
    NoiseProfile np;
    np.source = NoiseProfile::Source::mc_estimated;
    np.samples = R;
    np.sigma2.resize(points.rows());
    std::vector<double> v(R);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
        const Eigen::VectorXd x = points.row(i).transpose();
        double mean = 0.0;
        for (std::size_t r = 0; r < R; ++r) mean += (v[r] = oracle.draw(x, rng));
        mean /= static_cast<double>(R);
        double ss = 0.0;
        for (double t : v) ss += (t - mean) * (t - mean);
        np.sigma2[i] = std::max(ss / static_cast<double>(R - 1), 1e-12);
    }
    return np;
}

inline NoiseProfile exact_variance(const NoisyOracle& oracle, const PointSet& points) {
    if (!oracle.variance) throw config_error("exact_variance: oracle has no closed-form variance");
    Eigen::VectorXd s2(points.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i) s2[i] = std::max(oracle.variance(points.row(i).transpose()), 1e-12);
    return NoiseProfile::exact(std::move(s2));
}

/// Streaming least squares: rows are folded into an n x n triangular factor by
/// Householder QR of [R z; A_block b_block], so memory stays O(n^2 + block n).
class IncrementalLeastSquares {
public:
    explicit IncrementalLeastSquares(Eigen::Index n) : n_(n), r_(Eigen::MatrixXd::Zero(n, n)), z_(Eigen::VectorXd::Zero(n)) {}

    void add_rows(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
        if (a.cols() != n_ || a.rows() != b.size()) throw config_error("IncrementalLeastSquares: shape mismatch");
        Eigen::MatrixXd stacked(n_ + a.rows(), n_ + 1);
        stacked.topLeftCorner(n_, n_) = r_;
        stacked.topRightCorner(n_, 1) = z_;
        stacked.bottomLeftCorner(a.rows(), n_) = a;
        stacked.bottomRightCorner(a.rows(), 1) = b;
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(stacked);
        const Eigen::MatrixXd top = qr.matrixQR().topRows(std::min<Eigen::Index>(n_ + 1, stacked.rows()));
        r_ = top.topLeftCorner(n_, n_).triangularView<Eigen::Upper>();
        z_ = top.topRightCorner(n_, 1);
        rows_ += a.rows();
    }

    Eigen::VectorXd solve(const char* who = "least squares") const {
        if (rows_ < n_) throw config_error(std::string(who) + ": fewer rows than unknowns");
        const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(r_).singularValues();
        const auto rank = (sv.array() > 1e-12 * sv[0]).count();
        if (!(sv[0] > 0.0) || rank < n_)
            throw rank_deficiency_error(std::string(who) + ": design is rank deficient", static_cast<std::size_t>(n_ - rank));
        return r_.triangularView<Eigen::Upper>().solve(z_);
    }

    Eigen::Index rows() const { return rows_; }

private:
    Eigen::Index n_;
    Eigen::MatrixXd r_;
    Eigen::VectorXd z_;
    Eigen::Index rows_ = 0;
};

/// ERM baseline: L i.i.d. points from the product measure, one noisy draw each,
/// unweighted least squares over the basis.
inline Approximant run_erm(const BasisSet& basis, const NoisyOracle& oracle, const ProductMeasure& measure, std::size_t L,
                           std::uint64_t seed) {
    return detail::in_stage("erm", [&] {
        if (L < basis.size()) throw config_error("run_erm: need L >= n");
        if (!basis.evaluable_anywhere()) throw config_error("run_erm: basis cannot be evaluated off its grid");
        const auto n = static_cast<Eigen::Index>(basis.size());
        const Eigen::Index block = 4096;
        IncrementalLeastSquares ls(n);
        PointStream points = PointStream::iid(measure.dim(), derive_seed(seed, "erm-points"));
        Rng noise(derive_seed(seed, "erm-noise"));
        Eigen::VectorXd buf(n);
        for (std::size_t done = 0; done < L;) {
            const auto k = static_cast<Eigen::Index>(std::min<std::size_t>(block, L - done));
            Eigen::MatrixXd a(k, n);
            Eigen::VectorXd b(k);
            for (Eigen::Index r = 0; r < k; ++r) {
                const Eigen::VectorXd x = measure.from_unit(points.next());
                basis.evaluate_into(x, buf);
                a.row(r) = buf.transpose();
                b[r] = oracle.draw(x, noise);
            }
            ls.add_rows(a, b);
            done += static_cast<std::size_t>(k);
        }
        return Approximant{basis, ls.solve("run_erm"), Pipeline::erm, false};
    });
}

/// Settings for one end-to-end hybrid run.
struct HlsSettings {
    enum class DesignStream { iid, halton, sobol };

    Pipeline pipeline = Pipeline::hls1;
    std::size_t m = 0;
    std::size_t L = 0;
    double delta = 0.0;                 // HLS-2 only
    std::size_t R = 50;                 // variance-estimation draws per point
    bool exact_variance = false;        // use the oracle's closed-form variance when available
    DesignStream stream = DesignStream::iid;
    BoostingPolicy boosting{};          // trials = 1 disables boosting
};

struct HlsRun {
    Approximant approximant;
    SampleDesign design;
    NoiseProfile noise;
    Allocation allocation;
    EvaluationVector evaluations;
};

/// Allocation step of a pipeline on a given design.
inline Allocation allocate_for(Pipeline pipeline, const SampleDesign& design, const NoiseProfile& noise, double L,
                               double delta) {
    switch (pipeline) {
    case Pipeline::hls0: {
        Allocation a = uniform_allocation(design.m());
        a.objective = objective_G(a, design, noise, L);
        return a;
    }
    case Pipeline::hls1: {
        Allocation a = neyman_allocation(design, noise);
        a.objective = objective_G(a, design, noise, L);
        return a;
    }
    case Pipeline::hls2: return a_optimal_allocation(design, noise, L, delta);
    case Pipeline::erm:
    case Pipeline::average: break;
    }
    throw config_error(std::string("allocate_for: ") + to_string(pipeline) + " has no allocation step");
}

/// Allocation, evaluation and decoding on a fixed design and noise profile.
inline HlsRun run_hls_on_design(Pipeline pipeline, const BasisSet& basis, const NoisyOracle& oracle,
                                const SampleDesign& design, const NoiseProfile& noise, std::size_t L, double delta,
                                std::uint64_t eval_seed) {
    if (pipeline == Pipeline::erm || pipeline == Pipeline::average)
        throw config_error(std::string("run_hls: ") + to_string(pipeline) + " is not a hybrid pipeline");
    if (L < design.m()) throw config_error("run_hls: need L >= m");
    HlsRun run{Approximant{basis, {}, pipeline, false}, design, noise, {}, {}};
    run.allocation = detail::in_stage("allocation", [&] { return allocate_for(pipeline, design, noise, static_cast<double>(L), delta); });
    run.evaluations = detail::in_stage("evaluation", [&] { return evaluate_budget(oracle, design, run.allocation, L, eval_seed); });
    run.approximant.coefficients = detail::in_stage("decode", [&] {
        return pipeline == Pipeline::hls2 ? decode_reweighted(design, run.evaluations, noise)
                                          : decode_plain(design, run.evaluations);
    });
    return run;
}

/// Draws a Christoffel design for `basis` (continuous inverse-CDF sampling for
/// tensor Legendre, leverage sampling for grid bases), boosted per `policy`.
inline SampleDesign draw_design(const BasisSet& basis, std::size_t m, HlsSettings::DesignStream kind,
                                const BoostingPolicy& policy, std::uint64_t seed) {
    return detail::in_stage("sampling", [&] {
        auto call = [&](std::size_t trial) {
            const std::uint64_t s = derive_seed(seed, {static_cast<std::uint64_t>(trial)});
            const std::size_t d = basis.grid() ? 1 : basis.dim();
            PointStream stream = [&] {
                switch (kind) {
                case HlsSettings::DesignStream::halton: return PointStream::halton(d);
                case HlsSettings::DesignStream::sobol: return PointStream::sobol(d, true, s);
                case HlsSettings::DesignStream::iid: break;
                }
                return PointStream::iid(d, s);
            }();
            return basis.grid() ? sample_induced_discrete(basis, m, stream) : sample_induced_continuous(basis, m, stream);
        };
        return boost(call, policy);
    });
}

/// End-to-end hybrid least squares: sample, estimate variance, allocate,
/// evaluate, decode. Stage failures are re-raised tagged with the stage name.
inline HlsRun run_hls(const HlsSettings& s, const BasisSet& basis, const NoisyOracle& oracle, std::uint64_t seed) {
    if (s.m < basis.size()) throw config_error("run_hls: need m >= n");
    if (s.L < s.m) throw config_error("run_hls: need L >= m");
    SampleDesign design = draw_design(basis, s.m, s.stream, s.boosting, derive_seed(seed, "design"));
    NoiseProfile noise = detail::in_stage("variance", [&] {
        return (s.exact_variance && oracle.variance) ? exact_variance(oracle, design.points)
                                                     : estimate_variance(oracle, design.points, s.R, derive_seed(seed, "variance"));
    });
    return run_hls_on_design(s.pipeline, basis, oracle, design, noise, s.L, s.delta, derive_seed(seed, "evaluation"));
}

/// Mean squared difference over test points.
inline double mse(const Approximant& a, const std::function<double(const Eigen::VectorXd&)>& reference,
                  const PointSet& test_points) {
    const Eigen::VectorXd fa = a.evaluate_rows(test_points);
    double s = 0.0;
    for (Eigen::Index i = 0; i < test_points.rows(); ++i) {
        const double e = fa[i] - reference(test_points.row(i).transpose());
        s += e * e;
    }
    return s / static_cast<double>(test_points.rows());
}

inline double mse(const Eigen::VectorXd& approx_values, const Eigen::VectorXd& reference_values) {
    if (approx_values.size() != reference_values.size() || approx_values.size() == 0)
        throw config_error("mse: value vectors must be non-empty and of equal length");
    return (approx_values - reference_values).squaredNorm() / static_cast<double>(approx_values.size());
}

/// L2(mu) error by tensor quadrature against a closed-form reference.
inline double mse_quadrature(const Approximant& a, const std::function<double(const Eigen::VectorXd&)>& reference,
                             const TensorQuadrature& q) {
    const Eigen::VectorXd fa = a.evaluate_rows(q.nodes);
    double s = 0.0;
    for (Eigen::Index i = 0; i < q.nodes.rows(); ++i) {
        const double e = fa[i] - reference(q.nodes.row(i).transpose());
        s += q.weights[i] * e * e;
    }
    return s;
}

} // namespace hls
