#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "hls/domain.hpp"
#include "hls/errors.hpp"

namespace hls {

/// Orthonormal Legendre values sqrt(2k+1) P_k(t), k = 0..degree, written into `out`.
/// Orthonormal with respect to the uniform probability measure on [-1, 1].
inline void legendre_normalized(double t, int degree, double* out) {
    double p0 = 1.0;
    out[0] = 1.0;
    if (degree == 0) return;
    double p1 = t;
    out[1] = std::sqrt(3.0) * t;
    for (int k = 2; k <= degree; ++k) {
        const double p2 = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
        out[k] = std::sqrt(2.0 * k + 1.0) * p2;
    }
}

/// Full tensor-product Legendre space of per-dimension degree <= D on [-1,1]^d.
/// Basis index of the multi-index (k_1, ..., k_d) is sum_j k_j (D+1)^(d-j),
/// i.e. the last coordinate varies fastest.
struct TensorLegendre {
    std::size_t dim;
    int degree;

    std::size_t size() const {
        std::size_t n = 1;
        for (std::size_t j = 0; j < dim; ++j) n *= static_cast<std::size_t>(degree + 1);
        return n;
    }

    void evaluate_into(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Ref<Eigen::VectorXd> out) const {
        const auto per = static_cast<std::size_t>(degree + 1);
        std::vector<double> uni(dim * per);
        for (std::size_t j = 0; j < dim; ++j) legendre_normalized(x[static_cast<Eigen::Index>(j)], degree, &uni[j * per]);
        out[0] = 1.0;
        std::size_t filled = 1;
        for (std::size_t j = 0; j < dim; ++j) {
            // expand in place: new index = old * per + k
            for (std::size_t i = filled; i-- > 0;) {
                const double base = out[static_cast<Eigen::Index>(i)];
                for (std::size_t k = per; k-- > 0;)
                    out[static_cast<Eigen::Index>(i * per + k)] = base * uni[j * per + k];
            }
            filled *= per;
        }
    }
};

/// Family of n generator functions evaluated jointly: writes (g_1(x), ..., g_n(x)).
using GeneratorFamily = std::function<void(const Eigen::Ref<const Eigen::VectorXd>&, Eigen::Ref<Eigen::VectorXd>)>;

/// Orthonormal basis of span{g_1..g_n} with respect to a discrete measure on
/// Q grid points.
///
/// Scaling convention: with grid probability weights omega_q (1/Q for the
/// empirical measure), the Q x n matrix `values` satisfies
/// sum_q omega_q values(q,:)^T values(q,:) = I, i.e. each basis function has
/// unit discrete L2 norm. Equivalently, for the uniform grid,
/// values^T values = Q I. If G is the Q x n snapshot matrix and
/// diag(sqrt(omega)) G = Q_thin R, then `to_orthonormal` = R maps snapshot
/// coefficients beta to orthonormal coefficients alpha = R beta and
/// values = G R^{-1}.
struct GridBasis {
    PointSet grid;
    Eigen::VectorXd grid_weights;     // probability weights, sum to 1
    Eigen::MatrixXd values;           // Q x n orthonormal basis values on the grid
    Eigen::MatrixXd to_orthonormal;   // n x n upper triangular R
    GeneratorFamily generators;       // optional: evaluates raw snapshots anywhere

    std::size_t size() const { return static_cast<std::size_t>(values.cols()); }
    std::size_t grid_size() const { return static_cast<std::size_t>(values.rows()); }

    Eigen::VectorXd snapshot_to_orthonormal(const Eigen::Ref<const Eigen::VectorXd>& beta) const {
        return to_orthonormal.triangularView<Eigen::Upper>() * beta;
    }

    Eigen::VectorXd orthonormal_to_snapshot(const Eigen::Ref<const Eigen::VectorXd>& alpha) const {
        return to_orthonormal.triangularView<Eigen::Upper>().solve(alpha);
    }

    void evaluate_into(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Ref<Eigen::VectorXd> out) const {
        if (!generators)
            throw config_error("GridBasis: no generator functions attached; evaluate on grid indices instead");
        Eigen::VectorXd g(static_cast<Eigen::Index>(size()));
        generators(x, g);
        // v(x)^T = g(x)^T R^{-1}  <=>  R^T v(x) = g(x)
        out = to_orthonormal.triangularView<Eigen::Upper>().transpose().solve(g);
    }
};

/// An n-dimensional approximation space with an orthonormal basis.
/// Immutable and cheap to copy (shared representation).
class BasisSet {
public:
    using Representation = std::variant<TensorLegendre, GridBasis>;

    static BasisSet tensor_legendre(std::size_t dim, int degree) {
        if (degree < 0) throw config_error("tensor_legendre_basis: degree must be >= 0");
        if (dim == 0) throw config_error("tensor_legendre_basis: dimension must be positive");
        return BasisSet(std::make_shared<const Representation>(TensorLegendre{dim, degree}),
                        "tensor-legendre(d=" + std::to_string(dim) + ",D=" + std::to_string(degree) + ")");
    }

    static BasisSet from_grid(GridBasis grid, std::string provenance) {
        return BasisSet(std::make_shared<const Representation>(std::move(grid)), std::move(provenance));
    }

    std::size_t size() const {
        return std::visit([](const auto& b) { return b.size(); }, *rep_);
    }

    std::size_t dim() const {
        if (const auto* t = tensor()) return t->dim;
        return static_cast<std::size_t>(grid()->grid.cols());
    }

    const TensorLegendre* tensor() const { return std::get_if<TensorLegendre>(rep_.get()); }
    const GridBasis* grid() const { return std::get_if<GridBasis>(rep_.get()); }
    const std::string& provenance() const { return provenance_; }

    /// True when `evaluate` works at arbitrary points of the domain.
    bool evaluable_anywhere() const {
        if (tensor()) return true;
        return static_cast<bool>(grid()->generators);
    }

    void evaluate_into(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Ref<Eigen::VectorXd> out) const {
        std::visit([&](const auto& b) { b.evaluate_into(x, out); }, *rep_);
    }

    Eigen::VectorXd evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const {
        Eigen::VectorXd out(static_cast<Eigen::Index>(size()));
        evaluate_into(x, out);
        return out;
    }

    /// Basis values at each row of `points`: a points.rows() x n matrix.
    Eigen::MatrixXd evaluate_rows(const PointSet& points) const {
        Eigen::MatrixXd out(points.rows(), static_cast<Eigen::Index>(size()));
        Eigen::VectorXd buf(static_cast<Eigen::Index>(size()));
        for (Eigen::Index i = 0; i < points.rows(); ++i) {
            evaluate_into(points.row(i).transpose(), buf);
            out.row(i) = buf.transpose();
        }
        return out;
    }

private:
    BasisSet(std::shared_ptr<const Representation> rep, std::string provenance)
        : rep_(std::move(rep)), provenance_(std::move(provenance)) {}

    std::shared_ptr<const Representation> rep_;
    std::string provenance_;
};

inline BasisSet tensor_legendre_basis(std::size_t dim, int degree) {
    return BasisSet::tensor_legendre(dim, degree);
}

/// Christoffel function Phi_n(x) = sum_i v_i(x)^2 and the induced weight
/// w(x) = n / Phi_n(x). Both are independent of the orthonormal basis chosen.
class ChristoffelProfile {
public:
    explicit ChristoffelProfile(BasisSet basis) : basis_(std::move(basis)) {}

    double phi(const Eigen::Ref<const Eigen::VectorXd>& x) const {
        return basis_.evaluate(x).squaredNorm();
    }

    double weight(const Eigen::Ref<const Eigen::VectorXd>& x) const {
        return static_cast<double>(basis_.size()) / phi(x);
    }

    /// Phi_n on the grid of a discrete basis.
    Eigen::VectorXd phi_on_grid() const {
        const auto* g = basis_.grid();
        if (!g) throw config_error("christoffel: phi_on_grid requires a grid basis");
        return g->values.rowwise().squaredNorm();
    }

    const BasisSet& basis() const noexcept { return basis_; }

private:
    BasisSet basis_;
};

inline ChristoffelProfile christoffel(const BasisSet& basis) { return ChristoffelProfile(basis); }

/// Numerical rank threshold relative to the largest singular value.
inline constexpr double kRankTolerance = 1e-10;

/// Orthonormalizes n snapshot columns over a Q-point grid by Householder QR
/// (no pivoting, so column order is preserved). Rank is checked through the
/// singular values of R; a numerical rank below n raises
/// rank_deficiency_error naming the deficient count.
///
/// `snapshot_values` is Q x n: column j holds g_j on the grid.
/// `grid_weights`, when given, are the probability weights of the discrete
/// measure; otherwise the empirical measure 1/Q is used.
inline BasisSet discretize_basis(const Eigen::MatrixXd& snapshot_values, PointSet grid,
                                 std::optional<Eigen::VectorXd> grid_weights = std::nullopt,
                                 GeneratorFamily generators = {}, std::string provenance = "discrete") {
    const Eigen::Index q = snapshot_values.rows();
    const Eigen::Index n = snapshot_values.cols();
    if (n == 0) throw config_error("discretize_basis: need at least one snapshot");
    if (q < n) throw config_error("discretize_basis: grid size Q must be >= n");
    if (grid.rows() != q) throw config_error("discretize_basis: grid rows must match snapshot rows");
    if (!snapshot_values.allFinite()) throw numerical_error("discretize_basis: non-finite snapshot values");

    Eigen::VectorXd omega = grid_weights ? *grid_weights : Eigen::VectorXd::Constant(q, 1.0 / static_cast<double>(q));
    if (omega.size() != q || (omega.array() <= 0.0).any())
        throw config_error("discretize_basis: grid weights must be positive, one per grid point");
    omega /= omega.sum();

    const Eigen::VectorXd sqrt_omega = omega.cwiseSqrt();
    Eigen::MatrixXd scaled = sqrt_omega.asDiagonal() * snapshot_values;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(scaled);
    Eigen::MatrixXd r = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();

    const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(r).singularValues();
    const double cutoff = kRankTolerance * sv[0];
    const auto rank = static_cast<std::size_t>((sv.array() > cutoff).count());
    if (sv[0] == 0.0 || rank < static_cast<std::size_t>(n)) {
        const std::size_t deficient = static_cast<std::size_t>(n) - (sv[0] == 0.0 ? 0 : rank);
        throw rank_deficiency_error("discretize_basis: snapshot matrix is rank deficient by " +
                                        std::to_string(deficient) + " (numerical rank " +
                                        std::to_string(static_cast<std::size_t>(n) - deficient) + " < " +
                                        std::to_string(n) + ")",
                                    deficient);
    }

    Eigen::MatrixXd thin_q = qr.householderQ() * Eigen::MatrixXd::Identity(q, n);
    GridBasis gb;
    gb.values = sqrt_omega.cwiseInverse().asDiagonal() * thin_q;
    gb.to_orthonormal = std::move(r);
    gb.grid = std::move(grid);
    gb.grid_weights = std::move(omega);
    gb.generators = std::move(generators);
    return BasisSet::from_grid(std::move(gb), std::move(provenance));
}

/// Evaluates a generator family on every grid point: Q x n.
inline Eigen::MatrixXd evaluate_family(const GeneratorFamily& family, std::size_t n, const PointSet& grid) {
    Eigen::MatrixXd out(grid.rows(), static_cast<Eigen::Index>(n));
    Eigen::VectorXd buf(static_cast<Eigen::Index>(n));
    for (Eigen::Index qi = 0; qi < grid.rows(); ++qi) {
        family(grid.row(qi).transpose(), buf);
        out.row(qi) = buf.transpose();
    }
    return out;
}

} // namespace hls
