#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hls/errors.hpp"
#include "hls/rng.hpp"

namespace hls {

/// A point set stored row-wise: one row per point, one column per coordinate.
using PointSet = Eigen::MatrixXd;

/// Axis-aligned box [lower_1, upper_1] x ... x [lower_d, upper_d].
class HyperRectangle {
public:
    HyperRectangle(Eigen::VectorXd lower, Eigen::VectorXd upper)
        : lower_(std::move(lower)), upper_(std::move(upper)) {
        if (lower_.size() == 0 || lower_.size() != upper_.size())
            throw config_error("HyperRectangle: bound vectors must be non-empty and of equal length");
        for (Eigen::Index j = 0; j < lower_.size(); ++j) {
            if (!(lower_[j] < upper_[j]))
                throw config_error("HyperRectangle: lower[" + std::to_string(j) +
                                   "] must be strictly below upper");
        }
    }

    /// [-1, 1]^d
    static HyperRectangle symmetric_cube(std::size_t d) {
        return {Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d), -1.0),
                Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d), 1.0)};
    }

    static HyperRectangle unit_cube(std::size_t d) {
        return {Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d)),
                Eigen::VectorXd::Ones(static_cast<Eigen::Index>(d))};
    }

    std::size_t dim() const noexcept { return static_cast<std::size_t>(lower_.size()); }
    const Eigen::VectorXd& lower() const noexcept { return lower_; }
    const Eigen::VectorXd& upper() const noexcept { return upper_; }
    double width(std::size_t j) const { return upper_[static_cast<Eigen::Index>(j)] - lower_[static_cast<Eigen::Index>(j)]; }

    bool contains(const Eigen::Ref<const Eigen::VectorXd>& x) const {
        if (static_cast<std::size_t>(x.size()) != dim()) return false;
        return ((x.array() >= lower_.array()) && (x.array() <= upper_.array())).all();
    }

    /// Affine map from [0,1]^d. Values are clamped so rounding never leaves the box.
    Eigen::VectorXd from_unit(const Eigen::Ref<const Eigen::VectorXd>& u) const {
        Eigen::VectorXd x = lower_.array() + u.array() * (upper_ - lower_).array();
        return x.cwiseMax(lower_).cwiseMin(upper_);
    }

    /// Row-wise from_unit for a whole point set.
    PointSet map_points(const PointSet& u) const {
        if (static_cast<std::size_t>(u.cols()) != dim())
            throw config_error("HyperRectangle::map_points: dimension mismatch");
        PointSet x(u.rows(), u.cols());
        for (Eigen::Index i = 0; i < u.rows(); ++i) x.row(i) = from_unit(Eigen::VectorXd(u.row(i).transpose())).transpose();
        return x;
    }

    bool operator==(const HyperRectangle& o) const {
        return lower_.size() == o.lower_.size() && lower_ == o.lower_ && upper_ == o.upper_;
    }

private:
    Eigen::VectorXd lower_;
    Eigen::VectorXd upper_;
};

/// Marginal density families. Only the uniform density is implemented.
enum class Marginal { uniform };

/// Product probability measure on a HyperRectangle.
class ProductMeasure {
public:
    explicit ProductMeasure(HyperRectangle domain)
        : domain_(std::move(domain)), marginals_(domain_.dim(), Marginal::uniform) {}

    ProductMeasure(HyperRectangle domain, std::vector<Marginal> marginals)
        : domain_(std::move(domain)), marginals_(std::move(marginals)) {
        if (marginals_.size() != domain_.dim())
            throw config_error("ProductMeasure: one marginal per dimension required");
    }

    const HyperRectangle& domain() const noexcept { return domain_; }
    std::size_t dim() const noexcept { return domain_.dim(); }
    Marginal marginal(std::size_t j) const { return marginals_.at(j); }

    /// Density of marginal j with respect to Lebesgue measure.
    double marginal_density(std::size_t j, double t) const {
        const auto jj = static_cast<Eigen::Index>(j);
        if (t < domain_.lower()[jj] || t > domain_.upper()[jj]) return 0.0;
        switch (marginals_.at(j)) {
        case Marginal::uniform:
            return 1.0 / domain_.width(j);
        }
        return 0.0;
    }

    /// Inverse marginal CDF; maps unit-interval samples to draws from the measure.
    double marginal_quantile(std::size_t j, double u) const {
        switch (marginals_.at(j)) {
        case Marginal::uniform:
            return domain_.lower()[static_cast<Eigen::Index>(j)] + u * domain_.width(j);
        }
        return 0.0;
    }

    Eigen::VectorXd from_unit(const Eigen::Ref<const Eigen::VectorXd>& u) const {
        Eigen::VectorXd x(u.size());
        for (Eigen::Index j = 0; j < u.size(); ++j)
            x[j] = marginal_quantile(static_cast<std::size_t>(j), u[j]);
        return x.cwiseMax(domain_.lower()).cwiseMin(domain_.upper());
    }

private:
    HyperRectangle domain_;
    std::vector<Marginal> marginals_;
};

namespace detail {

inline double radical_inverse(std::uint64_t index, std::uint32_t base) {
    double inv_base = 1.0 / base;
    double factor = inv_base;
    double result = 0.0;
    while (index > 0) {
        result += static_cast<double>(index % base) * factor;
        index /= base;
        factor *= inv_base;
    }
    return result;
}

// Primitive-polynomial data (degree s, coefficients a, initial m_k) for
// Sobol dimensions 2..10, as in the Joe-Kuo "new-joe-kuo-6.21201" table.
struct SobolPoly {
    unsigned s;
    unsigned a;
    std::array<std::uint32_t, 5> m;
};

inline constexpr std::array<SobolPoly, 9> kSobolPolys{{
    {1, 0, {1, 0, 0, 0, 0}},
    {2, 1, {1, 3, 0, 0, 0}},
    {3, 1, {1, 3, 1, 0, 0}},
    {3, 2, {1, 1, 1, 0, 0}},
    {4, 1, {1, 1, 3, 3, 0}},
    {4, 4, {1, 3, 5, 13, 0}},
    {5, 2, {1, 1, 5, 5, 17}},
    {5, 4, {1, 1, 5, 5, 5}},
    {5, 7, {1, 1, 7, 11, 19}},
}};

inline constexpr std::size_t kSobolMaxDim = kSobolPolys.size() + 1;
inline constexpr unsigned kSobolBits = 32;

inline std::vector<std::array<std::uint32_t, kSobolBits>> sobol_directions(std::size_t dim) {
    std::vector<std::array<std::uint32_t, kSobolBits>> v(dim);
    for (unsigned k = 0; k < kSobolBits; ++k) v[0][k] = 1u << (kSobolBits - 1 - k);
    for (std::size_t j = 1; j < dim; ++j) {
        const auto& p = kSobolPolys[j - 1];
        auto& dir = v[j];
        for (unsigned k = 0; k < p.s; ++k) dir[k] = p.m[k] << (kSobolBits - 1 - k);
        for (unsigned k = p.s; k < kSobolBits; ++k) {
            std::uint32_t val = dir[k - p.s] ^ (dir[k - p.s] >> p.s);
            for (unsigned l = 1; l < p.s; ++l)
                if ((p.a >> (p.s - 1 - l)) & 1u) val ^= dir[k - l];
            dir[k] = val;
        }
    }
    return v;
}

inline std::uint32_t reverse_bits(std::uint32_t x) {
    x = ((x >> 1) & 0x55555555u) | ((x & 0x55555555u) << 1);
    x = ((x >> 2) & 0x33333333u) | ((x & 0x33333333u) << 2);
    x = ((x >> 4) & 0x0f0f0f0fu) | ((x & 0x0f0f0f0fu) << 4);
    x = ((x >> 8) & 0x00ff00ffu) | ((x & 0x00ff00ffu) << 8);
    return (x >> 16) | (x << 16);
}

// Hash-based nested uniform (Owen) scramble of a 32-bit binary fraction.
// The hash only propagates information from low to high bits, so applied to
// the bit-reversed value each output digit depends only on higher-order input
// digits, which is what makes the permutation nested.
inline std::uint32_t nested_scramble(std::uint32_t x, std::uint32_t seed) {
    x = reverse_bits(x);
    x += seed;
    x ^= x * 0x6c50b47cu;
    x ^= x * 0xb82f1e52u;
    x ^= x * 0xc7afe638u;
    x ^= x * 0x8d22f6e6u;
    return reverse_bits(x);
}

} // namespace detail

/// Deterministic source of points in [0,1]^d.
///
/// Three kinds are supported: seeded i.i.d. uniform draws, the Halton sequence
/// with caller-supplied prime bases, and the Sobol sequence (up to 10
/// dimensions) optionally scrambled by a seed-keyed digital shift followed by
/// a nested uniform permutation. Identical configuration replays identical
/// sequences bit-exactly.
class PointStream {
public:
    enum class Kind { iid, halton, sobol };

    static PointStream iid(std::size_t dim, std::uint64_t seed) {
        if (dim == 0) throw config_error("PointStream: dimension must be positive");
        PointStream s(Kind::iid, dim);
        s.seed_ = seed;
        s.rng_ = Rng(seed);
        return s;
    }

    /// Halton points; the first emitted point uses index `start` (default 1,
    /// so base 2 begins 1/2, 1/4, 3/4, ...).
    static PointStream halton(std::vector<std::uint32_t> bases, std::uint64_t start = 1) {
        if (bases.empty()) throw config_error("PointStream: Halton needs at least one base");
        for (auto b : bases)
            if (b < 2) throw config_error("PointStream: Halton bases must be >= 2");
        PointStream s(Kind::halton, bases.size());
        s.bases_ = std::move(bases);
        s.index_ = start;
        return s;
    }

    /// First `dim` primes as Halton bases.
    static PointStream halton(std::size_t dim) {
        static constexpr std::array<std::uint32_t, 10> primes{2, 3, 5, 7, 11, 13, 17, 19, 23, 29};
        if (dim == 0 || dim > primes.size())
            throw config_error("PointStream: default Halton bases cover 1..10 dimensions");
        return halton(std::vector<std::uint32_t>(primes.begin(), primes.begin() + static_cast<long>(dim)));
    }

    static PointStream sobol(std::size_t dim, bool scrambled, std::uint64_t seed = 0) {
        if (dim == 0 || dim > detail::kSobolMaxDim)
            throw config_error("PointStream: Sobol supports 1.." + std::to_string(detail::kSobolMaxDim) +
                               " dimensions");
        PointStream s(Kind::sobol, dim);
        s.seed_ = seed;
        s.scrambled_ = scrambled;
        s.directions_ = detail::sobol_directions(dim);
        if (scrambled) {
            s.shift_.resize(dim);
            s.perm_seed_.resize(dim);
            for (std::size_t j = 0; j < dim; ++j) {
                auto h = derive_seed(seed, "sobol-scramble", {j});
                s.shift_[j] = static_cast<std::uint32_t>(h);
                s.perm_seed_[j] = static_cast<std::uint32_t>(h >> 32);
            }
        }
        s.index_ = 0;
        return s;
    }

    Kind kind() const noexcept { return kind_; }
    std::size_t dim() const noexcept { return dim_; }
    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t position() const noexcept { return index_; }

    /// Next point in [0,1]^d.
    Eigen::VectorXd next() {
        Eigen::VectorXd u(static_cast<Eigen::Index>(dim_));
        switch (kind_) {
        case Kind::iid:
            for (std::size_t j = 0; j < dim_; ++j) u[static_cast<Eigen::Index>(j)] = rng_.uniform();
            break;
        case Kind::halton:
            for (std::size_t j = 0; j < dim_; ++j)
                u[static_cast<Eigen::Index>(j)] = detail::radical_inverse(index_, bases_[j]);
            break;
        case Kind::sobol:
            u = sobol_point(index_);
            break;
        }
        ++index_;
        return u;
    }

    /// `count` consecutive points, one per row.
    PointSet take(std::size_t count) {
        PointSet out(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim_));
        for (std::size_t i = 0; i < count; ++i) out.row(static_cast<Eigen::Index>(i)) = next().transpose();
        return out;
    }

    /// Human-readable description for provenance records.
    std::string describe() const {
        std::ostringstream os;
        switch (kind_) {
        case Kind::iid:
            os << "iid(seed=" << seed_ << ")";
            break;
        case Kind::halton:
            os << "halton(bases=";
            for (std::size_t j = 0; j < bases_.size(); ++j) os << (j ? "," : "") << bases_[j];
            os << ")";
            break;
        case Kind::sobol:
            os << (scrambled_ ? "scrambled-sobol(seed=" : "sobol(") << (scrambled_ ? std::to_string(seed_) : "") << ")";
            break;
        }
        return os.str();
    }

private:
    PointStream(Kind kind, std::size_t dim) : kind_(kind), dim_(dim), rng_(0) {}

    Eigen::VectorXd sobol_point(std::uint64_t index) const {
        const std::uint64_t gray = index ^ (index >> 1);
        Eigen::VectorXd u(static_cast<Eigen::Index>(dim_));
        for (std::size_t j = 0; j < dim_; ++j) {
            std::uint32_t x = 0;
            std::uint64_t g = gray;
            for (unsigned k = 0; g != 0 && k < detail::kSobolBits; ++k, g >>= 1)
                if (g & 1u) x ^= directions_[j][k];
            if (scrambled_) x = detail::nested_scramble(x ^ shift_[j], perm_seed_[j]);
            u[static_cast<Eigen::Index>(j)] = static_cast<double>(x) * 0x1.0p-32;
        }
        return u;
    }

    Kind kind_;
    std::size_t dim_;
    std::uint64_t seed_ = 0;
    std::uint64_t index_ = 0;
    Rng rng_;
    std::vector<std::uint32_t> bases_;
    bool scrambled_ = false;
    std::vector<std::array<std::uint32_t, detail::kSobolBits>> directions_;
    std::vector<std::uint32_t> shift_;
    std::vector<std::uint32_t> perm_seed_;
};

/// Draws `count` points from `stream` and maps them affinely into `domain`.
inline PointSet generate_points(PointStream& stream, std::size_t count, const HyperRectangle& domain) {
    if (count == 0) throw config_error("generate_points: count must be positive");
    if (stream.dim() != domain.dim())
        throw config_error("generate_points: stream dimension " + std::to_string(stream.dim()) +
                           " does not match domain dimension " + std::to_string(domain.dim()));
    return domain.map_points(stream.take(count));
}

/// Gauss-Legendre rule on [-1, 1]: nodes ascending, weights summing to 2.
struct GaussRule {
    Eigen::VectorXd nodes;
    Eigen::VectorXd weights;
};

inline GaussRule gauss_legendre(std::size_t order) {
    if (order == 0) throw config_error("gauss_legendre: order must be positive");
    const auto n = static_cast<Eigen::Index>(order);
    GaussRule rule{Eigen::VectorXd(n), Eigen::VectorXd(n)};
    for (Eigen::Index i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
        double dp;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (Eigen::Index k = 2; k <= n; ++k) {
                double p2 = ((2.0 * static_cast<double>(k) - 1.0) * x * p1 - (static_cast<double>(k) - 1.0) * p0) / static_cast<double>(k);
                p0 = p1;
                p1 = p2;
            }
            dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
            double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        // recompute derivative at the converged node
        double p0 = 1.0, p1 = x;
        for (Eigen::Index k = 2; k <= n; ++k) {
            double p2 = ((2.0 * static_cast<double>(k) - 1.0) * x * p1 - (static_cast<double>(k) - 1.0) * p0) / static_cast<double>(k);
            p0 = p1;
            p1 = p2;
        }
        dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
        double w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.nodes[n - 1 - i] = x;
        rule.nodes[i] = -x;
        rule.weights[i] = w;
        rule.weights[n - 1 - i] = w;
    }
    if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
    if (n == 1) rule.weights[0] = 2.0;
    return rule;
}

/// Tensor Gauss-Legendre nodes and probability weights for a uniform product
/// measure, `level` nodes per dimension.
struct TensorQuadrature {
    PointSet nodes;
    Eigen::VectorXd weights;
};

inline TensorQuadrature tensor_quadrature(const ProductMeasure& measure, std::size_t level) {
    if (level == 0) throw config_error("quadrature: level must be positive");
    const std::size_t d = measure.dim();
    double total = 1.0;
    for (std::size_t j = 0; j < d; ++j) total *= static_cast<double>(level);
    if (total > 5e7) throw config_error("quadrature: tensor grid too large (" + std::to_string(total) + " nodes)");
    for (std::size_t j = 0; j < d; ++j)
        if (measure.marginal(j) != Marginal::uniform)
            throw config_error("quadrature: only uniform marginals are supported");

    const GaussRule rule = gauss_legendre(level);
    const auto count = static_cast<Eigen::Index>(total);
    TensorQuadrature q{PointSet(count, static_cast<Eigen::Index>(d)), Eigen::VectorXd(count)};
    const auto& dom = measure.domain();
    std::vector<std::size_t> idx(d, 0);
    for (Eigen::Index r = 0; r < count; ++r) {
        double w = 1.0;
        for (std::size_t j = 0; j < d; ++j) {
            const auto jj = static_cast<Eigen::Index>(j);
            const auto k = static_cast<Eigen::Index>(idx[j]);
            q.nodes(r, jj) = dom.lower()[jj] + 0.5 * (rule.nodes[k] + 1.0) * dom.width(j);
            w *= 0.5 * rule.weights[k];
        }
        q.weights[r] = w;
        for (std::size_t j = d; j-- > 0;) {
            if (++idx[j] < level) break;
            idx[j] = 0;
        }
    }
    return q;
}

/// Tensor Gauss-Legendre estimate of the integral of g against `measure`.
/// Exact for polynomials of per-dimension degree <= 2*level - 1.
inline double quadrature_integral(const std::function<double(const Eigen::VectorXd&)>& g,
                                  const ProductMeasure& measure, std::size_t level) {
    const TensorQuadrature q = tensor_quadrature(measure, level);
    double sum = 0.0;
    for (Eigen::Index r = 0; r < q.nodes.rows(); ++r) {
        Eigen::VectorXd x = q.nodes.row(r).transpose();
        const double v = g(x);
        if (!std::isfinite(v)) {
            std::ostringstream os;
            os << "quadrature_integral: non-finite integrand at node (";
            for (Eigen::Index j = 0; j < x.size(); ++j) os << (j ? ", " : "") << x[j];
            os << ")";
            throw numerical_error(os.str());
        }
        sum += q.weights[r] * v;
    }
    return sum;
}

} // namespace hls
