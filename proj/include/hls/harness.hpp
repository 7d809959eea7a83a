#pragma once

#include <Eigen/Dense>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "hls/allocation.hpp"
#include "hls/basis.hpp"
#include "hls/constraint.hpp"
#include "hls/csv.hpp"
#include "hls/decoder.hpp"
#include "hls/domain.hpp"
#include "hls/errors.hpp"
#include "hls/finance.hpp"
#include "hls/problems.hpp"
#include "hls/random_subspace.hpp"
#include "hls/sampler.hpp"

namespace hls {

// ---------------------------------------------------------------- hashing

/// SHA-1 of `data` as lowercase hex.
inline std::string sha1_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) throw numerical_error("sha1: cannot allocate digest context");
    const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                    EVP_DigestUpdate(ctx, data.data(), data.size()) == 1 && EVP_DigestFinal_ex(ctx, md, &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) throw numerical_error("sha1: digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

/// Object id git would assign to a blob with this content.
inline std::string git_blob_hash(const std::string& content) {
    std::string buf = "blob " + std::to_string(content.size());
    buf.push_back('\0');
    return sha1_hex(buf + content);
}

/// Short content hash of a design (points and weights, raw bytes).
inline std::string design_hash(const SampleDesign& d) {
    std::string bytes;
    const PointSet pts = d.points; // row-major order independent of storage
    for (Eigen::Index i = 0; i < pts.rows(); ++i)
        for (Eigen::Index j = 0; j < pts.cols(); ++j) {
            const double v = pts(i, j);
            bytes.append(reinterpret_cast<const char*>(&v), sizeof v);
        }
    for (Eigen::Index i = 0; i < d.weights.size(); ++i) {
        const double v = d.weights[i];
        bytes.append(reinterpret_cast<const char*>(&v), sizeof v);
    }
    return sha1_hex(bytes).substr(0, 16);
}

// ---------------------------------------------------------------- config

/// delta = c / m (per_m) or a fixed value.
struct DeltaRule {
    double c = 0.01;
    bool per_m = true;

    double value(std::size_t m) const { return per_m ? c / static_cast<double>(m) : c; }

    double checked(std::size_t m) const {
        const double d = value(m);
        if (!(d > 0.0 && d <= 1.0 / static_cast<double>(m)))
            throw config_error("delta rule " + to_string() + " gives " + format_double(d) + ", outside (0, 1/m] for m = " +
                               std::to_string(m));
        return d;
    }

    std::string to_string() const { return per_m ? format_double(c) + "/m" : format_double(c); }

    static DeltaRule parse(const std::string& s) {
        DeltaRule r;
        const auto slash = s.find('/');
        if (slash == std::string::npos) {
            r.per_m = false;
            r.c = parse_double(s, "delta");
        } else {
            if (s.substr(slash + 1) != "m") throw config_error("delta: expected '<c>/m' or a number, got '" + s + "'");
            r.c = parse_double(s.substr(0, slash), "delta");
        }
        if (!(r.c > 0.0)) throw config_error("delta: must be positive");
        return r;
    }
};

enum class Experiment { synthetic, finance_surrogate, finance_calibrate, allocate_only, subspace_diagnostics };

inline const char* to_string(Experiment e) {
    switch (e) {
    case Experiment::synthetic: return "synthetic";
    case Experiment::finance_surrogate: return "finance-surrogate";
    case Experiment::finance_calibrate: return "finance-calibrate";
    case Experiment::allocate_only: return "allocate-only";
    case Experiment::subspace_diagnostics: return "subspace-diagnostics";
    }
    return "?";
}

inline Experiment parse_experiment(const std::string& s) {
    for (auto e : {Experiment::synthetic, Experiment::finance_surrogate, Experiment::finance_calibrate,
                   Experiment::allocate_only, Experiment::subspace_diagnostics})
        if (s == to_string(e)) return e;
    throw config_error("unknown experiment '" + s + "'");
}

struct ExperimentConfig {
    Experiment experiment = Experiment::synthetic;
    std::uint64_t seed = 20240101;
    std::size_t replicates = 100;
    std::string output_dir; // relative to the output root; defaults to the experiment name
    std::vector<Pipeline> pipelines;

    // polynomial study
    std::vector<std::size_t> degrees{4, 5, 6};
    std::size_t m_factor = 3; // m = m_factor * n
    std::vector<double> gammas{10, 30, 100, 300, 1000};
    std::vector<std::size_t> budgets{2500, 7500, 25000, 75000, 250000};
    std::size_t R = 50;
    DeltaRule delta{};
    HlsSettings::DesignStream design_stream = HlsSettings::DesignStream::halton;
    std::size_t boosting_trials = 1;
    double cond_threshold = 2.5;
    bool exact_variance = false;
    std::size_t quadrature_level = 20;
    std::size_t ratio_quadrature_level = 64;

    // spread-option study
    SurrogateSettings surrogate{};
    std::size_t test_points = 1000;
    std::size_t reference_samples = 500000;
    std::size_t quote_samples = 500000;
    BSModel truth = BSModel{}.with_params(0.3, 0.1, -0.3);
    CalibrationOptions calibration{};
    std::size_t save_surrogates = 1;

    // subspace diagnostics
    std::vector<std::size_t> n_values{2, 4, 8, 16, 32};
    std::size_t field_terms = 30;
    double field_decay = 0.5;
    double field_scale = 0.5;
    std::size_t grid_points = 1000;
    double eps = 0.4;
    double failure_probability = 0.1;

    std::map<std::string, std::string> raw; // every key as given, for the manifest

    std::size_t budget_points() const { return budgets.size(); }

    void validate() const {
        if (replicates == 0) throw config_error("replicates must be positive");
        if (pipelines.empty()) throw config_error("pipelines: empty list");
        switch (experiment) {
        case Experiment::synthetic:
        case Experiment::allocate_only:
            if (degrees.empty()) throw config_error("degrees: empty list");
            if (gammas.size() != budgets.size()) throw config_error("gammas and budgets must have equal length");
            if (budgets.empty()) throw config_error("budgets: empty list");
            if (m_factor == 0) throw config_error("m_factor must be positive");
            if (R < 2) throw config_error("R must be >= 2");
            if (quadrature_level == 0 || ratio_quadrature_level == 0) throw config_error("quadrature levels must be positive");
            for (auto d : degrees) {
                if (d > 30) throw config_error("degrees: " + std::to_string(d) + " is out of range [0, 30]");
                const std::size_t n = (d + 1) * (d + 1), m = m_factor * n;
                delta.checked(m);
                for (auto L : budgets)
                    if (L < m) throw config_error("budget " + std::to_string(L) + " is below m = " + std::to_string(m));
            }
            for (auto p : pipelines)
                if (p == Pipeline::average) throw config_error("pipelines: AVG needs a random subspace");
            break;
        case Experiment::finance_surrogate:
        case Experiment::finance_calibrate:
            if (!delta.per_m) throw config_error("delta: the spread study needs a '<c>/m' rule");
            if (!(delta.c <= 1.0)) throw config_error("delta: c must be <= 1");
            if (surrogate.n < 2) throw config_error("n must be >= 2");
            if (test_points == 0 || reference_samples < 2) throw config_error("test_points and reference_samples must be positive");
            if (quote_samples < 2) throw config_error("quote_samples must be >= 2");
            surrogate.model.validate();
            truth.validate();
            break;
        case Experiment::subspace_diagnostics:
            if (n_values.empty()) throw config_error("n_values: empty list");
            if (grid_points < 2) throw config_error("grid_points must be >= 2");
            if (!(field_decay > 0.0 && field_decay < 1.0)) throw config_error("field_decay must lie in (0, 1)");
            if (!(field_scale > 0.0)) throw config_error("field_scale must be positive");
            if (!(eps > 0.0)) throw config_error("eps must be positive");
            if (!(failure_probability > 0.0 && failure_probability < 1.0))
                throw config_error("failure_probability must lie in (0, 1)");
            break;
        }
    }
};

namespace detail {

inline bool parse_bool(const std::string& s, const std::string& key) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw config_error(key + ": expected true/false, got '" + s + "'");
}

template <class T, class F>
std::vector<T> parse_vec(const std::string& s, F&& conv) {
    std::vector<T> out;
    for (const auto& item : split_list(s)) out.push_back(conv(item));
    return out;
}

inline std::array<double, 2> parse_pair(const std::string& s, const std::string& key) {
    auto v = split_list(s);
    if (v.size() != 2) throw config_error(key + ": expected two comma-separated numbers");
    return {parse_double(v[0], key), parse_double(v[1], key)};
}

} // namespace detail

/// Parses a flat `key = value` file. Blank lines and text after '#' are ignored.
inline ExperimentConfig parse_config(const std::string& text, const std::string& source = "config") {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
        auto trim = [](std::string s) {
            const auto x = s.find_first_not_of(" \t\r");
            const auto y = s.find_last_not_of(" \t\r");
            return x == std::string::npos ? std::string{} : s.substr(x, y - x + 1);
        };
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (key.empty()) throw config_error(source + ":" + std::to_string(lineno) + ": empty key");
        if (kv.count(key)) throw config_error(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
        kv[key] = value;
    }
    if (!kv.count("experiment")) throw config_error(source + ": missing 'experiment'");

    ExperimentConfig c;
    c.raw = kv;
    c.experiment = parse_experiment(kv["experiment"]);
    const bool finance = c.experiment == Experiment::finance_surrogate || c.experiment == Experiment::finance_calibrate;
    c.pipelines = finance ? std::vector<Pipeline>{Pipeline::hls0, Pipeline::hls1, Pipeline::hls2, Pipeline::erm, Pipeline::average}
                          : std::vector<Pipeline>{Pipeline::hls0, Pipeline::hls1, Pipeline::hls2, Pipeline::erm};
    if (c.experiment == Experiment::subspace_diagnostics) c.replicates = 50;

    auto sz = [](const std::string& key) { return [key](const std::string& v) { return parse_size(v, key); }; };
    auto dbl = [](const std::string& key) { return [key](const std::string& v) { return parse_double(v, key); }; };
    std::array<double, 2> truth_s{c.truth.sigma1, c.truth.sigma2};
    double truth_rho = c.truth.rho;
    for (const auto& [key, v] : kv) {
        if (key == "experiment") continue;
        else if (key == "seed") c.seed = parse_size(v, key);
        else if (key == "replicates") c.replicates = parse_size(v, key);
        else if (key == "output_dir") c.output_dir = v;
        else if (key == "pipelines") c.pipelines = detail::parse_vec<Pipeline>(v, [](const std::string& s) { return parse_pipeline(s); });
        else if (key == "degrees") c.degrees = detail::parse_vec<std::size_t>(v, sz(key));
        else if (key == "m_factor") c.m_factor = parse_size(v, key);
        else if (key == "gammas") c.gammas = detail::parse_vec<double>(v, dbl(key));
        else if (key == "budgets") c.budgets = detail::parse_vec<std::size_t>(v, sz(key));
        else if (key == "R") c.R = parse_size(v, key);
        else if (key == "delta") c.delta = DeltaRule::parse(v);
        else if (key == "design_stream") {
            if (v == "halton") c.design_stream = HlsSettings::DesignStream::halton;
            else if (v == "sobol") c.design_stream = HlsSettings::DesignStream::sobol;
            else if (v == "iid") c.design_stream = HlsSettings::DesignStream::iid;
            else throw config_error("design_stream: expected halton, sobol or iid");
        }
        else if (key == "boosting_trials") c.boosting_trials = parse_size(v, key);
        else if (key == "cond_threshold") c.cond_threshold = parse_double(v, key);
        else if (key == "exact_variance") c.exact_variance = detail::parse_bool(v, key);
        else if (key == "quadrature_level") c.quadrature_level = parse_size(v, key);
        else if (key == "ratio_quadrature_level") c.ratio_quadrature_level = parse_size(v, key);
        else if (key == "n") c.surrogate.n = parse_size(v, key);
        else if (key == "grid_log2") c.surrogate.grid_log2 = parse_size(v, key);
        else if (key == "m_min") c.surrogate.boosting.m_min = parse_size(v, key);
        else if (key == "m_max") c.surrogate.boosting.m_max = parse_size(v, key);
        else if (key == "m_step") c.surrogate.boosting.step = parse_size(v, key);
        else if (key == "L") c.surrogate.L = parse_size(v, key);
        else if (key == "project") c.surrogate.project = detail::parse_bool(v, key);
        else if (key == "test_points") c.test_points = parse_size(v, key);
        else if (key == "reference_samples") c.reference_samples = parse_size(v, key);
        else if (key == "quote_samples") c.quote_samples = parse_size(v, key);
        else if (key == "true_sigmas") truth_s = detail::parse_pair(v, key);
        else if (key == "rho") truth_rho = parse_double(v, key);
        else if (key == "calibration_init") c.calibration.init = detail::parse_pair(v, key);
        else if (key == "calibration_lower") c.calibration.lower = detail::parse_pair(v, key);
        else if (key == "calibration_upper") c.calibration.upper = detail::parse_pair(v, key);
        else if (key == "save_surrogates") c.save_surrogates = parse_size(v, key);
        else if (key == "n_values") c.n_values = detail::parse_vec<std::size_t>(v, sz(key));
        else if (key == "field_terms") c.field_terms = parse_size(v, key);
        else if (key == "field_decay") c.field_decay = parse_double(v, key);
        else if (key == "field_scale") c.field_scale = parse_double(v, key);
        else if (key == "grid_points") c.grid_points = parse_size(v, key);
        else if (key == "eps") c.eps = parse_double(v, key);
        else if (key == "failure_probability") c.failure_probability = parse_double(v, key);
        else throw config_error(source + ": unknown key '" + key + "'");
    }
    // boosting trials / threshold are shared by both studies
    c.surrogate.boosting.trials = kv.count("boosting_trials") ? c.boosting_trials : 50;
    c.surrogate.boosting.cond_threshold = c.cond_threshold;
    if (!kv.count("boosting_trials") && !finance) c.boosting_trials = 1;
    c.surrogate.delta_factor = c.delta.c;
    c.truth = c.truth.with_params(truth_s[0], truth_s[1], truth_rho);
    c.calibration.rho = truth_rho;
    if (c.output_dir.empty()) c.output_dir = to_string(c.experiment);
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) { return parse_config(read_text_file(path), path); }

// ---------------------------------------------------------------- report

struct ResultRow {
    std::string pipeline;
    std::string variant = "regular"; // or "projected"
    std::size_t degree = 0;          // polynomial degree D; 0 for random subspaces
    std::size_t n = 0;
    std::size_t m = 0;
    double gamma = std::numeric_limits<double>::quiet_NaN();
    std::size_t L = 0;
    std::size_t replicate = 0;
    std::uint64_t seed = 0;
    std::string design_hash;
    double cond = 0.0;
    double mse = 0.0;
    double seconds = 0.0; // goes to timings.csv only
};

struct ExperimentReport {
    Experiment experiment = Experiment::synthetic;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> config;
    std::vector<ResultRow> rows;
    std::vector<Table> extras;
    std::vector<std::pair<std::string, std::string>> artifacts; // relative path, content
    nlohmann::ordered_json summary = nlohmann::ordered_json::object();
};

namespace detail {

inline std::string gamma_text(double g) { return std::isnan(g) ? "NA" : format_double(g); }

/// Type-7 sample quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& s, double q) {
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    const double h = q * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

} // namespace detail

inline Table rows_table(const ExperimentReport& r) {
    Table t{"rows", {"pipeline", "variant", "D", "n", "m", "gamma", "L", "replicate", "seed", "design_hash", "cond", "mse"}, {}};
    for (const auto& x : r.rows)
        t.add({x.pipeline, x.variant, std::to_string(x.degree), std::to_string(x.n), std::to_string(x.m), detail::gamma_text(x.gamma),
               std::to_string(x.L), std::to_string(x.replicate), std::to_string(x.seed), x.design_hash, format_double(x.cond),
               format_double(x.mse)});
    return t;
}

/// One row per (D, gamma, L, pipeline, variant) in order of first appearance.
inline Table aggregate_table(const ExperimentReport& r) {
    Table t{"aggregate",
            {"pipeline", "variant", "D", "gamma", "L", "count", "mean_mse", "mean_log10_mse", "median_log10_mse", "q1_log10_mse",
             "q3_log10_mse"},
            {}};
    std::vector<std::string> order;
    std::map<std::string, std::vector<const ResultRow*>> groups;
    for (const auto& x : r.rows) {
        const std::string key = x.pipeline + '|' + x.variant + '|' + std::to_string(x.degree) + '|' + detail::gamma_text(x.gamma) + '|' +
                                std::to_string(x.L);
        if (!groups.count(key)) order.push_back(key);
        groups[key].push_back(&x);
    }
    for (const auto& key : order) {
        const auto& g = groups[key];
        std::vector<double> logs;
        double sum = 0.0;
        for (const auto* x : g) {
            sum += x->mse;
            logs.push_back(std::log10(x->mse));
        }
        double mean_log = 0.0;
        for (double l : logs) mean_log += l;
        mean_log /= static_cast<double>(logs.size());
        std::sort(logs.begin(), logs.end());
        const ResultRow& f = *g.front();
        t.add({f.pipeline, f.variant, std::to_string(f.degree), detail::gamma_text(f.gamma), std::to_string(f.L), std::to_string(g.size()),
               format_double(sum / static_cast<double>(g.size())), format_double(mean_log),
               format_double(detail::quantile_sorted(logs, 0.5)), format_double(detail::quantile_sorted(logs, 0.25)),
               format_double(detail::quantile_sorted(logs, 0.75))});
    }
    return t;
}

inline Table timings_table(const ExperimentReport& r) {
    Table t{"timings", {"pipeline", "variant", "D", "gamma", "L", "replicate", "seconds"}, {}};
    for (const auto& x : r.rows)
        t.add({x.pipeline, x.variant, std::to_string(x.degree), detail::gamma_text(x.gamma), std::to_string(x.L),
               std::to_string(x.replicate), format_double(x.seconds)});
    return t;
}

struct EmittedReport {
    std::filesystem::path directory;
    std::map<std::string, std::string> file_hashes; // relative path -> git blob id
    std::string content_hash;                       // over all deterministic outputs
};

namespace detail {
inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw std::runtime_error("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << content;
    out.close();
    if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}
} // namespace detail

/// Writes rows.csv, aggregate.csv, extra tables, artifacts, timings.csv and
/// manifest.json. Everything except timings.csv is a pure function of the
/// config and master seed.
inline EmittedReport emit_report(const ExperimentReport& r, const std::filesystem::path& dir) {
    EmittedReport out;
    out.directory = dir;
    std::vector<std::pair<std::string, std::string>> files;
    files.emplace_back("rows.csv", rows_table(r).to_csv());
    files.emplace_back("aggregate.csv", aggregate_table(r).to_csv());
    for (const auto& t : r.extras) files.emplace_back(t.name + ".csv", t.to_csv());
    for (const auto& a : r.artifacts) files.push_back(a);
    std::set<std::string> seen;
    std::string digest_input;
    for (const auto& [name, content] : files) {
        if (!seen.insert(name).second) throw config_error("emit_report: duplicate output '" + name + "'");
        detail::write_file(dir / name, content);
        out.file_hashes[name] = git_blob_hash(content);
        digest_input += out.file_hashes[name] + "  " + name + "\n";
    }
    out.content_hash = sha1_hex(digest_input);
    detail::write_file(dir / "timings.csv", timings_table(r).to_csv());

    nlohmann::ordered_json m;
    m["experiment"] = to_string(r.experiment);
    m["master_seed"] = r.seed;
    m["config"] = r.config;
    m["summary"] = r.summary;
    m["files"] = out.file_hashes;
    m["content_hash"] = out.content_hash;
    detail::write_file(dir / "manifest.json", m.dump(2) + "\n");
    return out;
}

// ---------------------------------------------------------------- polynomial study

/// |sigma sqrt(Phi)|_{L1}^2 / |sigma sqrt(Phi)|_{L2}^2 = (int sigma sqrt(Phi))^2 / int sigma^2 Phi,
/// the asymptotic MSE ratio of Neyman-allocated hybrid least squares to ERM.
inline double variance_factor_ratio(const BasisSet& basis, const std::function<double(const Eigen::VectorXd&)>& sigma,
                                    const ProductMeasure& measure, std::size_t level) {
    const TensorQuadrature q = tensor_quadrature(measure, level);
    const ChristoffelProfile phi = christoffel(basis);
    double l1 = 0.0, l2 = 0.0;
    for (Eigen::Index i = 0; i < q.nodes.rows(); ++i) {
        const Eigen::VectorXd x = q.nodes.row(i).transpose();
        const double s = sigma(x), p = phi.phi(x);
        l1 += q.weights[i] * s * std::sqrt(p);
        l2 += q.weights[i] * s * s * p;
    }
    if (!(l2 > 0.0)) throw numerical_error("variance_factor_ratio: sigma vanishes identically");
    return l1 * l1 / l2;
}

namespace detail {

template <class F>
auto with_context(const std::string& ctx, F&& f) -> decltype(f()) {
    return in_stage(ctx, std::forward<F>(f));
}

inline std::string pipeline_list(const std::vector<Pipeline>& ps) {
    std::string s;
    for (auto p : ps) s += std::string(s.empty() ? "" : ",") + to_string(p);
    return s;
}

} // namespace detail

/// Polynomial study: for each degree D, a Christoffel design with m = m_factor
/// (D+1)^2 points shared by every replicate and pipeline; per replicate a
/// fresh R-sample variance estimate shared by HLS-1/HLS-2, and for every
/// budget one evaluation stream shared by all pipelines. MSE by tensor
/// quadrature against the closed-form target.
inline ExperimentReport run_synthetic(const ExperimentConfig& c) {
    if (c.experiment != Experiment::synthetic) throw config_error("run_synthetic: experiment must be synthetic");
    c.validate();
    ExperimentReport rep;
    rep.experiment = c.experiment;
    rep.seed = c.seed;
    rep.config = c.raw;
    const NoisyOracle oracle = SyntheticProblem::oracle();
    const ProductMeasure measure = SyntheticProblem::measure();
    const TensorQuadrature quad = tensor_quadrature(measure, c.quadrature_level);
    Table ratios{"variance_factor", {"D", "n", "m", "ratio", "quadrature_level"}, {}};
    BoostingPolicy boosting;
    boosting.trials = c.boosting_trials;
    boosting.cond_threshold = c.cond_threshold;

    for (std::size_t D : c.degrees) {
        const BasisSet basis = tensor_legendre_basis(2, static_cast<int>(D));
        const std::size_t n = basis.size(), m = c.m_factor * n;
        const double delta = c.delta.checked(m);
        const double ratio = variance_factor_ratio(basis, SyntheticProblem::sigma, measure, c.ratio_quadrature_level);
        ratios.add({std::to_string(D), std::to_string(n), std::to_string(m), format_double(ratio), std::to_string(c.ratio_quadrature_level)});
        const std::string dctx = "D=" + std::to_string(D);
        const SampleDesign design =
            detail::with_context(dctx, [&] { return draw_design(basis, m, c.design_stream, boosting, derive_seed(c.seed, "design", {D})); });
        const std::string dhash = design_hash(design);
        for (std::size_t r = 0; r < c.replicates; ++r) {
            const std::string rctx = dctx + " replicate=" + std::to_string(r);
            const NoiseProfile noise = detail::with_context(rctx, [&] {
                return c.exact_variance ? exact_variance(oracle, design.points)
                                        : estimate_variance(oracle, design.points, c.R, derive_seed(c.seed, "variance", {D, r}));
            });
            for (std::size_t b = 0; b < c.budgets.size(); ++b) {
                const std::size_t L = c.budgets[b];
                const std::uint64_t eval_seed = derive_seed(c.seed, "evaluation", {D, b, r});
                for (Pipeline p : c.pipelines) {
                    const std::string ctx = "D=" + std::to_string(D) + " gamma=" + format_double(c.gammas[b]) + " pipeline=" +
                                            to_string(p) + " replicate=" + std::to_string(r);
                    const auto t0 = std::chrono::steady_clock::now();
                    ResultRow row;
                    row.pipeline = to_string(p);
                    row.degree = D;
                    row.n = n;
                    row.m = m;
                    row.gamma = c.gammas[b];
                    row.L = L;
                    row.replicate = r;
                    row.seed = eval_seed;
                    detail::with_context(ctx, [&] {
                        if (p == Pipeline::erm) {
                            const Approximant a = run_erm(basis, oracle, measure, L, derive_seed(c.seed, "erm", {D, b, r}));
                            row.mse = mse_quadrature(a, SyntheticProblem::f, quad);
                            row.m = L;
                            row.cond = std::numeric_limits<double>::quiet_NaN();
                            row.design_hash = "iid";
                        } else {
                            const HlsRun run = run_hls_on_design(p, basis, oracle, design, noise, L, delta, eval_seed);
                            row.mse = mse_quadrature(run.approximant, SyntheticProblem::f, quad);
                            row.cond = design.condition();
                            row.design_hash = dhash;
                        }
                        if (!std::isfinite(row.mse)) throw numerical_error("non-finite MSE");
                        return 0;
                    });
                    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                    rep.rows.push_back(std::move(row));
                }
            }
        }
    }
    rep.extras.push_back(std::move(ratios));
    rep.summary["pipelines"] = detail::pipeline_list(c.pipelines);
    rep.summary["replicates"] = c.replicates;
    return rep;
}

/// Design as CSV: point coordinates x1.., the weight w(x_i), and raw basis
/// values b0.. (unscaled by 1/sqrt(m)).
inline Table design_table(const SampleDesign& d) {
    Table t{"design", {}, {}};
    for (Eigen::Index j = 0; j < d.points.cols(); ++j) t.header.push_back("x" + std::to_string(j + 1));
    t.header.push_back("weight");
    for (std::size_t j = 0; j < d.n(); ++j) t.header.push_back("b" + std::to_string(j));
    const double sm = std::sqrt(static_cast<double>(d.m()));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(d.m()); ++i) {
        std::vector<std::string> r;
        for (Eigen::Index j = 0; j < d.points.cols(); ++j) r.push_back(format_double(d.points(i, j)));
        r.push_back(format_double(d.weights[i]));
        for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(d.n()); ++j) r.push_back(format_double(d.design(i, j) * sm));
        t.add(std::move(r));
    }
    return t;
}

inline SampleDesign design_from_table(const Table& t) {
    const std::size_t cw = t.column("weight");
    std::vector<std::size_t> xs, bs;
    for (std::size_t j = 0;; ++j) {
        auto it = std::find(t.header.begin(), t.header.end(), "b" + std::to_string(j));
        if (it == t.header.end()) break;
        bs.push_back(static_cast<std::size_t>(it - t.header.begin()));
    }
    for (std::size_t j = 1;; ++j) {
        auto it = std::find(t.header.begin(), t.header.end(), "x" + std::to_string(j));
        if (it == t.header.end()) break;
        xs.push_back(static_cast<std::size_t>(it - t.header.begin()));
    }
    if (bs.empty()) throw config_error(t.name + ": no basis columns b0, b1, ...");
    if (t.rows.empty()) throw config_error(t.name + ": no design points");
    const auto m = static_cast<Eigen::Index>(t.rows.size());
    PointSet pts = PointSet::Zero(m, static_cast<Eigen::Index>(std::max<std::size_t>(1, xs.size())));
    Eigen::MatrixXd vals(m, static_cast<Eigen::Index>(bs.size()));
    Eigen::VectorXd w(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto& r = t.rows[static_cast<std::size_t>(i)];
        for (std::size_t j = 0; j < xs.size(); ++j) pts(i, static_cast<Eigen::Index>(j)) = parse_double(r[xs[j]], "x");
        w[i] = parse_double(r[cw], "weight");
        for (std::size_t j = 0; j < bs.size(); ++j) vals(i, static_cast<Eigen::Index>(j)) = parse_double(r[bs[j]], "b");
    }
    return make_design(std::move(pts), vals, std::move(w), t.name);
}

inline Table noise_table(const NoiseProfile& n) {
    Table t{"noise", {"sigma2"}, {}};
    for (Eigen::Index i = 0; i < n.sigma2.size(); ++i) t.add({format_double(n.sigma2[i])});
    return t;
}

inline NoiseProfile noise_from_table(const Table& t) {
    const std::size_t c = t.column("sigma2");
    NoiseProfile p;
    p.sigma2.resize(static_cast<Eigen::Index>(t.rows.size()));
    for (std::size_t i = 0; i < t.rows.size(); ++i) p.sigma2[static_cast<Eigen::Index>(i)] = parse_double(t.rows[i][c], "sigma2");
    p.validate();
    return p;
}

/// Allocation-only study: uniform, Neyman and A-optimal allocations on the
/// polynomial problem's design for the first degree and budget.
inline ExperimentReport run_allocate_only(const ExperimentConfig& c) {
    if (c.experiment != Experiment::allocate_only) throw config_error("run_allocate_only: wrong experiment");
    c.validate();
    ExperimentReport rep;
    rep.experiment = c.experiment;
    rep.seed = c.seed;
    rep.config = c.raw;
    const std::size_t D = c.degrees.front();
    const BasisSet basis = tensor_legendre_basis(2, static_cast<int>(D));
    const std::size_t m = c.m_factor * basis.size();
    const double L = static_cast<double>(c.budgets.front());
    const double delta = c.delta.checked(m);
    BoostingPolicy boosting;
    boosting.trials = c.boosting_trials;
    boosting.cond_threshold = c.cond_threshold;
    const SampleDesign design = draw_design(basis, m, c.design_stream, boosting, derive_seed(c.seed, "design", {D}));
    const NoisyOracle oracle = SyntheticProblem::oracle();
    const NoiseProfile noise = c.exact_variance ? exact_variance(oracle, design.points)
                                                : estimate_variance(oracle, design.points, c.R, derive_seed(c.seed, "variance", {D, 0}));
    const Allocation u = detail::in_stage("uniform", [&] { return allocate_for(Pipeline::hls0, design, noise, L, delta); });
    const Allocation ny = detail::in_stage("neyman", [&] { return allocate_for(Pipeline::hls1, design, noise, L, delta); });
    const Allocation ao = detail::in_stage("aopt", [&] { return allocate_for(Pipeline::hls2, design, noise, L, delta); });
    Table t{"allocation", {"index", "x1", "x2", "weight", "sigma2", "p_uniform", "p_neyman", "p_aopt"}, {}};
    for (std::size_t i = 0; i < m; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        t.add({std::to_string(i), format_double(design.points(ii, 0)), format_double(design.points(ii, 1)), format_double(design.weights[ii]),
               format_double(noise.sigma2[ii]), format_double(u.p[ii]), format_double(ny.p[ii]), format_double(ao.p[ii])});
    }
    rep.extras.push_back(std::move(t));
    rep.extras.push_back(design_table(design));
    rep.extras.push_back(noise_table(noise));
    rep.summary["D"] = D;
    rep.summary["m"] = m;
    rep.summary["L"] = L;
    rep.summary["delta"] = delta;
    rep.summary["design_hash"] = design_hash(design);
    rep.summary["G_uniform"] = objective_G(u, design, noise, L);
    rep.summary["G_neyman"] = objective_G(ny, design, noise, L);
    rep.summary["H_uniform"] = objective_H(u.p, design, noise, L);
    rep.summary["H_neyman"] = objective_H(ny.p, design, noise, L);
    rep.summary["H_aopt"] = ao.objective;
    rep.summary["aopt_kkt_residual"] = ao.kkt_residual;
    rep.summary["aopt_support"] = support_sparsity(ao);
    rep.summary["aopt_tolerance_missed"] = ao.tolerance_missed;
    return rep;
}

// ---------------------------------------------------------------- spread-option study

/// Serialized surrogate: f(x) = sum_j beta_j g(x; Z_j) with the payoff field of `model`.
inline std::string surrogate_json(const BSModel& model, const Subspace& sub, const Approximant& a) {
    nlohmann::ordered_json j;
    j["kind"] = "spread-payoff-subspace";
    j["pipeline"] = to_string(a.pipeline);
    j["projected"] = a.projected;
    j["r"] = model.r;
    j["s0"] = {model.s0[0], model.s0[1]};
    const Eigen::VectorXd beta = sub.cone.to_generator(a.coefficients);
    std::vector<std::array<double, 3>> terms;
    for (std::size_t k = 0; k < sub.latents.size(); ++k)
        terms.push_back({beta[static_cast<Eigen::Index>(k)], sub.latents[k][0], sub.latents[k][1]});
    j["terms"] = terms; // (beta, z1, z2)
    return j.dump(1) + "\n";
}

/// Price function of a surrogate written by surrogate_json; x = (T, K, s1, s2, rho).
inline std::function<double(const Eigen::VectorXd&)> load_surrogate(const std::filesystem::path& dir) {
    const auto path = std::filesystem::is_directory(dir) ? dir / "surrogate.json" : dir;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path.string()));
    } catch (const nlohmann::json::exception& e) {
        throw config_error(path.string() + ": " + e.what());
    }
    if (j.value("kind", "") != "spread-payoff-subspace") throw config_error(path.string() + ": not a spread surrogate");
    try {
        const double r = j.at("r").get<double>();
        const std::array<double, 2> s0{j.at("s0").at(0).get<double>(), j.at("s0").at(1).get<double>()};
        std::vector<std::array<double, 3>> terms = j.at("terms").get<std::vector<std::array<double, 3>>>();
        if (terms.empty()) throw config_error(path.string() + ": no terms");
        return [r, s0, terms](const Eigen::VectorXd& x) {
            double v = 0.0;
            for (const auto& t : terms) v += t[0] * spread_payoff(r, s0, x[0], x[1], x[2], x[3], x[4], t[1], t[2]);
            return v;
        };
    } catch (const nlohmann::json::exception& e) {
        throw config_error(path.string() + ": " + e.what());
    }
}

/// Uniform test points on the spread-option parameter box.
inline PointSet spread_test_points(std::size_t count, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "test-points"));
    const HyperRectangle dom = spread_domain();
    PointSet pts(static_cast<Eigen::Index>(count), 5);
    for (Eigen::Index i = 0; i < pts.rows(); ++i)
        pts.row(i) = dom.from_unit(Eigen::VectorXd::NullaryExpr(5, [&] { return rng.uniform(); })).transpose();
    return pts;
}

inline Table quotes_table(const QuoteGrid& q) {
    Table t{"quotes", {"T", "K", "price", "mc_samples", "seed", "std_error"}, {}};
    for (std::size_t i = 0; i < q.maturities.size(); ++i)
        for (std::size_t j = 0; j < q.strikes.size(); ++j) {
            const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
            t.add({format_double(q.maturities[i]), format_double(q.strikes[j]), format_double(q.prices(ii, jj)), std::to_string(q.mc_samples),
                   std::to_string(q.seed), q.std_errors.size() ? format_double(q.std_errors(ii, jj)) : "NA"});
        }
    return t;
}

/// Reads a long-format quote table (T, K, price, ...) covering a full T x K grid.
inline QuoteGrid quotes_from_table(const Table& t) {
    const std::size_t cT = t.column("T"), cK = t.column("K"), cP = t.column("price");
    std::set<double> Ts, Ks;
    std::map<std::pair<double, double>, double> px;
    for (const auto& r : t.rows) {
        const double T = parse_double(r[cT], "T"), K = parse_double(r[cK], "K"), p = parse_double(r[cP], "price");
        Ts.insert(T);
        Ks.insert(K);
        if (!px.emplace(std::make_pair(T, K), p).second)
            throw config_error(t.name + ": duplicate quote at T=" + r[cT] + ", K=" + r[cK]);
    }
    QuoteGrid q;
    q.maturities.assign(Ts.begin(), Ts.end());
    q.strikes.assign(Ks.begin(), Ks.end());
    if (px.size() != q.size()) throw config_error(t.name + ": quotes do not cover a full maturity x strike grid");
    q.prices.resize(static_cast<Eigen::Index>(Ts.size()), static_cast<Eigen::Index>(Ks.size()));
    for (std::size_t i = 0; i < q.maturities.size(); ++i)
        for (std::size_t j = 0; j < q.strikes.size(); ++j)
            q.prices(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = px.at({q.maturities[i], q.strikes[j]});
    if (auto it = std::find(t.header.begin(), t.header.end(), "mc_samples"); it != t.header.end() && !t.rows.empty())
        q.mc_samples = parse_size(t.rows.front()[static_cast<std::size_t>(it - t.header.begin())], "mc_samples");
    q.validate();
    return q;
}

/// Spread-option study: per replicate a fresh subspace realization (grid,
/// snapshots, re-boosted design, reused-snapshot variances) shared by all
/// pipelines; regular and projected variants scored against an MC reference
/// on fixed uniform test points. The calibrate variant also calibrates every
/// surrogate to synthetic market quotes.
inline ExperimentReport run_finance(const ExperimentConfig& c) {
    const bool calibrating = c.experiment == Experiment::finance_calibrate;
    if (!calibrating && c.experiment != Experiment::finance_surrogate) throw config_error("run_finance: wrong experiment");
    c.validate();
    ExperimentReport rep;
    rep.experiment = c.experiment;
    rep.seed = c.seed;
    rep.config = c.raw;
    SurrogateSettings s = c.surrogate;
    const PointSet test = spread_test_points(c.test_points, c.seed);
    const Eigen::VectorXd reference = detail::in_stage("reference", [&] {
        return mc_reference(s.model, test, c.reference_samples, derive_seed(c.seed, "reference"));
    });
    std::optional<QuoteGrid> quotes;
    Table calib{"calibration", {"replicate", "pipeline", "variant", "sigma1_hat", "sigma2_hat", "loss", "iterations", "converged"}, {}};
    if (calibrating) {
        quotes = detail::in_stage("market", [&] {
            return synth_market(c.truth, QuoteGrid::calibration_grid(), c.quote_samples, derive_seed(c.seed, "quotes"));
        });
        rep.extras.push_back(quotes_table(*quotes));
    }
    Table designs{"designs", {"replicate", "m", "cond", "trials_used", "threshold_missed", "design_hash", "subspace_attempts"}, {}};
    for (std::size_t r = 0; r < c.replicates; ++r) {
        const std::string rctx = "replicate=" + std::to_string(r);
        const SurrogateRealization real =
            detail::with_context(rctx, [&] { return build_surrogate_realization(s, derive_seed(c.seed, "realization", {r})); });
        const std::string dhash = design_hash(real.design);
        designs.add({std::to_string(r), std::to_string(real.design.m()), format_double(real.design.condition()),
                     std::to_string(real.design.trials_used), real.design.threshold_missed ? "1" : "0", dhash,
                     std::to_string(real.subspace.attempts)});
        const std::uint64_t fit_seed = derive_seed(c.seed, "fit", {r});
        for (Pipeline p : c.pipelines) {
            const std::string ctx = rctx + " pipeline=" + to_string(p);
            const SurrogateFit fit = detail::with_context(ctx, [&] { return fit_surrogate(s, real, p, fit_seed); });
            std::vector<std::pair<std::string, const Approximant*>> variants{{"regular", &fit.regular}};
            if (fit.projected) variants.emplace_back("projected", &*fit.projected);
            for (const auto& [variant, approx] : variants) {
                ResultRow row;
                row.pipeline = to_string(p);
                row.variant = variant;
                row.n = s.n;
                row.m = p == Pipeline::erm ? s.L : (p == Pipeline::average ? s.n : real.design.m());
                row.L = p == Pipeline::average ? 0 : s.L;
                row.replicate = r;
                row.seed = fit_seed;
                row.design_hash = (p == Pipeline::erm || p == Pipeline::average) ? "none" : dhash;
                row.cond = (p == Pipeline::erm || p == Pipeline::average) ? std::numeric_limits<double>::quiet_NaN() : real.design.condition();
                row.mse = mse(approx->evaluate_rows(test), reference);
                row.seconds = fit.seconds;
                rep.rows.push_back(row);
                if (calibrating) {
                    const CalibrationResult cr =
                        detail::with_context(ctx + " variant=" + variant, [&] { return calibrate(*approx, *quotes, c.calibration); });
                    calib.add({std::to_string(r), row.pipeline, variant, format_double(cr.sigma1), format_double(cr.sigma2),
                               format_double(cr.loss), std::to_string(cr.iterations), cr.converged ? "1" : "0"});
                }
                if (r < c.save_surrogates)
                    rep.artifacts.emplace_back("surrogates/r" + std::to_string(r) + "-" + row.pipeline + "-" + variant + "/surrogate.json",
                                               surrogate_json(s.model, real.subspace, *approx));
            }
        }
    }
    rep.extras.push_back(std::move(designs));
    if (calibrating) {
        rep.extras.push_back(std::move(calib));
        const auto deg = degeneracy_probe(c.truth, BSModel{c.truth}.with_params(0.32, 0.18, 0.14), QuoteGrid::calibration_grid(),
                                          c.quote_samples, derive_seed(c.seed, "degeneracy"));
        rep.summary["degeneracy_alt_max_abs_difference"] = deg.max_abs_difference;
        rep.summary["degeneracy_alt_std_error"] = deg.std_error_at_max;
    }
    rep.summary["pipelines"] = detail::pipeline_list(c.pipelines);
    rep.summary["replicates"] = c.replicates;
    return rep;
}

// ---------------------------------------------------------------- subspace diagnostics

/// Best-approximation error curves of random subspaces for a 1-D Legendre
/// field with geometric spectrum lambda_j = scale decay^(j-1), the empirical
/// kernel spectrum, and the success rate of the MC-average prescription.
inline ExperimentReport run_subspace_diagnostics(const ExperimentConfig& c) {
    if (c.experiment != Experiment::subspace_diagnostics) throw config_error("run_subspace_diagnostics: wrong experiment");
    c.validate();
    ExperimentReport rep;
    rep.experiment = c.experiment;
    rep.seed = c.seed;
    rep.config = c.raw;
    auto target = [](double x) { return std::exp(x) * std::cos(2.0 * x); };
    Eigen::VectorXd lam(static_cast<Eigen::Index>(c.field_terms));
    for (Eigen::Index j = 0; j < lam.size(); ++j) lam[j] = c.field_scale * std::pow(c.field_decay, static_cast<double>(j));
    const RandomFieldGenerator field = legendre_field(target, lam);
    PointSet grid(static_cast<Eigen::Index>(c.grid_points), 1);
    Eigen::VectorXd fref(grid.rows());
    for (Eigen::Index i = 0; i < grid.rows(); ++i) {
        grid(i, 0) = -1.0 + 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(grid.rows());
        fref[i] = target(grid(i, 0));
    }
    const auto pr = mc_prescription(lam.sum(), c.eps, c.failure_probability);
    std::vector<std::size_t> ns = c.n_values;
    if (std::find(ns.begin(), ns.end(), pr.n) == ns.end()) ns.push_back(pr.n);
    const auto curve = subspace_error_curve(field, fref, ns, grid, c.replicates, derive_seed(c.seed, "curve"));
    Table errs{"error_curve", {"n", "replicate", "error"}, {}};
    Table summ{"error_summary", {"n", "mean", "sd", "min", "max"}, {}};
    std::size_t ok = 0;
    for (const auto& pt : curve) {
        for (std::size_t r = 0; r < pt.errors.size(); ++r) errs.add({std::to_string(pt.n), std::to_string(r), format_double(pt.errors[r])});
        summ.add({std::to_string(pt.n), format_double(pt.mean), format_double(pt.sd), format_double(pt.min), format_double(pt.max)});
        if (pt.n == pr.n)
            for (double e : pt.errors) ok += e < c.eps;
    }
    Rng rng(derive_seed(c.seed, "spectrum"));
    const std::size_t ns_max = std::max<std::size_t>(2, *std::max_element(c.n_values.begin(), c.n_values.end()));
    Eigen::MatrixXd snaps(grid.rows(), static_cast<Eigen::Index>(ns_max));
    for (Eigen::Index j = 0; j < snaps.cols(); ++j) snaps.col(j) = field.on_grid(grid, field.draw_latent(rng));
    const auto spectrum_diag = empirical_kernel_spectrum(snaps);
    Table sp{"spectrum", {"index", "eigenvalue", "tail_sum"}, {}};
    for (Eigen::Index i = 0; i < spectrum_diag.eigenvalues.size(); ++i)
        sp.add({std::to_string(i), format_double(spectrum_diag.eigenvalues[i]), format_double(spectrum_diag.tail_sums[i])});
    rep.extras.push_back(std::move(errs));
    rep.extras.push_back(std::move(summ));
    rep.extras.push_back(std::move(sp));
    rep.summary["sigma_norm2"] = lam.sum();
    rep.summary["prescription_k"] = pr.k;
    rep.summary["prescription_n"] = pr.n;
    rep.summary["prescription_success_rate"] = static_cast<double>(ok) / static_cast<double>(c.replicates);
    rep.summary["spectrum_clipped_mass"] = spectrum_diag.clipped_mass;
    return rep;
}

inline ExperimentReport run_experiment(const ExperimentConfig& c) {
    switch (c.experiment) {
    case Experiment::synthetic: return run_synthetic(c);
    case Experiment::finance_surrogate:
    case Experiment::finance_calibrate: return run_finance(c);
    case Experiment::allocate_only: return run_allocate_only(c);
    case Experiment::subspace_diagnostics: return run_subspace_diagnostics(c);
    }
    throw config_error("run_experiment: unknown experiment");
}

} // namespace hls
