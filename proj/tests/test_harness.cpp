#include <gtest/gtest.h>

#include "hls/harness.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

using namespace hls;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("hls_test_harness_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    return p;
}

const char* kSmallSynthetic = R"(# tiny polynomial run
experiment = synthetic
seed = 7
replicates = 2
degrees = 2
gammas = 10, 30
budgets = 270, 810
pipelines = HLS-0, HLS-1, ERM
R = 10
quadrature_level = 12
ratio_quadrature_level = 12
)";

} // namespace

TEST(Hashing, KnownDigests) {
    EXPECT_EQ(sha1_hex("abc"), "a9993e364706816aba3e25717850c26c9cd0d89d");
    EXPECT_EQ(git_blob_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    EXPECT_EQ(git_blob_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(DeltaRule, ParseAndCheck) {
    auto r = DeltaRule::parse("0.01/m");
    EXPECT_TRUE(r.per_m);
    EXPECT_DOUBLE_EQ(r.value(100), 1e-4);
    EXPECT_DOUBLE_EQ(r.checked(100), 1e-4);
    EXPECT_EQ(r.to_string(), "0.01/m");
    EXPECT_DOUBLE_EQ(DeltaRule::parse("1/m").checked(7), 1.0 / 7);
    EXPECT_THROW(DeltaRule::parse("2/m").checked(10), config_error);
    auto fixed = DeltaRule::parse("0.05");
    EXPECT_FALSE(fixed.per_m);
    EXPECT_DOUBLE_EQ(fixed.checked(10), 0.05);
    EXPECT_THROW(fixed.checked(30), config_error);
    for (const char* bad : {"0/m", "-0.1", "0.01/n", "abc", ""}) EXPECT_THROW(DeltaRule::parse(bad), config_error) << bad;
}

TEST(Config, SyntheticDefaults) {
    auto c = parse_config("experiment = synthetic\n");
    EXPECT_EQ(c.degrees, (std::vector<std::size_t>{4, 5, 6}));
    EXPECT_EQ(c.gammas, (std::vector<double>{10, 30, 100, 300, 1000}));
    EXPECT_EQ(c.budgets, (std::vector<std::size_t>{2500, 7500, 25000, 75000, 250000}));
    EXPECT_EQ(c.m_factor, 3u);
    EXPECT_EQ(c.R, 50u);
    EXPECT_EQ(c.replicates, 100u);
    EXPECT_EQ(c.boosting_trials, 1u);
    EXPECT_EQ(c.pipelines.size(), 4u);
    EXPECT_DOUBLE_EQ(c.delta.value(147), 0.01 / 147);
    EXPECT_EQ(c.output_dir, "synthetic");
}

TEST(Config, FinanceDefaults) {
    auto c = parse_config("experiment = finance-calibrate\nL = 5e5\n");
    EXPECT_EQ(c.pipelines.back(), Pipeline::average);
    EXPECT_EQ(c.surrogate.boosting.trials, 50u);
    EXPECT_EQ(c.surrogate.L, 500000u);
    EXPECT_DOUBLE_EQ(c.truth.sigma1, 0.3);
    EXPECT_DOUBLE_EQ(c.truth.sigma2, 0.1);
    EXPECT_DOUBLE_EQ(c.calibration.rho, -0.3);
    EXPECT_THROW(parse_config("experiment = finance-surrogate\ndelta = 0.001\n"), config_error);
}

TEST(Config, Errors) {
    EXPECT_THROW(parse_config("seed = 3\n"), config_error);
    EXPECT_THROW(parse_config("experiment = synthetic\nbogus = 1\n"), config_error);
    EXPECT_THROW(parse_config("experiment = synthetic\nseed = 1\nseed = 2\n"), config_error);
    EXPECT_THROW(parse_config("experiment = synthetic\nseed\n"), config_error);
    EXPECT_THROW(parse_config("experiment = nonsense\n"), config_error);
    EXPECT_THROW(parse_config("experiment = synthetic\nreplicates = 0\n"), config_error);
    EXPECT_THROW(parse_config("experiment = synthetic\ngammas = 10\nbudgets = 2500, 7500\n"), config_error);
    // budget below m = 3 * 49
    EXPECT_THROW(parse_config("experiment = synthetic\ndegrees = 6\ngammas = 1\nbudgets = 100\n"), config_error);
    EXPECT_THROW(parse_config("experiment = synthetic\npipelines = HLS-1, AVG\n"), config_error);
    EXPECT_THROW(parse_config("experiment = synthetic\nexact_variance = maybe\n"), config_error);
    EXPECT_THROW(parse_config("experiment = synthetic\nseed = 1.5\n"), config_error);
    try {
        parse_config("experiment = synthetic\nwhat = 1\n", "my.cfg");
        FAIL();
    } catch (const config_error& e) {
        EXPECT_NE(std::string(e.what()).find("my.cfg"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("what"), std::string::npos);
    }
}

TEST(Config, ShippedConfigsParse) {
    for (const auto& entry : fs::directory_iterator(fs::path(HLS_SOURCE_DIR) / "configs"))
        if (entry.path().extension() == ".cfg") EXPECT_NO_THROW(load_config(entry.path().string())) << entry.path();
}

TEST(Csv, ParseAndNumbers) {
    auto t = parse_csv("# comment\na, b\n1, 2\n\n3,4\n");
    EXPECT_EQ(t.header, (std::vector<std::string>{"a", "b"}));
    ASSERT_EQ(t.rows.size(), 2u);
    EXPECT_EQ(t.rows[1][1], "4");
    EXPECT_EQ(t.column("b"), 1u);
    EXPECT_THROW(t.column("c"), config_error);
    EXPECT_THROW(parse_csv("a,b\n1\n"), config_error);
    EXPECT_THROW(parse_csv("# only a comment\n"), config_error);
    EXPECT_EQ(parse_size("5e5", "x"), 500000u);
    EXPECT_THROW(parse_size("1.5", "x"), config_error);
    EXPECT_THROW(parse_size("-1", "x"), config_error);
    EXPECT_THROW(parse_double("1.0x", "x"), config_error);
    const double v = 0.1 + 0.2;
    EXPECT_EQ(parse_double(format_double(v), "v"), v);
}

TEST(Report, QuantileType7) {
    const std::vector<double> s{1, 2, 3, 4};
    EXPECT_DOUBLE_EQ(detail::quantile_sorted(s, 0.25), 1.75);
    EXPECT_DOUBLE_EQ(detail::quantile_sorted(s, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(detail::quantile_sorted(s, 1.0), 4.0);
    EXPECT_DOUBLE_EQ(detail::quantile_sorted({5.0}, 0.75), 5.0);
    EXPECT_TRUE(std::isnan(detail::quantile_sorted({}, 0.5)));
}

TEST(Report, EmptyReportWritesHeaders) {
    ExperimentReport rep;
    const auto dir = scratch("empty");
    const auto out = emit_report(rep, dir);
    EXPECT_EQ(read_text_file((dir / "rows.csv").string()), "pipeline,variant,D,n,m,gamma,L,replicate,seed,design_hash,cond,mse\n");
    EXPECT_EQ(parse_csv(read_text_file((dir / "aggregate.csv").string())).rows.size(), 0u);
    EXPECT_TRUE(fs::exists(dir / "timings.csv"));
    auto manifest = nlohmann::json::parse(read_text_file((dir / "manifest.json").string()));
    EXPECT_EQ(manifest["content_hash"], out.content_hash);
    EXPECT_EQ(manifest["files"]["rows.csv"], git_blob_hash(read_text_file((dir / "rows.csv").string())));
    EXPECT_FALSE(manifest["files"].contains("timings.csv"));
}

TEST(Report, UnwritableDirectoryNamesPath) {
    const auto blocker = scratch("blocker");
    fs::create_directories(blocker.parent_path());
    std::ofstream(blocker) << "file, not a directory";
    try {
        emit_report(ExperimentReport{}, blocker / "sub");
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("blocker"), std::string::npos);
    }
}

TEST(Synthetic, RowsAggregatesAndCoupling) {
    const auto c = parse_config(kSmallSynthetic);
    const auto rep = run_synthetic(c);
    ASSERT_EQ(rep.rows.size(), 2u * 2u * 3u);
    std::set<std::string> hls_hashes;
    std::map<std::pair<std::size_t, std::size_t>, std::set<std::uint64_t>> seeds; // (replicate, L) -> evaluation seeds
    for (const auto& r : rep.rows) {
        EXPECT_EQ(r.degree, 2u);
        EXPECT_EQ(r.n, 9u);
        EXPECT_TRUE(std::isfinite(r.mse));
        EXPECT_GT(r.mse, 0.0);
        if (r.pipeline == "ERM") {
            EXPECT_EQ(r.m, r.L);
            EXPECT_EQ(r.design_hash, "iid");
        } else {
            EXPECT_EQ(r.m, 27u);
            hls_hashes.insert(r.design_hash);
        }
        seeds[{r.replicate, r.L}].insert(r.seed);
        EXPECT_EQ(r.L, r.gamma == 10 ? 270u : 810u);
    }
    EXPECT_EQ(hls_hashes.size(), 1u); // one design shared by replicates and pipelines
    for (const auto& [k, s] : seeds) EXPECT_EQ(s.size(), 1u);
    EXPECT_EQ(seeds.size(), 4u);

    const Table agg = aggregate_table(rep);
    EXPECT_EQ(agg.rows.size(), 2u * 3u);
    for (const auto& row : agg.rows) EXPECT_EQ(row[agg.column("count")], "2");
    ASSERT_EQ(rep.extras.size(), 1u);
    EXPECT_EQ(rep.extras[0].name, "variance_factor");
}

TEST(Synthetic, SameSeedSameContentHash) {
    const auto c = parse_config(kSmallSynthetic);
    const auto a = emit_report(run_synthetic(c), scratch("a"));
    const auto b = emit_report(run_synthetic(c), scratch("b"));
    EXPECT_EQ(a.content_hash, b.content_hash);
    EXPECT_EQ(a.file_hashes, b.file_hashes);
    auto c2 = parse_config(std::string(kSmallSynthetic) + "output_dir = other\n");
    c2.seed = 8;
    const auto d = emit_report(run_synthetic(c2), scratch("d"));
    EXPECT_NE(a.content_hash, d.content_hash);
}

TEST(AllocateOnly, SummaryAndTables) {
    const auto c = parse_config("experiment = allocate-only\ndegrees = 2\ngammas = 30\nbudgets = 810\nR = 10\n");
    const auto rep = run_experiment(c);
    ASSERT_EQ(rep.extras.size(), 3u);
    const Table& t = rep.extras[0];
    for (const char* col : {"p_uniform", "p_neyman", "p_aopt"}) {
        double s = 0.0;
        for (const auto& r : t.rows) s += parse_double(r[t.column(col)], col);
        EXPECT_NEAR(s, 1.0, 1e-12) << col;
    }
    EXPECT_LE(rep.summary["aopt_kkt_residual"].get<double>(), 1e-8);
    EXPECT_LE(rep.summary["H_aopt"].get<double>(), rep.summary["H_neyman"].get<double>() * (1 + 1e-12));
    EXPECT_LE(rep.summary["G_neyman"].get<double>(), rep.summary["G_uniform"].get<double>() * (1 + 1e-12));
}

TEST(RoundTrip, DesignAndNoiseTables) {
    const auto basis = tensor_legendre_basis(2, 2);
    PointStream s = PointStream::halton(2);
    const auto d = sample_induced_continuous(basis, 20, s);
    const auto back = design_from_table(parse_csv(design_table(d).to_csv(), "design"));
    EXPECT_EQ(back.points, d.points);
    EXPECT_EQ(back.weights, d.weights);
    EXPECT_LE((back.design - d.design).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LE((back.singular_values - d.singular_values).cwiseAbs().maxCoeff(), 1e-13);
    EXPECT_EQ(design_hash(back), design_hash(d));

    const auto noise = exact_variance(SyntheticProblem::oracle(), d.points);
    EXPECT_EQ(noise_from_table(parse_csv(noise_table(noise).to_csv())).sigma2, noise.sigma2);
    EXPECT_THROW(noise_from_table(parse_csv("sigma2\n-1\n")), config_error);
    EXPECT_THROW(design_from_table(parse_csv("x1,weight\n0.5,1\n")), config_error);
}

TEST(RoundTrip, Quotes) {
    QuoteGrid g;
    g.maturities = {0.1, 0.5};
    g.strikes = {0.0, 2.0, 4.0};
    const auto q = synth_market(BSModel{}.with_params(0.3, 0.1, -0.3), g, 2000, 3);
    const auto back = quotes_from_table(parse_csv(quotes_table(q).to_csv()));
    EXPECT_EQ(back.maturities, q.maturities);
    EXPECT_EQ(back.strikes, q.strikes);
    EXPECT_EQ(back.prices, q.prices);
    EXPECT_EQ(back.mc_samples, 2000u);
    EXPECT_THROW(quotes_from_table(parse_csv("T,K,price\n0.1,0,1\n0.1,0,2\n")), config_error);
    EXPECT_THROW(quotes_from_table(parse_csv("T,K,price\n0.1,0,1\n0.2,1,2\n")), config_error);
}

TEST(RoundTrip, SurrogateJson) {
    SurrogateSettings s;
    s.n = 6;
    s.grid_log2 = 9;
    s.L = 5000;
    s.boosting.trials = 3;
    const auto real = build_surrogate_realization(s, 11);
    const auto fit = fit_surrogate(s, real, Pipeline::hls1, 2);
    const auto dir = scratch("surrogate");
    fs::create_directories(dir);
    std::ofstream(dir / "surrogate.json") << surrogate_json(s.model, real.subspace, *fit.projected);
    const auto price = load_surrogate(dir);
    const PointSet test = spread_test_points(25, 4);
    for (Eigen::Index i = 0; i < test.rows(); ++i) {
        const Eigen::VectorXd x = test.row(i).transpose();
        EXPECT_NEAR(price(x), (*fit.projected)(x), 1e-9 * std::max(1.0, std::abs(price(x))));
    }
    std::ofstream(dir / "bad.json") << "{\"kind\": \"other\"}";
    EXPECT_THROW(load_surrogate(dir / "bad.json"), config_error);
    std::ofstream(dir / "broken.json") << "{ not json";
    EXPECT_THROW(load_surrogate(dir / "broken.json"), config_error);
}

TEST(SpreadTestPoints, InsideDomainAndReplayable) {
    const auto a = spread_test_points(100, 5);
    EXPECT_EQ(a, spread_test_points(100, 5));
    const auto dom = spread_domain();
    for (Eigen::Index i = 0; i < a.rows(); ++i) EXPECT_TRUE(dom.contains(a.row(i).transpose()));
}

TEST(Diagnostics, SmallRun) {
    const auto c = parse_config("experiment = subspace-diagnostics\nreplicates = 5\nn_values = 2, 4\ngrid_points = 200\n");
    const auto rep = run_experiment(c);
    ASSERT_EQ(rep.extras.size(), 3u);
    EXPECT_EQ(rep.extras[0].rows.size(), 5u * 3u); // two requested n plus the prescribed one
    const double rate = rep.summary["prescription_success_rate"].get<double>();
    EXPECT_GE(rate, 0.0);
    EXPECT_LE(rate, 1.0);
}
