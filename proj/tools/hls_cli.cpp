#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "hls/harness.hpp"

namespace fs = std::filesystem;
using namespace hls;

namespace {

fs::path output_root() {
    const char* env = std::getenv("HLS_OUTPUT_ROOT");
    return env && *env ? fs::path(env) : fs::path("hls_output");
}

BSModel parse_model(const std::string& spec) {
    // either a key=value file or an inline list "sigma1=0.3,sigma2=0.1,rho=-0.3"
    std::string text = spec;
    if (fs::is_regular_file(spec)) {
        text.clear();
        std::istringstream in(read_text_file(spec));
        std::string line;
        while (std::getline(in, line)) {
            if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
            if (line.find_first_not_of(" \t\r") != std::string::npos) text += line + ",";
        }
    }
    BSModel m;
    for (const auto& item : split_list(text)) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw config_error("model: expected key=value, got '" + item + "'");
        const auto key = split_list(item.substr(0, eq)).at(0), val = item.substr(eq + 1);
        const double v = parse_double(split_list(val).empty() ? "" : split_list(val)[0], key);
        if (key == "sigma1") m.sigma1 = v;
        else if (key == "sigma2") m.sigma2 = v;
        else if (key == "rho") m.rho = v;
        else if (key == "r") m.r = v;
        else if (key == "s0_1") m.s0[0] = v;
        else if (key == "s0_2") m.s0[1] = v;
        else throw config_error("model: unknown parameter '" + key + "'");
    }
    m.validate();
    return m;
}

void write_table(const fs::path& dir, const Table& t) {
    fs::create_directories(dir);
    const fs::path p = dir / (t.name + ".csv");
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + p.string() + "' for writing");
    out << t.to_csv();
    if (!out) throw std::runtime_error("write failed for '" + p.string() + "'");
    std::cout << "wrote " << p.string() << "\n";
}

int cmd_run(const std::string& config_path) {
    const ExperimentConfig cfg = load_config(config_path);
    const ExperimentReport rep = run_experiment(cfg);
    const EmittedReport out = emit_report(rep, output_root() / cfg.output_dir);
    std::cout << to_string(cfg.experiment) << ": " << rep.rows.size() << " rows -> " << out.directory.string() << "\n"
              << "content hash " << out.content_hash << "\n";
    return 0;
}

int cmd_allocate(const std::string& design_csv, const std::string& noise_csv, const std::string& kind, const std::string& delta_rule,
                 std::size_t budget, const std::string& out_dir) {
    const SampleDesign design = design_from_table(read_csv(design_csv));
    const NoiseProfile noise = noise_from_table(read_csv(noise_csv));
    if (noise.sigma2.size() != static_cast<Eigen::Index>(design.m()))
        throw config_error("noise has " + std::to_string(noise.sigma2.size()) + " rows, design has " + std::to_string(design.m()));
    const double L = static_cast<double>(budget);
    Allocation a;
    if (kind == "uniform") a = allocate_for(Pipeline::hls0, design, noise, L, 0.0);
    else if (kind == "neyman") a = allocate_for(Pipeline::hls1, design, noise, L, 0.0);
    else a = allocate_for(Pipeline::hls2, design, noise, L, DeltaRule::parse(delta_rule).checked(design.m()));
    const auto counts = integer_counts(a.p, budget);
    Table t{"allocation", {"index", "p", "count"}, {}};
    for (std::size_t i = 0; i < design.m(); ++i)
        t.add({std::to_string(i), format_double(a.p[static_cast<Eigen::Index>(i)]), std::to_string(counts[i])});
    write_table(output_root() / out_dir, t);
    std::cout << "kind " << to_string(a.kind) << "  G " << format_double(objective_G(a.p, design, noise.sigma2, L)) << "  H "
              << format_double(objective_H(a.p, design, noise, L));
    if (a.kind == Allocation::Kind::a_optimal)
        std::cout << "  kkt " << format_double(a.kkt_residual) << "  support " << support_sparsity(a);
    std::cout << "\n";
    return 0;
}

int cmd_price(const std::string& model_spec, const std::string& grid_csv, std::size_t samples, std::uint64_t seed,
              const std::string& out_dir) {
    const BSModel model = parse_model(model_spec);
    const Table g = read_csv(grid_csv);
    const std::size_t cT = g.column("T"), cK = g.column("K");
    std::set<double> Ts, Ks;
    for (const auto& r : g.rows) {
        Ts.insert(parse_double(r[cT], "T"));
        Ks.insert(parse_double(r[cK], "K"));
    }
    QuoteGrid q;
    q.maturities.assign(Ts.begin(), Ts.end());
    q.strikes.assign(Ks.begin(), Ks.end());
    q = synth_market(model, q, samples, seed);
    Table t = quotes_table(q);
    t.header.push_back("margrabe");
    for (std::size_t i = 0; i < q.maturities.size(); ++i)
        for (std::size_t j = 0; j < q.strikes.size(); ++j)
            t.rows[i * q.strikes.size() + j].push_back(q.strikes[j] == 0.0 ? format_double(margrabe_price(model, q.maturities[i])) : "NA");
    write_table(output_root() / out_dir, t);
    return 0;
}

int cmd_calibrate(const std::string& quotes_csv, const std::string& surrogate_dir, const CalibrationOptions& opt,
                  const std::string& out_dir) {
    const QuoteGrid quotes = quotes_from_table(read_csv(quotes_csv));
    const auto price = load_surrogate(surrogate_dir);
    const CalibrationResult r = calibrate(price, quotes, opt);
    Table t{"calibration", {"replicate", "pipeline", "sigma1_hat", "sigma2_hat", "loss", "iterations", "converged"}, {}};
    t.add({"0", surrogate_dir, format_double(r.sigma1), format_double(r.sigma2), format_double(r.loss), std::to_string(r.iterations),
           r.converged ? "1" : "0"});
    write_table(output_root() / out_dir, t);
    std::cout << "sigma1 " << format_double(r.sigma1) << "  sigma2 " << format_double(r.sigma2) << "  loss " << format_double(r.loss)
              << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hybrid least squares experiments"};
    app.require_subcommand(1);

    std::string config_path;
    auto* run = app.add_subcommand("run", "run an experiment config and write its report under $HLS_OUTPUT_ROOT");
    run->add_option("--config", config_path, "key = value config file")->required()->check(CLI::ExistingFile);

    std::string design_csv, noise_csv, kind = "neyman", delta_rule = "0.01/m", alloc_out = "allocate";
    std::size_t budget = 100000;
    auto* alloc = app.add_subcommand("allocate", "budget allocation for a stored design");
    alloc->add_option("--design", design_csv, "CSV with weight, b0, b1, ... columns")->required()->check(CLI::ExistingFile);
    alloc->add_option("--noise", noise_csv, "CSV with a sigma2 column")->required()->check(CLI::ExistingFile);
    alloc->add_option("--kind", kind, "uniform, neyman or aopt")->check(CLI::IsMember({"uniform", "neyman", "aopt"}));
    alloc->add_option("--delta", delta_rule, "lower bound on p_i: '<c>/m' or a number (aopt only)");
    alloc->add_option("--budget", budget, "total evaluations L");
    alloc->add_option("--out", alloc_out, "output subdirectory");

    std::string model_spec, grid_csv, price_out = "price";
    std::size_t samples = 100000;
    std::uint64_t seed = 1;
    auto* price = app.add_subcommand("price", "MC spread prices on a maturity x strike grid");
    price->add_option("--model", model_spec, "sigma1=..,sigma2=..,rho=..[,r=..,s0_1=..,s0_2=..] or a file of such lines")->required();
    price->add_option("--grid", grid_csv, "CSV with T and K columns")->required()->check(CLI::ExistingFile);
    price->add_option("--samples", samples, "MC samples per cell");
    price->add_option("--seed", seed, "seed");
    price->add_option("--out", price_out, "output subdirectory");

    std::string quotes_csv, surrogate_dir, calib_out = "calibrate";
    CalibrationOptions opt;
    std::vector<double> init;
    auto* cal = app.add_subcommand("calibrate", "calibrate (sigma1, sigma2) with a stored surrogate");
    cal->add_option("--quotes", quotes_csv, "CSV with T, K, price columns")->required()->check(CLI::ExistingFile);
    cal->add_option("--surrogate", surrogate_dir, "directory holding surrogate.json")->required()->check(CLI::ExistingPath);
    cal->add_option("--rho", opt.rho, "fixed correlation");
    cal->add_option("--init", init, "initial sigma1 sigma2")->expected(2);
    cal->add_option("--out", calib_out, "output subdirectory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*run) return cmd_run(config_path);
        if (*alloc) return cmd_allocate(design_csv, noise_csv, kind, delta_rule, budget, alloc_out);
        if (*price) return cmd_price(model_spec, grid_csv, samples, seed, price_out);
        if (*cal) {
            if (!init.empty()) opt.init = {init[0], init[1]};
            return cmd_calibrate(quotes_csv, surrogate_dir, opt, calib_out);
        }
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const numerical_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
