// krom: command-line driver for snapshot generation, solves, sweeps and diagnostics.
#include "krom/experiments.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

using namespace krom;

namespace {

constexpr int exit_config = 2;
constexpr int exit_numeric = 3;

struct CommonFlags {
    std::map<std::string, std::string> values;
    std::string config_path;
};

void add_common(CLI::App* app, CommonFlags& flags) {
    app->add_option("--config", flags.config_path, "key = value config file with [section] headers");
    for (const auto& key : config_keys()) {
        std::string flag = "--" + key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        app->add_option_function<std::string>(
            flag, [&flags, key](const std::string& v) { flags.values[key] = v; }, "override '" + key + "'");
    }
}

ExperimentConfig resolve(const CommonFlags& flags, std::optional<PdeKind> force = std::nullopt) {
    std::map<std::string, std::string> file;
    if (!flags.config_path.empty()) file = read_config_file(flags.config_path);
    std::string pde = "elliptic";
    if (file.count("pde")) pde = file.at("pde");
    if (flags.values.count("pde")) pde = flags.values.at("pde");
    ExperimentConfig cfg = default_config(force ? *force : parse_pde_kind(pde));
    for (const auto& [k, v] : file) apply_setting(cfg, k, v);
    for (const auto& [k, v] : flags.values) apply_setting(cfg, k, v);
    if (force) cfg.pde = *force;
    validate(cfg);
    return cfg;
}

std::string output_path(const ExperimentConfig& cfg, const std::string& name) {
    if (cfg.out.empty()) return name;
    std::filesystem::create_directories(cfg.out);
    return (std::filesystem::path(cfg.out) / name).string();
}

bool config_status(const std::string& s) {
    return s == "invalid_parameter" || s == "invalid_grid" || s == "domain" || s == "stencil" || s == "format" ||
           s == "config";
}

int rows_exit_code(const std::vector<ReportRow>& rows) {
    int code = 0;
    for (const auto& r : rows) {
        if (r.status == "ok") continue;
        std::cerr << "run failed at stage '" << r.stage << "': " << r.note << "\n";
        code = std::max(code, config_status(r.status) ? exit_config : exit_numeric);
    }
    return code;
}

void write_rows(const ExperimentConfig& cfg, const std::vector<ReportRow>& rows, const std::string& name) {
    if (cfg.out.empty()) {
        write_report(std::cout, rows);
        return;
    }
    std::ofstream f(output_path(cfg, name));
    write_report(f, rows);
}

void write_field(const ExperimentConfig& cfg, const ExperimentOutcome& o) {
    if (cfg.out.empty() || o.solution.size() == 0 || o.reference.size() != o.solution.size()) return;
    std::ofstream f(output_path(cfg, "field.csv"));
    const int d = o.grid.dim();
    for (int a = 0; a < d; ++a) f << (a ? "," : "") << std::string(1, "xyz"[a]);
    f << ",solution,reference,abs_error\n";
    for (Index i = 0; i < o.solution.size(); ++i) {
        for (int a = 0; a < d; ++a) f << (a ? "," : "") << format_double(o.grid.points(i, a));
        f << "," << format_double(o.solution[i]) << "," << format_double(o.reference[i]) << ","
          << format_double(std::abs(o.solution[i] - o.reference[i])) << "\n";
    }
}

std::vector<double> parse_values(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        std::size_t pos = 0;
        double v = 0;
        try {
            v = std::stod(tok, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != tok.size() || pos == 0) throw Error(ErrorKind::config, "invalid sweep value '" + tok + "'");
        out.push_back(v);
    }
    if (out.empty()) throw Error(ErrorKind::config, "sweep needs --values");
    return out;
}

int cmd_gen(const CommonFlags& flags) {
    const ExperimentConfig cfg = resolve(flags);
    const SnapshotLibrary lib = experiment_library(cfg);
    const std::string path = output_path(cfg, "snapshots.kroms");
    save_library(lib, path);
    std::cout << "wrote " << lib.n_cols() << " columns (" << lib.n_instances << " instances x " << lib.n_times
              << " slices) on " << lib.grid.size() << " nodes to " << path << "\n";
    return 0;
}

int cmd_solve(const CommonFlags& flags) {
    const ExperimentConfig cfg = resolve(flags);
    const ExperimentOutcome o = run_experiment(cfg);
    write_rows(cfg, {o.row}, "report.csv");
    write_field(cfg, o);
    return rows_exit_code({o.row});
}

int cmd_sweep(const CommonFlags& flags, const std::string& axis, const std::string& values) {
    const ExperimentConfig cfg = resolve(flags);
    const auto outcomes = sweep(cfg, parse_sweep_axis(axis), parse_values(values));
    std::vector<ReportRow> rows;
    for (const auto& o : outcomes) rows.push_back(o.row);
    write_rows(cfg, rows, "sweep.csv");
    return rows_exit_code(rows);
}

int cmd_spectrum(const CommonFlags& flags) {
    const ExperimentConfig cfg = resolve(flags, PdeKind::navier_stokes);
    const ExperimentOutcome o = run_experiment(cfg);
    if (o.row.status != "ok") return rows_exit_code({o.row});
    const auto es = energy_spectrum(o.solution, o.grid);
    const auto er = energy_spectrum(o.reference, o.grid);
    std::ofstream file;
    std::ostream* out = &std::cout;
    if (!cfg.out.empty()) {
        file.open(output_path(cfg, "spectrum.csv"));
        out = &file;
    }
    *out << "k,energy_krom,energy_reference\n";
    for (size_t i = 0; i < es.size(); ++i)
        *out << es[i].k << "," << format_double(es[i].energy) << "," << format_double(er[i].energy) << "\n";
    if (!cfg.out.empty()) write_rows(cfg, {o.row}, "report.csv");
    return 0;
}

int cmd_factor(const CommonFlags& flags) {
    const ExperimentConfig cfg = resolve(flags);
    if (!(cfg.rho > 0)) throw Error(ErrorKind::config, "factor-diag needs rho > 0");
    const CollocationSet grid = experiment_grid(cfg);
    std::optional<SnapshotLibrary> lib;
    Kernel kernel = MaternKernel{cfg.theta};
    if (cfg.kernel != KernelChoice::matern) {
        lib = experiment_library(cfg);
        EmpiricalKernel emp = EmpiricalKernel::from_snapshots(lib->S);
        if (cfg.kernel == KernelChoice::truncated) kernel = pod_truncate(emp, cfg.rank);
        else kernel = std::move(emp);
    }
    const Vec k = cfg.pde == PdeKind::darcy ? checkerboard_permeability(grid) : Vec();
    const MeasurementLayout layout = measurement_layout(cfg.pde, grid, k.size() ? &k : nullptr);
    const CovarianceBuild b = build_covariance(kernel, grid, layout, cfg.rho);
    {
        std::ofstream f(output_path(cfg, "factor.kromu"));
        write_factor(f, *b.factor);
    }
    std::cout << "measurements,nnz,nugget,kl_divergence,frobenius_gap\n";
    std::cout << b.factor->size() << "," << b.factor->nnz() << "," << format_double(b.gram.nugget) << ","
              << format_double(kl_divergence(b.gram, *b.factor)) << ","
              << format_double(frobenius_gap(b.gram, *b.factor)) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Kernel reduced-order PDE solver"};
    app.require_subcommand(1);
    CommonFlags gen_f, solve_f, sweep_f, spec_f, fact_f;
    std::string axis = "N", values;
    auto* gen = app.add_subcommand("gen-snapshots", "build a snapshot library and write it as KROMS1");
    auto* solve = app.add_subcommand("solve", "run one experiment and write its report row");
    auto* sw = app.add_subcommand("sweep", "repeat an experiment along one axis");
    auto* spec = app.add_subcommand("spectrum", "energy spectra of a Navier-Stokes run");
    auto* fact = app.add_subcommand("factor-diag", "write the sparse factor (KROMU) and its diagnostics");
    add_common(gen, gen_f);
    add_common(solve, solve_f);
    add_common(sw, sweep_f);
    add_common(spec, spec_f);
    add_common(fact, fact_f);
    sw->add_option("--axis", axis, "N, rho or M");
    sw->add_option("--values", values, "comma-separated values")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_config;
    }
    try {
        if (gen->parsed()) return cmd_gen(gen_f);
        if (solve->parsed()) return cmd_solve(solve_f);
        if (sw->parsed()) return cmd_sweep(sweep_f, axis, values);
        if (spec->parsed()) return cmd_spectrum(spec_f);
        if (fact->parsed()) return cmd_factor(fact_f);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.is_config() ? exit_config : exit_numeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_numeric;
    }
    return 0;
}
