#include "krom/experiments.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>

namespace krom {

namespace {

std::string error_kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::invalid_parameter: return "invalid_parameter";
        case ErrorKind::invalid_grid: return "invalid_grid";
        case ErrorKind::domain: return "domain";
        case ErrorKind::stencil: return "stencil";
        case ErrorKind::format: return "format";
        case ErrorKind::config: return "config";
        case ErrorKind::numeric: return "numeric";
        case ErrorKind::ill_conditioned: return "ill_conditioned";
        case ErrorKind::divergence: return "divergence";
        case ErrorKind::nonconvergence: return "nonconvergence";
        case ErrorKind::blow_up: return "blow_up";
    }
    return "error";
}

Mat square_box(double lo, double hi) {
    Mat b(2, 2);
    b << lo, hi, lo, hi;
    return b;
}

bool time_dependent(PdeKind k) {
    return k == PdeKind::burgers || k == PdeKind::allen_cahn || k == PdeKind::navier_stokes;
}

}  // namespace

// ---------------------------------------------------------------------------------------------

double relative_l2_error(const Vec& u, const Vec& ref, bool* zero_reference) {
    if (u.size() != ref.size()) throw Error(ErrorKind::invalid_parameter, "fields differ in size");
    const double nr = ref.norm();
    if (zero_reference) *zero_reference = nr == 0.0;
    if (nr == 0.0) return u.norm();
    return (u - ref).norm() / nr;
}

double linf_error(const Vec& u, const Vec& ref) {
    if (u.size() != ref.size()) throw Error(ErrorKind::invalid_parameter, "fields differ in size");
    return (u - ref).lpNorm<Eigen::Infinity>();
}

double span_residual(const Mat& S, const Vec& v) {
    const double nv = v.norm();
    if (nv == 0.0) return 0.0;
    if (S.cols() == 0) return 1.0;
    Eigen::BDCSVD<Mat> svd(S, Eigen::ComputeThinU);
    const Vec& s = svd.singularValues();
    Index r = 0;
    while (r < s.size() && s[r] > 1e-12 * s[0]) ++r;
    if (r == 0) return 1.0;
    const Mat Ur = svd.matrixU().leftCols(r);
    return (v - Ur * (Ur.transpose() * v)).norm() / nv;
}

std::vector<SpectrumShell> energy_spectrum(const Vec& omega, const CollocationSet& grid) {
    if (!grid.periodic || grid.dim() != 2 || grid.resolution[0] != grid.resolution[1])
        throw Error(ErrorKind::invalid_grid, "energy spectrum needs a periodic square grid");
    const Index n = grid.resolution[0];
    if (omega.size() != n * n) throw Error(ErrorKind::invalid_parameter, "field does not match the grid");
    Eigen::FFT<double> fft;
    Eigen::MatrixXcd m = Eigen::Map<const Mat>(omega.data(), n, n).cast<std::complex<double>>();
    Eigen::VectorXcd in, out;
    for (Index j = 0; j < n; ++j) {
        in = m.col(j);
        fft.fwd(out, in);
        m.col(j) = out;
    }
    for (Index i = 0; i < n; ++i) {
        in = m.row(i).transpose();
        fft.fwd(out, in);
        m.row(i) = out.transpose();
    }
    m /= static_cast<double>(n * n);
    const double L = grid.bounds(0, 1) - grid.bounds(0, 0);
    const double base = 2.0 * std::numbers::pi / L;
    auto wnum = [&](Index j) { return base * static_cast<double>(j <= n / 2 ? j : j - n); };
    const int kmax = static_cast<int>(std::ceil(std::sqrt(2.0) * base * static_cast<double>(n / 2) - 0.5));
    std::vector<SpectrumShell> shells(static_cast<size_t>(std::max(kmax, 1)));
    for (int k = 0; k < static_cast<int>(shells.size()); ++k) shells[static_cast<size_t>(k)].k = k + 1;
    for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < n; ++i) {
            if (i == 0 && j == 0) continue;
            const double k2 = wnum(i) * wnum(i) + wnum(j) * wnum(j);
            const double kk = std::sqrt(k2);
            const int shell = static_cast<int>(std::ceil(kk - 0.5 - 1e-12));
            if (shell < 1 || shell > static_cast<int>(shells.size())) continue;
            shells[static_cast<size_t>(shell - 1)].energy += 0.5 * std::norm(m(i, j)) / k2;
        }
    return shells;
}

// ---------------------------------------------------------------------------------------------

std::string to_string(KernelChoice k) {
    switch (k) {
        case KernelChoice::empirical: return "empirical";
        case KernelChoice::matern: return "matern";
        case KernelChoice::truncated: return "truncated";
    }
    return "unknown";
}

KernelChoice parse_kernel_choice(std::string_view name) {
    if (name == "empirical") return KernelChoice::empirical;
    if (name == "matern" || name == "matern52") return KernelChoice::matern;
    if (name == "truncated" || name == "pod") return KernelChoice::truncated;
    throw Error(ErrorKind::config, "unknown kernel '" + std::string(name) + "'");
}

ExperimentConfig default_config(PdeKind kind) {
    ExperimentConfig c;
    c.pde = kind;
    switch (kind) {
        case PdeKind::semilinear_elliptic:
            break;
        case PdeKind::darcy:
            c.n_snapshots = 40;
            c.gn_iters = 2;
            c.sigma = 0.2;
            break;
        case PdeKind::burgers:
            c.grid = 512;
            c.rho = 5.0;
            c.theta = 0.05;
            c.n_snapshots = 8;
            c.dt = 0.04;
            c.t_final = 1.0;
            c.gn_iters = 2;
            c.save_interval = 0.25;
            c.snapshot_dt = 1e-3;
            break;
        case PdeKind::allen_cahn:
            c.grid = 26;
            c.rho = 5.0;
            c.theta = 0.1;
            c.n_snapshots = 10;
            c.dt = 0.05;
            c.t_final = 5.0;
            c.gn_iters = 2;
            c.save_interval = 0.25;
            c.snapshot_dt = 1e-4;
            break;
        case PdeKind::navier_stokes:
            c.grid = 16;
            c.rho = 5.0;
            c.theta = 0.3;
            c.n_snapshots = 20;
            c.dt = 0.01;
            c.t_final = 1.0;
            c.gn_iters = 2;
            c.save_interval = 0.05;
            c.snapshot_dt = 1e-3;
            break;
    }
    return c;
}

namespace {

std::string normalize_key(std::string key) {
    std::string out;
    for (char ch : key) {
        if (ch == '-') ch = '_';
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
    return out;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

double to_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double d = 0.0;
    try {
        d = std::stod(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != v.size() || !std::isfinite(d))
        throw Error(ErrorKind::config, "invalid number '" + v + "' for " + key);
    return d;
}

long long to_int(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    long long i = 0;
    try {
        i = std::stoll(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != v.size()) throw Error(ErrorKind::config, "invalid integer '" + v + "' for " + key);
    return i;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw Error(ErrorKind::config, "invalid boolean '" + v + "' for " + key);
}

}  // namespace

std::vector<std::string> config_keys() {
    return {"pde",          "grid",          "kernel",     "theta",        "rank",       "rho",
            "n_snapshots",  "dt",            "t_final",    "seed",         "test_seed",  "gn_iters",
            "gn_lambda_rel", "sigma",        "nu",         "epsilon",      "kmax",       "save_interval",
            "save_stride",  "snapshot_dt",   "fv_cells",   "ref_cells",    "ref_refine", "ref_time_refine",
            "shift_augment", "boundary_rows", "diagnostics", "snapshots",  "out"};
}

void apply_setting(ExperimentConfig& c, std::string key, const std::string& raw) {
    key = normalize_key(key);
    const std::string v = trim(raw);
    if (key == "pde") c.pde = parse_pde_kind(v);
    else if (key == "grid") c.grid = to_int(key, v);
    else if (key == "kernel") c.kernel = parse_kernel_choice(v);
    else if (key == "theta") c.theta = to_double(key, v);
    else if (key == "rank") c.rank = to_int(key, v);
    else if (key == "rho") c.rho = to_double(key, v);
    else if (key == "n_snapshots") c.n_snapshots = to_int(key, v);
    else if (key == "dt") c.dt = to_double(key, v);
    else if (key == "t_final") c.t_final = to_double(key, v);
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_int(key, v));
    else if (key == "test_seed") c.test_seed = static_cast<std::uint64_t>(to_int(key, v));
    else if (key == "gn_iters") c.gn_iters = static_cast<int>(to_int(key, v));
    else if (key == "gn_lambda_rel") c.gn_lambda_rel = to_double(key, v);
    else if (key == "sigma") c.sigma = to_double(key, v);
    else if (key == "nu") c.nu = to_double(key, v);
    else if (key == "epsilon") c.epsilon = to_double(key, v);
    else if (key == "kmax") c.kmax = static_cast<int>(to_int(key, v));
    else if (key == "save_interval") c.save_interval = to_double(key, v);
    else if (key == "save_stride") c.save_stride = to_int(key, v);
    else if (key == "snapshot_dt") c.snapshot_dt = to_double(key, v);
    else if (key == "fv_cells") c.fv_cells = to_int(key, v);
    else if (key == "ref_cells") c.ref_cells = to_int(key, v);
    else if (key == "ref_refine") c.ref_refine = to_int(key, v);
    else if (key == "ref_time_refine") c.ref_time_refine = to_int(key, v);
    else if (key == "shift_augment") c.shift_augment = to_bool(key, v);
    else if (key == "boundary_rows") c.boundary_rows = to_bool(key, v);
    else if (key == "diagnostics") c.diagnostics = to_bool(key, v);
    else if (key == "snapshots") c.snapshots = v;
    else if (key == "out") c.out = v;
    else throw Error(ErrorKind::config, "unknown configuration key '" + key + "'");
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
    std::map<std::string, std::string> out;
    const auto keys = config_keys();
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3)
                throw Error(ErrorKind::config, "config line " + std::to_string(lineno) + ": malformed section header");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorKind::config, "config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = normalize_key(trim(line.substr(0, eq)));
        if (std::find(keys.begin(), keys.end(), key) == keys.end())
            throw Error(ErrorKind::config, "config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorKind::config, "cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

void validate(const ExperimentConfig& c) {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::config, m); };
    const bool td = time_dependent(c.pde);
    if (c.grid < (td ? 4 : 8)) fail("grid is too small");
    if (!(c.theta > 0)) fail("theta must be positive");
    if (c.rank < 1) fail("rank must be at least 1");
    if (c.rho < 0) fail("rho must be nonnegative (0 selects the dense covariance)");
    if (c.n_snapshots < 1) fail("n_snapshots must be at least 1");
    if (c.gn_iters < 1) fail("gn_iters must be at least 1");
    if (c.gn_lambda_rel < 0) fail("gn_lambda_rel must be nonnegative");
    if (!(c.sigma > 0) || !(c.nu > 0) || !(c.epsilon > 0)) fail("sigma, nu and epsilon must be positive");
    if (c.kmax < 1) fail("kmax must be at least 1");
    if (c.save_stride < 1 || c.save_interval < 0) fail("invalid snapshot slice spacing");
    if (!(c.snapshot_dt > 0)) fail("snapshot_dt must be positive");
    if (c.ref_refine < 1 || c.ref_time_refine < 1 || c.fv_cells < 4 || c.ref_cells < 4) fail("invalid reference resolution");
    if (td) {
        if (!(c.dt > 0) || !(c.t_final > 0)) fail("time-dependent runs need positive dt and t_final");
        const double q = c.t_final / c.dt;
        if (std::abs(q - std::round(q)) > 1e-9 * std::max(1.0, q)) fail("dt must divide t_final");
    }
}

// ---------------------------------------------------------------------------------------------

const std::vector<std::string>& report_header() {
    static const std::vector<std::string> h = {
        "pde",          "kernel",  "M",             "N",              "rho",           "rel_l2",
        "linf",         "wall_ms", "gn_residual",   "frobenius_gap",  "status",        "stage",
        "dt_effective", "nugget",  "fill_distance", "span_residual",  "snapshot_projection",
        "range_rank",   "note"};
    return h;
}

void write_report(std::ostream& out, const std::vector<ReportRow>& rows) {
    const auto& h = report_header();
    for (size_t i = 0; i < h.size(); ++i) out << (i ? "," : "") << h[i];
    out << "\n";
    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    auto clean = [](std::string s) {
        std::replace(s.begin(), s.end(), ',', ';');
        std::replace(s.begin(), s.end(), '\n', ' ');
        return s;
    };
    for (const auto& r : rows) {
        out << r.pde << "," << r.kernel << "," << r.M << "," << r.N << "," << format_double(r.rho) << ","
            << format_double(r.rel_l2) << "," << format_double(r.linf) << "," << format_double(r.wall_ms) << ","
            << format_double(r.gn_residual) << "," << opt(r.frobenius_gap) << "," << r.status << "," << clean(r.stage)
            << "," << format_double(r.dt_effective) << "," << format_double(r.nugget) << "," << opt(r.fill_distance)
            << "," << opt(r.span_residual) << "," << opt(r.snapshot_projection) << "," << r.range_rank << ","
            << clean(r.note) << "\n";
    }
}

CovarianceBuild build_covariance(const Kernel& kernel, const CollocationSet& grid, const MeasurementLayout& layout,
                                 double rho) {
    CovarianceBuild b{CovarianceModel::dense(Mat()), {}, std::nullopt, kernel};
    b.gram.entries = assemble_measurement_gram(kernel, grid, layout);
    b.gram.nugget = default_nugget(kernel, b.gram.entries);
    // an all-zero library has a zero Gram; an absolute floor keeps the factor defined (its range is empty)
    if (b.gram.nugget == 0.0) b.gram.nugget = 1e-8;
    if (rho > 0) {
        const MaximinOrdering ordering = append_measurements(maximin_order(grid), layout.family_sites());
        const SparsityPattern pattern = sparsity_pattern(ordering, grid, rho);
        b.factor = kl_sparse_factor(b.gram, pattern, ordering);
        b.covariance = CovarianceModel::sparse(*b.factor);
    } else {
        b.covariance = CovarianceModel::dense(b.gram.regularized());
    }
    if (is_finite_rank(kernel)) b.covariance.compress_to_range(finite_rank_features(kernel, layout));
    return b;
}

CollocationSet experiment_grid(const ExperimentConfig& c) {
    const Index n = c.grid;
    switch (c.pde) {
        case PdeKind::semilinear_elliptic:
        case PdeKind::darcy: return make_grid(unit_box(2), {n, n});
        case PdeKind::burgers: return make_grid(unit_box(1, -1.0, 1.0), {n});
        case PdeKind::allen_cahn: return make_grid(square_box(0.0, 2.0 * std::numbers::pi), {n, n});
        case PdeKind::navier_stokes: return make_periodic_grid(square_box(0.0, 2.0 * std::numbers::pi), {n, n});
    }
    throw Error(ErrorKind::config, "unknown pde kind");
}

PDEInstance snapshot_template(const ExperimentConfig& c) {
    PDEInstance p;
    p.kind = c.pde;
    p.grid = experiment_grid(c);
    if (c.pde == PdeKind::darcy) p.coefficient = checkerboard_permeability(p.grid);
    p.nu = c.nu;
    p.epsilon = c.epsilon;
    p.dt = c.snapshot_dt;
    p.t_final = c.t_final > 0 ? c.t_final : 1.0;
    p.save_stride = c.save_stride;
    p.save_interval = c.save_interval;
    p.fv_cells = c.fv_cells;
    p.periodic_fv = true;
    return p;
}

SamplerSpec snapshot_sampler(const ExperimentConfig& c) {
    SamplerSpec s;
    switch (c.pde) {
        case PdeKind::semilinear_elliptic:
        case PdeKind::darcy: s.kind = SamplerKind::gp_gaussian; break;
        case PdeKind::burgers:
        case PdeKind::allen_cahn: s.kind = SamplerKind::trig_random; break;
        case PdeKind::navier_stokes: s.kind = SamplerKind::bandlimited_fourier; break;
    }
    s.sigma = c.sigma;
    s.kmax = c.kmax;
    s.seed = c.seed;
    return s;
}

SnapshotLibrary experiment_library(const ExperimentConfig& c) {
    if (!c.snapshots.empty()) {
        SnapshotLibrary lib = load_library(c.snapshots);
        if (lib.grid.size() != experiment_grid(c).size())
            throw Error(ErrorKind::config, "snapshot file grid does not match the configured grid");
        if (lib.kind != c.pde) throw Error(ErrorKind::config, "snapshot file holds a different pde kind");
        return lib;
    }
    SnapshotLibrary lib = build_library(snapshot_template(c), snapshot_sampler(c), c.n_snapshots);
    if (c.pde == PdeKind::burgers && c.shift_augment) lib = shift_augment(lib, burgers_shifts());
    return lib;
}

namespace {

struct TestProblem {
    Vec coefficient, forcing, boundary, u0;
    Vec reference;
    double reference_dt = 0.0;
};

Vec manufactured(const CollocationSet& g, bool forcing) {
    Vec out(g.size());
    const double pi = std::numbers::pi;
    for (Index i = 0; i < g.size(); ++i) {
        const double x = g.points(i, 0), y = g.points(i, 1);
        const double s1 = std::sin(pi * x) * std::sin(pi * y), s2 = std::sin(2 * pi * x) * std::sin(2 * pi * y);
        const double u = 0.5 * s1 + s2;
        out[i] = forcing ? 0.5 * 2 * pi * pi * s1 + 8 * pi * pi * s2 + u * u * u : u;
    }
    return out;
}

// Nodes of a (periodic) tensor grid that coincide with the coarse grid under refinement r.
Vec restrict_to(const Vec& fine, const CollocationSet& coarse, Index nfine0, Index r) {
    Vec out(coarse.size());
    const Index n0 = coarse.resolution[0];
    for (Index p = 0; p < coarse.size(); ++p) {
        const Index i0 = p % n0, i1 = p / n0;
        out[p] = fine[i0 * r + nfine0 * (i1 * r)];
    }
    return out;
}

TestProblem test_problem(const ExperimentConfig& c, const CollocationSet& grid) {
    TestProblem t;
    const double pi = std::numbers::pi;
    switch (c.pde) {
        case PdeKind::semilinear_elliptic:
            t.forcing = manufactured(grid, true);
            t.boundary = Vec::Zero(grid.size());
            t.reference = solve_semilinear_elliptic(grid, t.forcing, t.boundary);
            break;
        case PdeKind::darcy:
            t.coefficient = checkerboard_permeability(grid);
            t.forcing = Vec::Ones(grid.size());
            t.boundary = Vec::Zero(grid.size());
            t.reference = solve_darcy(grid, t.coefficient, t.forcing, t.boundary);
            break;
        case PdeKind::burgers: {
            t.u0 = -(pi * grid.points.col(0).array()).sin().matrix();
            t.u0[0] = 0.0;
            t.u0[grid.size() - 1] = 0.0;
            BurgersOptions bo;
            bo.nu = c.nu;
            bo.cells = c.ref_cells;
            bo.dt = std::min(1e-3, c.dt / static_cast<double>(c.ref_time_refine));
            bo.t_final = c.t_final;
            bo.periodic = false;
            bo.save_stride = 1 << 30;
            const Vec cc = -(pi * cell_centers(bo.cells).array()).sin().matrix();
            const BurgersTrajectory tr = solve_burgers(cc, bo);
            t.reference = cells_to_nodes(tr.fields.back(), false, grid.points.col(0));
            t.reference_dt = tr.dt_effective;
            break;
        }
        case PdeKind::allen_cahn: {
            TrigSeries2D ic;
            ic.a(2, 2) = 0.25;
            t.u0 = ic.sample(grid);
            const Index r = c.ref_refine, nf = (grid.resolution[0] - 1) * r + 1;
            const CollocationSet fine = make_grid(grid.bounds, {nf, nf});
            ExplicitOptions eo;
            eo.dt = std::min(c.snapshot_dt, c.dt / static_cast<double>(c.ref_time_refine));
            eo.t_final = c.t_final;
            eo.save_stride = 1 << 30;
            const TimeSeries tr = solve_allen_cahn(ic.sample(fine), c.epsilon, fine, eo);
            t.reference = restrict_to(tr.fields.back(), grid, nf, r);
            t.reference_dt = tr.dt_effective;
            break;
        }
        case PdeKind::navier_stokes: {
            const FourierSeries2D ic = sample_bandlimited_series(derive_seed(c.test_seed, 0x7e57), c.kmax);
            t.u0 = ic.sample(grid);
            const Index r = c.ref_refine, nf = grid.resolution[0] * r;
            const CollocationSet fine = make_periodic_grid(grid.bounds, {nf, nf});
            ExplicitOptions eo;
            eo.dt = c.dt / static_cast<double>(c.ref_time_refine);
            eo.t_final = c.t_final;
            eo.save_stride = 1 << 30;
            const TimeSeries tr = solve_ns_vorticity(ic.sample(fine), c.nu, fine, eo);
            t.reference = restrict_to(tr.fields.back(), grid, nf, r);
            t.reference_dt = tr.dt_effective;
            break;
        }
    }
    return t;
}

Kernel make_kernel(const ExperimentConfig& c, const SnapshotLibrary* lib) {
    switch (c.kernel) {
        case KernelChoice::matern: return MaternKernel{c.theta};
        case KernelChoice::empirical: return EmpiricalKernel::from_snapshots(lib->S);
        case KernelChoice::truncated: return pod_truncate(EmpiricalKernel::from_snapshots(lib->S), c.rank);
    }
    throw Error(ErrorKind::config, "unknown kernel");
}

}  // namespace

ExperimentOutcome run_experiment(const ExperimentConfig& c, const SnapshotLibrary* library, bool rethrow) {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentOutcome o;
    ReportRow& row = o.row;
    row.pde = to_string(c.pde);
    row.kernel = to_string(c.kernel);
    row.rho = c.rho;
    row.N = c.kernel == KernelChoice::matern ? 0 : c.n_snapshots;
    row.dt_effective = c.dt;
    std::string stage = "config";
    try {
        validate(c);
        o.grid = experiment_grid(c);
        const CollocationSet& grid = o.grid;
        row.M = grid.size();

        stage = "reference";
        const TestProblem tp = test_problem(c, grid);
        o.reference = tp.reference;

        stage = "library";
        const SnapshotLibrary* lib = library;
        if (c.kernel != KernelChoice::matern && !lib) {
            o.library = experiment_library(c);
            lib = &*o.library;
        }
        if (lib) row.N = lib->n_instances;

        stage = "kernel";
        const Kernel kernel = make_kernel(c, lib);
        const Vec* coef = tp.coefficient.size() ? &tp.coefficient : nullptr;
        const MeasurementLayout layout = measurement_layout(c.pde, grid, coef);

        stage = "factor";
        const CovarianceBuild cov = build_covariance(kernel, grid, layout, c.rho);
        row.nugget = cov.gram.nugget;
        row.range_rank = cov.covariance.compressed() ? cov.covariance.range_rank() : layout.size();
        if (c.diagnostics) {
            if (cov.factor) row.frobenius_gap = frobenius_gap(cov.gram, *cov.factor);
            row.fill_distance = fill_distance(grid, std::vector<Index>(grid.resolution.size(), 4 * grid.resolution[0]));
        }

        stage = "solve";
        GNConfig gn;
        gn.max_iters = c.gn_iters;
        gn.lambda_rel = c.gn_lambda_rel;
        if (!time_dependent(c.pde)) {
            RecoveryProblem p;
            p.covariance = &cov.covariance;
            p.system = stationary_system(grid, layout, c.boundary_rows);
            Vec rhs = assemble_constraints(c.pde, grid, coef, tp.boundary, tp.forcing).rhs;
            p.rhs = rhs.head(p.system.rows());
            p.config = gn;
            const GNResult r = gauss_newton_solve(p, Vec::Zero(layout.size()));
            o.solution = nodal_values(r, grid.size());
            row.gn_residual = r.residuals.back();
        } else {
            MarchSetup s;
            s.kind = c.pde;
            s.grid = &grid;
            s.covariance = &cov.covariance;
            s.layout = layout;
            s.nu = c.nu;
            s.epsilon = c.epsilon;
            s.boundary_rows = c.boundary_rows && c.pde != PdeKind::navier_stokes;
            if (c.pde == PdeKind::navier_stokes) std::tie(s.biot_x, s.biot_y) = biot_savart_matrices(grid);
            const MarchResult m = crank_nicolson_march(s, tp.u0, c.dt, c.t_final, gn);
            o.solution = m.trajectory.fields.back();
            if (!m.residuals.empty() && !m.residuals.back().empty()) row.gn_residual = m.residuals.back().back();
            if (m.error) {
                row.status = "divergence";
                row.stage = "solve";
                row.note = *m.error;
            }
        }

        stage = "error";
        bool zero_ref = false;
        row.rel_l2 = relative_l2_error(o.solution, o.reference, &zero_ref);
        row.linf = linf_error(o.solution, o.reference);
        if (zero_ref) row.note += (row.note.empty() ? "" : "; ") + std::string("zero reference");
        if (lib && is_finite_rank(kernel)) {
            const Mat& basis = std::holds_alternative<TruncatedKernel>(kernel) ? std::get<TruncatedKernel>(kernel).modes
                                                                                : lib->S;
            row.span_residual = span_residual(basis, o.solution);
            if (c.diagnostics) row.snapshot_projection = span_residual(basis, o.reference);
            if (row.range_rank == 0) row.note += (row.note.empty() ? "" : "; ") + std::string("degenerate library");
        }
        if (c.pde == PdeKind::burgers)
            row.note += (row.note.empty() ? "" : "; ") + std::string("shock_x=") +
                        format_double(grid.points(steepest_gradient(o.solution), 0));
    } catch (const Error& e) {
        if (rethrow) throw;
        row.status = error_kind_name(e.kind());
        row.stage = stage;
        row.note = e.what();
    }
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return o;
}

SweepAxis parse_sweep_axis(std::string_view name) {
    if (name == "N" || name == "n" || name == "n_snapshots") return SweepAxis::N;
    if (name == "rho") return SweepAxis::rho;
    if (name == "M" || name == "m" || name == "grid") return SweepAxis::M;
    throw Error(ErrorKind::config, "unknown sweep axis '" + std::string(name) + "'");
}

std::vector<ExperimentOutcome> sweep(const ExperimentConfig& cfg, SweepAxis axis, const std::vector<double>& values) {
    if (values.empty()) throw Error(ErrorKind::config, "sweep needs at least one value");
    std::vector<ExperimentOutcome> out;
    std::optional<SnapshotLibrary> shared;
    if (axis == SweepAxis::N && cfg.kernel != KernelChoice::matern) {
        ExperimentConfig big = cfg;
        big.n_snapshots = static_cast<Index>(*std::max_element(values.begin(), values.end()));
        validate(big);
        shared = experiment_library(big);
    } else if (axis == SweepAxis::rho && cfg.kernel != KernelChoice::matern) {
        validate(cfg);
        shared = experiment_library(cfg);
    }
    for (double v : values) {
        ExperimentConfig c = cfg;
        const SnapshotLibrary* lib = nullptr;
        SnapshotLibrary prefix;
        switch (axis) {
            case SweepAxis::N:
                c.n_snapshots = static_cast<Index>(v);
                if (shared) {
                    // burgers libraries count shifted copies as instances: take the base instances with their shifts
                    if (shared->meta.count("n_shifts")) {
                        const Index base = shared->n_instances / (1 + std::stoll(shared->meta.at("n_shifts")));
                        std::vector<Index> cols;
                        for (Index j = 0; j < shared->n_cols(); ++j)
                            if (shared->provenance[static_cast<size_t>(j)].instance % base < c.n_snapshots) cols.push_back(j);
                        prefix = take_columns(*shared, cols);
                    } else {
                        prefix = take_instances(*shared, c.n_snapshots);
                    }
                    lib = &prefix;
                }
                break;
            case SweepAxis::rho:
                c.rho = v;
                if (shared) lib = &*shared;
                break;
            case SweepAxis::M:
                c.grid = static_cast<Index>(v);
                break;
        }
        out.push_back(run_experiment(c, lib));
    }
    return out;
}

}  // namespace krom
