#pragma once

#include "krom/kernels.hpp"
#include "krom/recovery.hpp"
#include "krom/snapshots.hpp"
#include "krom/sparse_cholesky.hpp"

#include <iosfwd>
#include <map>
#include <optional>

namespace krom {

// ---------------------------------------------------------------------------------------------
// Error metrics

// ||u - ref|| / ||ref||. A zero reference returns ||u|| and sets *zero_reference.
double relative_l2_error(const Vec& u, const Vec& ref, bool* zero_reference = nullptr);
double linf_error(const Vec& u, const Vec& ref);

// Relative residual of v after least-squares projection onto span(S).
double span_residual(const Mat& S, const Vec& v);

struct SpectrumShell {
    int k = 0;
    double energy = 0.0;
};

// E(k) = 1/2 sum over |kappa| in (k - 1/2, k + 1/2] of |w_hat|^2 / |kappa|^2, kappa = 0 excluded,
// w_hat the DFT scaled by 1/n^2. Shells k = 1 .. floor(sqrt(2) n / 2) + 1.
std::vector<SpectrumShell> energy_spectrum(const Vec& omega, const CollocationSet& grid);

// ---------------------------------------------------------------------------------------------
// Experiment configuration

enum class KernelChoice { empirical, matern, truncated };
std::string to_string(KernelChoice k);
KernelChoice parse_kernel_choice(std::string_view name);

struct ExperimentConfig {
    PdeKind pde = PdeKind::semilinear_elliptic;
    Index grid = 32;                // points per axis
    KernelChoice kernel = KernelChoice::empirical;
    double theta = 0.3;
    Index rank = 10;                // truncated kernel rank
    double rho = 4.0;               // <= 0 means the dense covariance
    Index n_snapshots = 60;         // library instances
    double dt = 0.0;                // KROM step (time-dependent kinds)
    double t_final = 0.0;
    std::uint64_t seed = 1;         // master seed of the snapshot library
    std::uint64_t test_seed = 7;    // test-problem data when it is sampled
    int gn_iters = 3;
    double gn_lambda_rel = 1e-12;
    double sigma = 0.15;            // GP forcing lengthscale
    double nu = 1e-3;
    double epsilon = 0.01;
    int kmax = 8;
    double save_interval = 0.0;     // library slice spacing, 0 keeps every save_stride-th step
    Index save_stride = 10;
    double snapshot_dt = 1e-4;      // reference-solver step bound for libraries
    Index fv_cells = 2048;
    Index ref_cells = 4096;         // burgers reference
    Index ref_refine = 4;           // spatial refinement of time-dependent references
    Index ref_time_refine = 10;
    bool shift_augment = true;      // burgers
    bool boundary_rows = true;
    bool diagnostics = false;       // frobenius gap, fill distance, snapshot projection
    std::string snapshots;          // load the library from this KROMS1 file instead of building
    std::string out;                // output directory for field files
};

// Defaults for a kind; grids are scaled to desk size where the full setting is impractical.
ExperimentConfig default_config(PdeKind kind);

// key = value with [section] headers; '#' starts a comment. Keys match the CLI flag names, with '-' and
// '_' interchangeable. Throws Error(config) naming the line on unknown keys or bad values.
void apply_setting(ExperimentConfig& cfg, std::string key, const std::string& value);
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> read_config_file(const std::string& path);
std::vector<std::string> config_keys();
void validate(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------------------------
// Runs

struct ReportRow {
    std::string pde, kernel;
    Index M = 0, N = 0;
    double rho = 0.0;
    double rel_l2 = 0.0, linf = 0.0;
    double wall_ms = 0.0;
    double gn_residual = 0.0;
    std::optional<double> frobenius_gap;
    std::string status = "ok";
    std::string stage;
    double dt_effective = 0.0;
    double nugget = 0.0;
    std::optional<double> fill_distance;
    std::optional<double> span_residual;
    std::optional<double> snapshot_projection;
    Index range_rank = 0;
    std::string note;
};

const std::vector<std::string>& report_header();
void write_report(std::ostream& out, const std::vector<ReportRow>& rows);

struct CovarianceBuild {
    CovarianceModel covariance;
    GramMatrix gram;
    std::optional<SparseFactor> factor;
    Kernel kernel;
};

// Measurement Gram, nugget, sparse factor (rho > 0) and range compression (finite-rank kernels).
CovarianceBuild build_covariance(const Kernel& kernel, const CollocationSet& grid, const MeasurementLayout& layout,
                                 double rho);

struct ExperimentOutcome {
    ReportRow row;
    CollocationSet grid;
    Vec solution, reference;
    std::optional<SnapshotLibrary> library;
};

// The test problem of each kind and its reference on the collocation grid.
CollocationSet experiment_grid(const ExperimentConfig& cfg);
PDEInstance snapshot_template(const ExperimentConfig& cfg);
SamplerSpec snapshot_sampler(const ExperimentConfig& cfg);
SnapshotLibrary experiment_library(const ExperimentConfig& cfg);

// Failures are reported in the row (status != ok, stage names the failing step) unless rethrow is set.
ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const SnapshotLibrary* library = nullptr,
                                 bool rethrow = false);

enum class SweepAxis { N, rho, M };
SweepAxis parse_sweep_axis(std::string_view name);

// N sweeps reuse one library (largest N) through nested instance prefixes.
std::vector<ExperimentOutcome> sweep(const ExperimentConfig& cfg, SweepAxis axis, const std::vector<double>& values);

}  // namespace krom
