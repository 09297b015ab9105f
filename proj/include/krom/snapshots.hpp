#pragma once

#include "krom/random_fields.hpp"
#include "krom/reference_solvers.hpp"

#include <map>

namespace krom {

// Template of the problem whose solutions fill a library. Fields not used by a kind are ignored.
struct PDEInstance {
    PdeKind kind = PdeKind::semilinear_elliptic;
    CollocationSet grid;
    Vec coefficient;  // darcy permeability (nodal)
    Vec boundary;     // stationary Dirichlet data (nodal); empty means zero
    double nu = 1e-3;
    double epsilon = 0.01;
    double dt = 1e-4;       // reference-solver step bound
    double t_final = 1.0;
    Index save_stride = 10;     // keep every save_stride-th step ...
    double save_interval = 0.0; // ... or one slice per interval when positive
    Index fv_cells = 0;         // burgers: finite-volume cells, 0 picks 4 (M - 1)
    bool periodic_fv = true;    // burgers snapshots solved on the periodic domain
};

struct ColumnRecord {
    std::uint64_t seed = 0;
    Index instance = 0;
    Index time_index = 0;
    double time = 0.0;
    double shift = 0.0;
};

struct SnapshotLibrary {
    Mat S;  // M_grid x n_cols
    PdeKind kind = PdeKind::semilinear_elliptic;
    CollocationSet grid;
    std::vector<ColumnRecord> provenance;
    Index n_instances = 0;
    Index n_times = 1;
    std::map<std::string, std::string> meta;

    Index n_cols() const { return S.cols(); }
};

// Solves the template for n sampled forcings (stationary kinds) or initial conditions (time-dependent
// kinds). Instance i draws from derive_seed(sampler.seed, i). Time-dependent kinds store every saved slice.
SnapshotLibrary build_library(const PDEInstance& instance, const SamplerSpec& sampler, Index n);

// Appends, for each shift s, every column translated by s (value at x is u(x - s)), 1D libraries on
// [lo, hi] treated as periodic. Grid-aligned shifts are exact index rotations.
SnapshotLibrary shift_augment(const SnapshotLibrary& library, const std::vector<double>& shifts);

std::vector<double> burgers_shifts();  // -0.8, -0.6, ..., 0.8

struct GreedySelection {
    std::vector<Index> indices;
    std::vector<double> residuals;  // projection residual of each pick at the time it was picked
    std::string note;               // set when the library ran out of rank first
};

// Strong greedy over columns; stops early once every residual is below tol times the first pick's norm.
GreedySelection greedy_select(const SnapshotLibrary& library, Index m, double tol = 1e-12);

SnapshotLibrary take_columns(const SnapshotLibrary& library, const std::vector<Index>& columns);
// Columns belonging to the first n instances (nested prefix of one library).
SnapshotLibrary take_instances(const SnapshotLibrary& library, Index n);

void save_library(const SnapshotLibrary& library, const std::string& path);
SnapshotLibrary load_library(const std::string& path);
void write_library(const SnapshotLibrary& library, std::ostream& out);
SnapshotLibrary read_library(std::istream& in);

}  // namespace krom
