#pragma once

#include "krom/geometry.hpp"
#include "krom/recovery.hpp"

namespace krom {

struct NewtonInfo {
    int iterations = 0;
    double residual = 0.0;
};

// Newton on the 5-point discretization of -Lap u + u^3 = f, u = g on the boundary. f and g are nodal
// fields; only their interior / boundary entries are read.
Vec solve_semilinear_elliptic(const CollocationSet& grid, const Vec& f, const Vec& g, double tol = 1e-10,
                              NewtonInfo* info = nullptr);

// Same with -div(k grad u) and harmonic-mean face coefficients.
Vec solve_darcy(const CollocationSet& grid, const Vec& k, const Vec& f, const Vec& g, double tol = 1e-10,
                NewtonInfo* info = nullptr);

// Max-norm of the discrete residual; k == nullptr means the plain Laplacian.
double stationary_residual(const CollocationSet& grid, const Vec* k, const Vec& u, const Vec& f, const Vec& g);

struct TimeSeries {
    std::vector<double> times;
    std::vector<Vec> fields;
    double dt_effective = 0.0;
    Index steps = 0;
};

// Uniform step plan: dt <= dt_max dividing t_final (and save_interval when given).
struct StepPlan {
    Index steps = 0;
    double dt = 0.0;
    Index stride = 1;
};
StepPlan plan_steps(double t_final, double dt_max, Index save_stride, double save_interval);

struct BurgersOptions {
    double nu = 1e-3;
    Index cells = 1024;
    double dt = 1e-3;
    double t_final = 1.0;
    bool periodic = false;  // periodic on [-1, 1) or Dirichlet 0 at +-1
    Index save_stride = 10;
    double save_interval = 0.0;
    double cfl = 0.4;
};

struct BurgersTrajectory : TimeSeries {
    Vec centers;
    std::vector<double> mass;           // h * sum u at each saved time
    std::vector<double> boundary_inflow;  // cumulative flux through the two faces at each saved time
};

Vec cell_centers(Index cells);

// MUSCL (minmod) + local Lax–Friedrichs for u^2/2, explicit central diffusion, SSP-RK2 in time.
// u0 holds cell averages (or point values at centers).
BurgersTrajectory solve_burgers(const Vec& u0, const BurgersOptions& opt);

// Linear interpolation of cell values to nodes on [-1, 1].
Vec cells_to_nodes(const Vec& cells, bool periodic, const Vec& x_nodes);

// Index of the steepest centered difference (interior nodes).
Index steepest_gradient(const Vec& v);

struct ExplicitOptions {
    double dt = 1e-4;
    double t_final = 1.0;
    Index save_stride = 10;
    double save_interval = 0.0;
};

// FTCS for u_t = eps^2 Lap u - (u^3 - u) with the boundary held at its initial values.
TimeSeries solve_allen_cahn(const Vec& u0, double epsilon, const CollocationSet& grid, const ExplicitOptions& opt);

struct StreamSolution {
    Vec psi, ux, uy;
};

// Exact solve of the periodic 5-point Poisson problem -Lap psi = omega (zero mean) through the discrete
// Laplacian's Fourier eigenbasis; velocity = (D_y psi, -D_x psi) with central differences.
StreamSolution poisson_streamfunction(const Vec& omega, const CollocationSet& grid);

// Dense maps omega -> ux, omega -> uy of the discrete Biot–Savart law above.
std::pair<Mat, Mat> biot_savart_matrices(const CollocationSet& grid);

Vec discrete_divergence(const Vec& ux, const Vec& uy, const CollocationSet& grid);

// Forward Euler on w_t = -u.grad w + nu Lap w, central differences, periodic.
TimeSeries solve_ns_vorticity(const Vec& omega0, double nu, const CollocationSet& grid, const ExplicitOptions& opt);

}  // namespace krom
