#pragma once

#include "krom/kernels.hpp"
#include "krom/sparse_cholesky.hpp"

#include <map>
#include <optional>

namespace krom {

// ---------------------------------------------------------------------------------------------
// Nodal stencils

struct ConstraintStencil {
    std::string name;
    std::vector<Index> sites;  // grid node of each row
    SpMat weights;             // rows x grid nodes
};

struct ConstraintAssembly {
    std::vector<ConstraintStencil> stencils;
    Vec rhs;  // interior rows then boundary rows

    const ConstraintStencil& get(std::string_view name) const;
    bool has(std::string_view name) const;
};

// Selection rows: one unit entry per site.
SpMat dirac_stencil(const CollocationSet& grid, const std::vector<Index>& sites);
// Central difference of order 1 or 2 along one axis (periodic grids wrap).
SpMat derivative_stencil(const CollocationSet& grid, int axis, int order, const std::vector<Index>& sites);
// 2d+1 point Laplacian.
SpMat laplacian_stencil(const CollocationSet& grid, const std::vector<Index>& sites);
// -div(k grad u) with harmonic-mean face coefficients.
SpMat darcy_stencil(const CollocationSet& grid, const Vec& k, const std::vector<Index>& sites);

// Stencils per kind (names):
//   elliptic / darcy: operator (-Lap or -div k grad), identity, boundary
//   burgers:          dx, dxx, identity, boundary
//   allen_cahn:       laplacian, identity, boundary
//   navier_stokes:    dx, dy, laplacian, identity   (periodic, no boundary)
// rhs holds forcing at interior rows then bc_values at boundary rows.
ConstraintAssembly assemble_constraints(PdeKind kind, const CollocationSet& grid, const Vec* coefficient,
                                        const Vec& bc_values, const Vec& forcing);

// Checkerboard permeability 101/2 - 99/2 (-1)^(floor(8 x1) + floor(8 x2)).
Vec checkerboard_permeability(const CollocationSet& grid);

// Derivative measurement families used by each kind. Matérn reads the analytic terms, finite-rank kernels
// the discrete rows. Darcy's analytic form is -k Lap (grad k vanishes away from the jumps).
MeasurementLayout measurement_layout(PdeKind kind, const CollocationSet& grid, const Vec* coefficient = nullptr);

// ---------------------------------------------------------------------------------------------
// Constraints in measurement space:
//   G(z) = L z + sum_p w_p .* (A_p z) .* (B_p z) + w .* tau(P z)

struct ConstraintSystem {
    struct Product {
        SpMat left, right;
        Vec weight;
    };

    SpMat linear;
    std::vector<Product> products;
    SpMat nl_select;
    Vec nl_weight;
    std::function<double(double)> tau;
    std::function<double(double)> dtau;

    Index rows() const { return linear.rows(); }
    Index cols() const { return linear.cols(); }
    Vec evaluate(const Vec& z) const;
    SpMat jacobian(const Vec& z) const;
};

// elliptic / darcy: z_op + z^3 = f on interior sites, z = g on boundary sites (optional).
ConstraintSystem stationary_system(const CollocationSet& grid, const MeasurementLayout& layout, bool boundary_rows);

// ---------------------------------------------------------------------------------------------
// Covariance surrogate K~ over the measurement vector.

class CovarianceModel {
public:
    static CovarianceModel dense(Mat theta);
    static CovarianceModel sparse(SparseFactor factor);

    // Restrict to range(F) for finite-rank kernels: K~_c = W (W^T K~ W) W^T with W an orthonormal basis
    // of range(F) (singular values above rel_cut * sigma_1). Results are then carried as F beta.
    void compress_to_range(const Mat& features, double rel_cut = 1e-8);

    Index size() const;
    bool compressed() const { return compressed_; }
    bool is_sparse() const { return factor_.has_value(); }
    Index range_rank() const { return W_.cols(); }
    const Mat& features() const { return F_; }

    Mat apply(const Mat& X) const;         // K~ X
    Mat coefficients(const Mat& X) const;  // B with K~_c X = F B (compressed only)
    Vec project(const Vec& z) const;       // least-squares beta with F beta ~ z (compressed only)
    // Compressed only: the regularized min-norm beta with J F beta = b (one Gauss-Newton solve).
    Vec constrained_coefficients(const SpMat& J, const Vec& b, double lambda_rel) const;
    const SparseFactor* factor() const { return factor_ ? &*factor_ : nullptr; }

private:
    Mat raw_apply(const Mat& X) const;

    Mat theta_;
    std::optional<SparseFactor> factor_;
    bool compressed_ = false;
    Mat F_, W_, G_, L_;  // G = V Sigma^{-1} C, C = W^T K~ W = L L^T
    Vec sigma_;
    Mat V_;
};

struct GNConfig {
    int max_iters = 3;
    double lambda_rel = 1e-12;
    int max_halvings = 8;
    double tol = 1e-10;
};

struct GNResult {
    Vec z;
    Vec beta;                        // coefficients on the features when compressed
    std::vector<double> residuals;   // ||G(z) - y|| before each iteration and at the end
    int iterations = 0;
};

struct RecoveryProblem {
    const CovarianceModel* covariance = nullptr;
    ConstraintSystem system;
    Vec rhs;
    GNConfig config;
};

GNResult gauss_newton_solve(const RecoveryProblem& problem, const Vec& initial_guess);

// Nodal values of a result (the Dirac block).
Vec nodal_values(const GNResult& result, Index n_nodes);

// Multilinear interpolation of nodal values; query is q x d.
Vec evaluate_solution(const Vec& v, const CollocationSet& grid, const Mat& query);

// ---------------------------------------------------------------------------------------------
// Crank–Nicolson marching

struct Trajectory {
    std::vector<double> times;
    std::vector<Vec> fields;
};

struct MarchSetup {
    PdeKind kind = PdeKind::burgers;
    const CollocationSet* grid = nullptr;
    const CovarianceModel* covariance = nullptr;
    MeasurementLayout layout;
    double nu = 1e-3;
    double epsilon = 0.01;
    bool advection = true;     // burgers with advection off is the heat equation
    bool boundary_rows = true;
    Mat biot_x, biot_y;        // navier_stokes: velocity from nodal vorticity
    Vec initial_measurements;  // full measurement vector of u0; empty means kernel interpolation
};

struct MarchResult {
    Trajectory trajectory;
    std::vector<std::vector<double>> residuals;  // per step
    std::optional<std::string> error;            // set when a step diverged; trajectory is partial
    Vec final_measurements;
};

// Constraints of one step from the measurement vector z of the previous state.
struct StepSystem {
    ConstraintSystem sys;
    Vec rhs;
};
StepSystem crank_nicolson_step(const MarchSetup& setup, const Vec& z, double dt);

// Build the measurement layout, covariance and Biot–Savart maps for a kind, then march.
MarchResult crank_nicolson_march(const MarchSetup& setup, const Vec& u0, double dt, double t_final,
                                 const GNConfig& config);

// Measurement vector of a nodal field by kernel interpolation of its Dirac values.
GNResult interpolate_measurements(const CovarianceModel& cov, const MeasurementLayout& layout, const Vec& u0,
                                  const GNConfig& config);

}  // namespace krom
