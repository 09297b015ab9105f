#pragma once

#include "krom/geometry.hpp"

#include <array>
#include <cmath>
#include <variant>

namespace krom {

// ---------------------------------------------------------------------------------------------
// Matérn-5/2

template <typename Scalar>
Scalar matern52(Scalar r, Scalar theta) {
    using std::exp;
    using std::sqrt;
    const Scalar a = sqrt(Scalar(5)) / theta;
    const Scalar ar = a * r;
    return (Scalar(1) + ar + ar * ar / Scalar(3)) * exp(-ar);
}

template <typename DerivedX, typename DerivedY>
typename DerivedX::Scalar matern52_eval(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y,
                                        typename DerivedX::Scalar theta) {
    if (!(theta > 0)) throw Error(ErrorKind::invalid_parameter, "Matérn lengthscale theta must be positive");
    return matern52((x - y).norm(), theta);
}

// Radial derivatives D^k phi with D = (1/r) d/dr, k = 0..4. D^3 and D^4 are singular at r = 0; the
// caller only combines them with enough powers of the offset to vanish there.
template <typename Scalar>
std::array<Scalar, 5> matern52_radial(Scalar r, Scalar theta) {
    using std::exp;
    using std::sqrt;
    const Scalar a = sqrt(Scalar(5)) / theta;
    const Scalar ar = a * r;
    const Scalar e = exp(-ar);
    const Scalar a2 = a * a;
    const Scalar a4 = a2 * a2;
    std::array<Scalar, 5> D{};
    D[0] = (Scalar(1) + ar + ar * ar / Scalar(3)) * e;
    D[1] = -(a2 / Scalar(3)) * (Scalar(1) + ar) * e;
    D[2] = (a4 / Scalar(3)) * e;
    if (r > Scalar(0)) {
        D[3] = -(a4 * a / Scalar(3)) * e / r;
        D[4] = (a4 * a / Scalar(3)) * (Scalar(1) + ar) * e / (r * r * r);
    }
    return D;
}

using MultiIndex = std::array<int, 3>;

inline int order_of(const MultiIndex& alpha) { return alpha[0] + alpha[1] + alpha[2]; }

// Partial derivative d^alpha phi(|d|) of the radial profile at offset d (length dim), total order <= 4.
// Sums over pairings within each axis: each pair contributes one D, each unpaired index a factor d_a.
template <typename Scalar>
Scalar matern52_partial(const MultiIndex& alpha, const Scalar* d, int dim, Scalar theta) {
    const int m = order_of(alpha);
    if (m > 4) throw Error(ErrorKind::invalid_parameter, "Matérn derivative order above 4 is not supported");
    Scalar r2 = 0;
    for (int a = 0; a < dim; ++a) r2 += d[a] * d[a];
    using std::sqrt;
    const Scalar r = sqrt(r2);
    const auto D = matern52_radial(r, theta);

    // pairing multiplicity n!/(p! 2^p (n-2p)!) for n <= 4
    static constexpr int ways[5][3] = {{1, 0, 0}, {1, 0, 0}, {1, 1, 0}, {1, 3, 0}, {1, 6, 3}};
    Scalar total = 0;
    const int n0 = alpha[0], n1 = dim > 1 ? alpha[1] : 0, n2 = dim > 2 ? alpha[2] : 0;
    for (int p0 = 0; 2 * p0 <= n0; ++p0)
        for (int p1 = 0; 2 * p1 <= n1; ++p1)
            for (int p2 = 0; 2 * p2 <= n2; ++p2) {
                const int k = m - p0 - p1 - p2;
                const int unpaired = m - 2 * (p0 + p1 + p2);
                if (k >= 3 && r == Scalar(0)) continue;  // limit is zero, see above
                if (unpaired > 0 && r == Scalar(0)) continue;
                Scalar term = Scalar(ways[n0][p0] * ways[n1][p1] * ways[n2][p2]) * D[k];
                for (int e = 0; e < n0 - 2 * p0; ++e) term *= d[0];
                for (int e = 0; e < n1 - 2 * p1; ++e) term *= d[1];
                for (int e = 0; e < n2 - 2 * p2; ++e) term *= d[2];
                total += term;
            }
    return total;
}

struct MaternKernel {
    double theta = 0.3;

    template <typename DerivedX, typename DerivedY>
    double operator()(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y) const {
        return matern52_eval(x, y, theta);
    }
};

// ---------------------------------------------------------------------------------------------
// Finite-rank kernels on a grid

struct EmpiricalKernel {
    Mat S;               // M_grid x N columns
    double scale = 1.0;  // 1/N

    static EmpiricalKernel from_snapshots(Mat snapshots) {
        EmpiricalKernel k;
        k.scale = snapshots.cols() > 0 ? 1.0 / static_cast<double>(snapshots.cols()) : 1.0;
        k.S = std::move(snapshots);
        return k;
    }
    Index grid_size() const { return S.rows(); }
};

struct TruncatedKernel {
    Mat modes;     // M_grid x r, orthonormal columns
    Vec energies;  // descending
};

double empirical_eval(const EmpiricalKernel& kernel, Index i, Index j);

// Off-grid evaluation through multilinear interpolation of each snapshot column.
double empirical_eval_at(const EmpiricalKernel& kernel, const CollocationSet& grid, const Vec& x, const Vec& y);

TruncatedKernel pod_truncate(const EmpiricalKernel& kernel, Index r);

using Kernel = std::variant<MaternKernel, EmpiricalKernel, TruncatedKernel>;

inline bool is_finite_rank(const Kernel& k) { return !std::holds_alternative<MaternKernel>(k); }

template <typename Scalar>
struct GramMatrixT {
    MatrixX<Scalar> entries;
    Scalar nugget = 0;

    Index size() const { return entries.rows(); }
    MatrixX<Scalar> regularized() const {
        MatrixX<Scalar> out = entries;
        out.diagonal().array() += nugget;
        return out;
    }
};
using GramMatrix = GramMatrixT<double>;

// Nugget convention: 1e-10 * mean diagonal for Matérn, 1e-8 * mean diagonal for finite-rank kernels.
double default_nugget(const Kernel& kernel, const Mat& theta);

// Dirac Gram K(X, X) + nugget I on the grid points.
GramMatrix assemble_gram(const Kernel& kernel, const CollocationSet& grid, double nugget);

// ---------------------------------------------------------------------------------------------
// Measurement functionals

struct DerivativeTerm {
    double coef = 1.0;
    MultiIndex order{0, 0, 0};
};

// One family of linear functionals, one per site. The analytic form (terms, scaled per site) is used by
// Matérn; the discrete form (rows = sites, cols = grid nodes) is applied to snapshot fields.
struct FunctionalFamily {
    std::string name;
    std::vector<Index> sites;
    Vec site_scale;
    std::vector<DerivativeTerm> terms;
    SpMat discrete;
};

// Measurement vector layout: the Dirac at every grid node first, then each family in turn.
struct MeasurementLayout {
    Index n_nodes = 0;
    std::vector<FunctionalFamily> families;

    Index size() const;
    Index offset(Index family) const;
    Index family_index(std::string_view name) const;
    std::vector<std::vector<Index>> family_sites() const;
    // stacked discrete operator [I; D_1; ...], size() x n_nodes
    SpMat discrete_operator() const;
};

MeasurementLayout dirac_layout(Index n_nodes);

// K(phi, phi) over the full measurement vector (no nugget).
Mat assemble_measurement_gram(const Kernel& kernel, const CollocationSet& grid, const MeasurementLayout& layout);

// F with K(phi, phi) = F F^T for finite-rank kernels. The first n_nodes rows are the nodal values.
Mat finite_rank_features(const Kernel& kernel, const MeasurementLayout& layout);

// ---------------------------------------------------------------------------------------------
// Gaussian-process forcing sampler (squared-exponential covariance)

class GaussianFieldSampler {
public:
    GaussianFieldSampler(const CollocationSet& grid, double sigma);
    Vec sample(std::uint64_t seed) const;
    double jitter() const { return jitter_; }

private:
    Mat L_;
    double jitter_ = 0.0;
};

Vec gp_sample_field(const CollocationSet& grid, double sigma, std::uint64_t seed);

}  // namespace krom
