#pragma once

#include "krom/types.hpp"

#include <limits>
#include <optional>

namespace krom {

// Points are stored one per row. Tensor grids carry their per-axis resolution;
// node index = i0 + n0*(i1 + n1*i2), axis 0 fastest.
struct CollocationSet {
    Mat points;                   // M x d
    Mat bounds;                   // d x 2, columns lo / hi
    std::vector<char> boundary;   // 1 if the point is on a face
    std::vector<Index> resolution;
    bool periodic = false;

    Index size() const { return points.rows(); }
    int dim() const { return static_cast<int>(points.cols()); }
    bool is_tensor() const { return !resolution.empty(); }
    double spacing(int axis) const;
    Index node(Index i0, Index i1 = 0) const { return i0 + resolution[0] * i1; }
    std::vector<Index> interior_nodes() const;
    std::vector<Index> boundary_nodes() const;
};

// Tensor-product equispaced grid including boundary points.
CollocationSet make_grid(const Mat& bounds, const std::vector<Index>& resolution);
// Periodic grid: n points per axis at spacing L/n, the upper face is omitted and nothing is boundary.
CollocationSet make_periodic_grid(const Mat& bounds, const std::vector<Index>& resolution);
// Scattered point set; boundary flags are set for points lying on a face of bounds.
CollocationSet make_point_set(const Mat& points, const Mat& bounds);

Mat unit_box(int dim, double lo = 0.0, double hi = 1.0);

struct MaximinOrdering {
    std::vector<Index> perm;    // ordered position -> measurement index
    Vec lengthscales;           // l_q per ordered position
    std::vector<Index> site;    // ordered position -> point index carrying the measurement
    Index seed_index = 0;

    Index size() const { return static_cast<Index>(perm.size()); }
    static constexpr double sentinel = std::numeric_limits<double>::max();
};

struct SparsityPattern {
    std::vector<std::vector<Index>> columns;  // sorted ordered positions, j last
    double rho = 0.0;

    Index size() const { return static_cast<Index>(columns.size()); }
    Index nnz() const;
};

Index centroid_index(const CollocationSet& points);

// Greedy farthest-point ordering. Ties go to the lowest index, the default seed is the point
// nearest the centroid of the domain.
MaximinOrdering maximin_order(const CollocationSet& points, std::optional<Index> seed_index = std::nullopt);

// Appends derivative measurements after the Dirac block. family_sites[f] lists the point of each
// measurement of family f; measurement indices continue after the M Diracs family by family.
// Within a family, measurements follow the maximin rank of their point, each with lengthscale l_M.
MaximinOrdering append_measurements(const MaximinOrdering& points_order,
                                    const std::vector<std::vector<Index>>& family_sites);

SparsityPattern sparsity_pattern(const MaximinOrdering& ordering, const CollocationSet& points, double rho);

SparsityPattern full_pattern(Index n);

// Multilinear interpolation weights (node, weight) of a point on a tensor grid. Periodic grids wrap.
std::vector<std::pair<Index, double>> interpolation_weights(const CollocationSet& grid, const Vec& x);

double fill_distance(const CollocationSet& points, const std::vector<Index>& probe_resolution);

}  // namespace krom
