#include "krom/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace krom {

double CollocationSet::spacing(int axis) const {
    if (!is_tensor()) throw Error(ErrorKind::invalid_grid, "spacing requested on a scattered point set");
    const double len = bounds(axis, 1) - bounds(axis, 0);
    const Index n = resolution[axis];
    return periodic ? len / static_cast<double>(n) : len / static_cast<double>(n - 1);
}

std::vector<Index> CollocationSet::interior_nodes() const {
    std::vector<Index> out;
    for (Index i = 0; i < size(); ++i)
        if (!boundary[i]) out.push_back(i);
    return out;
}

std::vector<Index> CollocationSet::boundary_nodes() const {
    std::vector<Index> out;
    for (Index i = 0; i < size(); ++i)
        if (boundary[i]) out.push_back(i);
    return out;
}

Mat unit_box(int dim, double lo, double hi) {
    Mat b(dim, 2);
    b.col(0).setConstant(lo);
    b.col(1).setConstant(hi);
    return b;
}

namespace {

void check_bounds(const Mat& bounds) {
    if (bounds.cols() != 2 || bounds.rows() < 1 || bounds.rows() > 3)
        throw Error(ErrorKind::invalid_grid, "domain bounds must be d x 2 with 1 <= d <= 3");
    for (Index a = 0; a < bounds.rows(); ++a)
        if (!(bounds(a, 1) > bounds(a, 0)))
            throw Error(ErrorKind::invalid_grid, "empty interval on axis " + std::to_string(a));
}

CollocationSet tensor_grid(const Mat& bounds, const std::vector<Index>& res, bool periodic) {
    check_bounds(bounds);
    const int d = static_cast<int>(bounds.rows());
    if (static_cast<int>(res.size()) != d)
        throw Error(ErrorKind::invalid_grid, "resolution count does not match dimension");
    for (Index n : res)
        if (n < 2) throw Error(ErrorKind::invalid_grid, "resolution must be at least 2 per axis");

    CollocationSet g;
    g.bounds = bounds;
    g.resolution = res;
    g.periodic = periodic;
    Index m = 1;
    for (Index n : res) m *= n;
    g.points.resize(m, d);
    g.boundary.assign(static_cast<size_t>(m), 0);

    std::vector<double> h(d);
    for (int a = 0; a < d; ++a) {
        const double len = bounds(a, 1) - bounds(a, 0);
        h[a] = periodic ? len / res[a] : len / (res[a] - 1);
    }
    for (Index p = 0; p < m; ++p) {
        Index rem = p;
        bool on_face = false;
        for (int a = 0; a < d; ++a) {
            const Index i = rem % res[a];
            rem /= res[a];
            // hit the upper face exactly rather than through lo + (n-1)*h
            g.points(p, a) = (!periodic && i == res[a] - 1) ? bounds(a, 1) : bounds(a, 0) + i * h[a];
            if (!periodic && (i == 0 || i == res[a] - 1)) on_face = true;
        }
        g.boundary[p] = on_face ? 1 : 0;
    }
    return g;
}

}  // namespace

CollocationSet make_grid(const Mat& bounds, const std::vector<Index>& resolution) {
    return tensor_grid(bounds, resolution, false);
}

CollocationSet make_periodic_grid(const Mat& bounds, const std::vector<Index>& resolution) {
    return tensor_grid(bounds, resolution, true);
}

CollocationSet make_point_set(const Mat& points, const Mat& bounds) {
    check_bounds(bounds);
    if (points.cols() != bounds.rows()) throw Error(ErrorKind::invalid_grid, "point dimension mismatch");
    CollocationSet g;
    g.points = points;
    g.bounds = bounds;
    g.boundary.assign(static_cast<size_t>(points.rows()), 0);
    for (Index p = 0; p < points.rows(); ++p) {
        for (Index a = 0; a < points.cols(); ++a) {
            const double x = points(p, a);
            if (x < bounds(a, 0) || x > bounds(a, 1))
                throw Error(ErrorKind::domain, "point " + std::to_string(p) + " outside domain bounds");
            if (x == bounds(a, 0) || x == bounds(a, 1)) g.boundary[p] = 1;
        }
    }
    for (Index p = 0; p < points.rows(); ++p)
        for (Index q = 0; q < p; ++q)
            if (points.row(p) == points.row(q))
                throw Error(ErrorKind::invalid_grid, "duplicate points " + std::to_string(q) + " and " + std::to_string(p));
    return g;
}

Index SparsityPattern::nnz() const {
    Index n = 0;
    for (const auto& c : columns) n += static_cast<Index>(c.size());
    return n;
}

Index centroid_index(const CollocationSet& points) {
    if (points.size() == 0) throw Error(ErrorKind::invalid_grid, "empty point set");
    const Eigen::RowVectorXd c = 0.5 * (points.bounds.col(0) + points.bounds.col(1)).transpose();
    Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < points.size(); ++i) {
        const double d = (points.points.row(i) - c).squaredNorm();
        if (d < best_d - 1e-12 * std::max(best_d, 1e-300) || i == 0) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

MaximinOrdering maximin_order(const CollocationSet& points, std::optional<Index> seed_index) {
    const Index m = points.size();
    if (m == 0) throw Error(ErrorKind::invalid_grid, "maximin ordering of an empty point set");
    const Index seed = seed_index ? *seed_index : centroid_index(points);
    if (seed < 0 || seed >= m) throw Error(ErrorKind::invalid_parameter, "seed index out of range");

    MaximinOrdering ord;
    ord.seed_index = seed;
    ord.perm.reserve(m);
    ord.lengthscales.resize(m);

    const Mat& x = points.points;
    Vec dist = Vec::Constant(m, std::numeric_limits<double>::infinity());
    std::vector<char> taken(static_cast<size_t>(m), 0);

    Index next = seed;
    double next_d = MaximinOrdering::sentinel;
    for (Index q = 0; q < m; ++q) {
        ord.perm.push_back(next);
        ord.lengthscales[q] = next_d;
        taken[next] = 1;
        const auto xn = x.row(next);
        for (Index i = 0; i < m; ++i) {
            if (taken[i]) continue;
            const double d = (x.row(i) - xn).norm();
            if (d < dist[i]) dist[i] = d;
        }
        // ties (up to rounding) keep the lowest index
        next = -1;
        next_d = -1.0;
        for (Index i = 0; i < m; ++i) {
            if (!taken[i] && (next < 0 || dist[i] > next_d * (1.0 + 1e-12))) {
                next_d = dist[i];
                next = i;
            }
        }
    }
    ord.site = ord.perm;
    return ord;
}

MaximinOrdering append_measurements(const MaximinOrdering& points_order,
                                    const std::vector<std::vector<Index>>& family_sites) {
    const Index m = points_order.size();
    std::vector<Index> rank(static_cast<size_t>(m));
    for (Index q = 0; q < m; ++q) rank[points_order.perm[q]] = q;

    MaximinOrdering ord = points_order;
    const double tail = points_order.lengthscales[m - 1];
    Index total = m;
    for (const auto& sites : family_sites) total += static_cast<Index>(sites.size());
    ord.perm.reserve(total);
    ord.site.reserve(total);
    ord.lengthscales.conservativeResize(total);

    Index offset = m;
    Index q = m;
    for (const auto& sites : family_sites) {
        std::vector<Index> local(sites.size());
        std::iota(local.begin(), local.end(), Index{0});
        std::stable_sort(local.begin(), local.end(),
                         [&](Index a, Index b) { return rank[sites[a]] < rank[sites[b]]; });
        for (Index k : local) {
            ord.perm.push_back(offset + k);
            ord.site.push_back(sites[k]);
            ord.lengthscales[q++] = tail;
        }
        offset += static_cast<Index>(sites.size());
    }
    return ord;
}

SparsityPattern sparsity_pattern(const MaximinOrdering& ordering, const CollocationSet& points, double rho) {
    if (!(rho > 0.0)) throw Error(ErrorKind::invalid_parameter, "sparsity radius rho must be positive");
    const Index n = ordering.size();
    SparsityPattern pat;
    pat.rho = rho;
    pat.columns.resize(static_cast<size_t>(n));
    const Mat& x = points.points;
    for (Index j = 0; j < n; ++j) {
        auto& col = pat.columns[j];
        const double lj = ordering.lengthscales[j];
        if (lj == MaximinOrdering::sentinel) {
            col.push_back(j);
            continue;
        }
        const double radius = rho * lj;
        const auto xj = x.row(ordering.site[j]);
        for (Index i = 0; i < j; ++i)
            if ((x.row(ordering.site[i]) - xj).norm() <= radius) col.push_back(i);
        col.push_back(j);
    }
    return pat;
}

SparsityPattern full_pattern(Index n) {
    SparsityPattern pat;
    pat.rho = std::numeric_limits<double>::infinity();
    pat.columns.resize(static_cast<size_t>(n));
    for (Index j = 0; j < n; ++j) {
        pat.columns[j].resize(static_cast<size_t>(j + 1));
        std::iota(pat.columns[j].begin(), pat.columns[j].end(), Index{0});
    }
    return pat;
}

double fill_distance(const CollocationSet& points, const std::vector<Index>& probe_resolution) {
    // Approximate sup-inf: only as fine as the probe grid. Probe spacing should be well below the
    // expected fill distance for the estimate to mean anything.
    const CollocationSet probe = make_grid(points.bounds, probe_resolution);
    double worst = 0.0;
    for (Index p = 0; p < probe.size(); ++p) {
        double best = std::numeric_limits<double>::infinity();
        for (Index i = 0; i < points.size(); ++i)
            best = std::min(best, (points.points.row(i) - probe.points.row(p)).squaredNorm());
        worst = std::max(worst, best);
    }
    return std::sqrt(worst);
}

std::vector<std::pair<Index, double>> interpolation_weights(const CollocationSet& grid, const Vec& x) {
    if (!grid.is_tensor()) throw Error(ErrorKind::invalid_grid, "interpolation needs a tensor grid");
    const int d = grid.dim();
    if (x.size() != d) throw Error(ErrorKind::domain, "query dimension mismatch");
    std::array<Index, 3> lo{0, 0, 0};
    std::array<double, 3> t{0, 0, 0};
    for (int a = 0; a < d; ++a) {
        const double b0 = grid.bounds(a, 0), b1 = grid.bounds(a, 1);
        const Index n = grid.resolution[a];
        const double h = grid.spacing(a);
        double xi = x[a];
        if (grid.periodic) {
            const double len = b1 - b0;
            xi = b0 + std::fmod(std::fmod(xi - b0, len) + len, len);
        } else if (xi < b0 - 1e-12 * (b1 - b0) || xi > b1 + 1e-12 * (b1 - b0)) {
            throw Error(ErrorKind::domain, "query point outside domain bounds");
        }
        double s = (xi - b0) / h;
        Index i = static_cast<Index>(std::floor(s));
        const Index top = grid.periodic ? n - 1 : n - 2;
        i = std::clamp<Index>(i, 0, top);
        lo[a] = i;
        t[a] = std::clamp(s - static_cast<double>(i), 0.0, 1.0);
    }
    std::vector<std::pair<Index, double>> out;
    for (int corner = 0; corner < (1 << d); ++corner) {
        double w = 1.0;
        Index node = 0, stride = 1;
        for (int a = 0; a < d; ++a) {
            const int bit = (corner >> a) & 1;
            w *= bit ? t[a] : 1.0 - t[a];
            Index i = lo[a] + bit;
            if (grid.periodic) i %= grid.resolution[a];
            node += i * stride;
            stride *= grid.resolution[a];
        }
        if (w != 0.0) out.emplace_back(node, w);
    }
    return out;
}


}  // namespace krom
