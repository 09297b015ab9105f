#include "krom/kernels.hpp"
#include "krom/random_fields.hpp"

#include <algorithm>
#include <cmath>

namespace krom {

double empirical_eval(const EmpiricalKernel& kernel, Index i, Index j) {
    if (i < 0 || j < 0 || i >= kernel.S.rows() || j >= kernel.S.rows())
        throw Error(ErrorKind::invalid_parameter, "empirical kernel index out of range");
    return kernel.scale * kernel.S.row(i).dot(kernel.S.row(j));
}


double empirical_eval_at(const EmpiricalKernel& kernel, const CollocationSet& grid, const Vec& x, const Vec& y) {
    const auto sx = interpolation_weights(grid, x);
    const auto sy = interpolation_weights(grid, y);
    Eigen::RowVectorXd ux = Eigen::RowVectorXd::Zero(kernel.S.cols());
    Eigen::RowVectorXd uy = Eigen::RowVectorXd::Zero(kernel.S.cols());
    for (auto [i, w] : sx) ux += w * kernel.S.row(i);
    for (auto [i, w] : sy) uy += w * kernel.S.row(i);
    return kernel.scale * ux.dot(uy);
}

TruncatedKernel pod_truncate(const EmpiricalKernel& kernel, Index r) {
    if (r < 1) throw Error(ErrorKind::invalid_parameter, "truncation rank must be positive");
    const Mat A = kernel.S * std::sqrt(kernel.scale);
    Eigen::BDCSVD<Mat> svd(A, Eigen::ComputeThinU);
    const Vec sig2 = svd.singularValues().array().square();
    Index rank = 0;
    for (Index i = 0; i < sig2.size(); ++i)
        if (sig2[i] >= 1e-14 * sig2[0] && sig2[i] > 0.0) ++rank;
    if (r > rank) {
        warn("pod_truncate: requested rank " + std::to_string(r) + " exceeds numerical rank " +
             std::to_string(rank) + ", clamped");
        r = rank;
    }
    TruncatedKernel t;
    t.modes = svd.matrixU().leftCols(r);
    t.energies = sig2.head(r);
    return t;
}

double default_nugget(const Kernel& kernel, const Mat& theta) {
    const double mean_diag = theta.rows() > 0 ? theta.diagonal().mean() : 0.0;
    return (is_finite_rank(kernel) ? 1e-8 : 1e-10) * mean_diag;
}

namespace {

void check_finite(const Mat& m) {
    for (Index j = 0; j < m.cols(); ++j)
        for (Index i = 0; i < m.rows(); ++i)
            if (!std::isfinite(m(i, j)))
                throw Error(ErrorKind::numeric, "non-finite kernel value at pair (" + std::to_string(i) + ", " +
                                                    std::to_string(j) + ")");
}

}  // namespace

GramMatrix assemble_gram(const Kernel& kernel, const CollocationSet& grid, double nugget) {
    if (grid.size() == 0) throw Error(ErrorKind::invalid_grid, "Gram assembly on an empty grid");
    if (nugget < 0) throw Error(ErrorKind::invalid_parameter, "nugget must be nonnegative");
    GramMatrix g;
    g.nugget = nugget;
    const Index m = grid.size();
    if (const auto* mk = std::get_if<MaternKernel>(&kernel)) {
        if (!(mk->theta > 0)) throw Error(ErrorKind::invalid_parameter, "Matérn lengthscale theta must be positive");
        g.entries.resize(m, m);
        for (Index j = 0; j < m; ++j) {
            g.entries(j, j) = 1.0;
            for (Index i = 0; i < j; ++i) {
                const double v = matern52((grid.points.row(i) - grid.points.row(j)).norm(), mk->theta);
                g.entries(i, j) = v;
                g.entries(j, i) = v;
            }
        }
    } else if (const auto* ek = std::get_if<EmpiricalKernel>(&kernel)) {
        if (ek->S.rows() != m) throw Error(ErrorKind::invalid_parameter, "snapshot rows do not match grid size");
        g.entries = ek->scale * ek->S * ek->S.transpose();
    } else {
        const auto& tk = std::get<TruncatedKernel>(kernel);
        if (tk.modes.rows() != m) throw Error(ErrorKind::invalid_parameter, "mode rows do not match grid size");
        g.entries = tk.modes * tk.energies.asDiagonal() * tk.modes.transpose();
    }
    check_finite(g.entries);
    return g;
}

// ---------------------------------------------------------------------------------------------

Index MeasurementLayout::size() const {
    Index n = n_nodes;
    for (const auto& f : families) n += static_cast<Index>(f.sites.size());
    return n;
}

Index MeasurementLayout::offset(Index family) const {
    Index n = n_nodes;
    for (Index f = 0; f < family; ++f) n += static_cast<Index>(families[f].sites.size());
    return n;
}

Index MeasurementLayout::family_index(std::string_view name) const {
    for (size_t f = 0; f < families.size(); ++f)
        if (families[f].name == name) return static_cast<Index>(f);
    throw Error(ErrorKind::invalid_parameter, "no functional family named '" + std::string(name) + "'");
}

std::vector<std::vector<Index>> MeasurementLayout::family_sites() const {
    std::vector<std::vector<Index>> out;
    for (const auto& f : families) out.push_back(f.sites);
    return out;
}

SpMat MeasurementLayout::discrete_operator() const {
    std::vector<Triplet> trip;
    for (Index i = 0; i < n_nodes; ++i) trip.emplace_back(i, i, 1.0);
    Index row = n_nodes;
    for (const auto& f : families) {
        for (Index k = 0; k < f.discrete.outerSize(); ++k)
            for (SpMat::InnerIterator it(f.discrete, k); it; ++it) trip.emplace_back(row + it.row(), it.col(), it.value());
        row += static_cast<Index>(f.sites.size());
    }
    SpMat D(size(), n_nodes);
    D.setFromTriplets(trip.begin(), trip.end());
    return D;
}

MeasurementLayout dirac_layout(Index n_nodes) {
    MeasurementLayout l;
    l.n_nodes = n_nodes;
    return l;
}

namespace {

struct Measurement {
    Index site;
    double scale;
    const std::vector<DerivativeTerm>* terms;
};

std::vector<Measurement> flatten(const MeasurementLayout& layout) {
    static const std::vector<DerivativeTerm> dirac{DerivativeTerm{1.0, {0, 0, 0}}};
    std::vector<Measurement> out;
    out.reserve(static_cast<size_t>(layout.size()));
    for (Index i = 0; i < layout.n_nodes; ++i) out.push_back({i, 1.0, &dirac});
    for (const auto& f : layout.families)
        for (size_t k = 0; k < f.sites.size(); ++k)
            out.push_back({f.sites[k], f.site_scale.size() ? f.site_scale[static_cast<Index>(k)] : 1.0, &f.terms});
    return out;
}

}  // namespace

Mat assemble_measurement_gram(const Kernel& kernel, const CollocationSet& grid, const MeasurementLayout& layout) {
    if (is_finite_rank(kernel)) {
        const Mat F = finite_rank_features(kernel, layout);
        Mat G = F * F.transpose();
        check_finite(G);
        return G;
    }
    const double theta = std::get<MaternKernel>(kernel).theta;
    if (!(theta > 0)) throw Error(ErrorKind::invalid_parameter, "Matérn lengthscale theta must be positive");
    const auto ms = flatten(layout);
    const Index n = static_cast<Index>(ms.size());
    const int d = grid.dim();
    Mat G(n, n);
    double off[3] = {0, 0, 0};
    for (Index j = 0; j < n; ++j) {
        for (Index i = 0; i <= j; ++i) {
            for (int a = 0; a < d; ++a) off[a] = grid.points(ms[i].site, a) - grid.points(ms[j].site, a);
            double v = 0.0;
            for (const auto& ta : *ms[i].terms)
                for (const auto& tb : *ms[j].terms) {
                    const MultiIndex ab{ta.order[0] + tb.order[0], ta.order[1] + tb.order[1], ta.order[2] + tb.order[2]};
                    const double sign = (order_of(tb.order) % 2) ? -1.0 : 1.0;
                    v += ta.coef * tb.coef * sign * matern52_partial(ab, off, d, theta);
                }
            v *= ms[i].scale * ms[j].scale;
            G(i, j) = v;
            G(j, i) = v;
        }
    }
    check_finite(G);
    return G;
}

Mat finite_rank_features(const Kernel& kernel, const MeasurementLayout& layout) {
    Mat base;
    if (const auto* ek = std::get_if<EmpiricalKernel>(&kernel)) {
        base = ek->S * std::sqrt(ek->scale);
    } else if (const auto* tk = std::get_if<TruncatedKernel>(&kernel)) {
        base = tk->modes * tk->energies.cwiseSqrt().asDiagonal();
    } else {
        throw Error(ErrorKind::invalid_parameter, "Matérn kernel has no finite-rank features");
    }
    if (base.rows() != layout.n_nodes) throw Error(ErrorKind::invalid_parameter, "kernel grid does not match layout");
    Mat F(layout.size(), base.cols());
    F.topRows(layout.n_nodes) = base;
    Index row = layout.n_nodes;
    for (const auto& f : layout.families) {
        const Index k = static_cast<Index>(f.sites.size());
        F.middleRows(row, k) = f.discrete * base;
        row += k;
    }
    return F;
}

// ---------------------------------------------------------------------------------------------

GaussianFieldSampler::GaussianFieldSampler(const CollocationSet& grid, double sigma) {
    if (!(sigma > 0)) throw Error(ErrorKind::invalid_parameter, "GP lengthscale sigma must be positive");
    const Index m = grid.size();
    Mat C(m, m);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (Index j = 0; j < m; ++j)
        for (Index i = 0; i < m; ++i) C(i, j) = std::exp(-(grid.points.row(i) - grid.points.row(j)).squaredNorm() * inv);
    for (double jit = 1e-12; jit <= 1e-6 * (1 + 1e-9); jit *= 10.0) {
        Mat Cj = C;
        Cj.diagonal().array() += jit;
        Eigen::LLT<Mat> llt(Cj);
        if (llt.info() == Eigen::Success) {
            L_ = llt.matrixL();
            jitter_ = jit;
            return;
        }
    }
    throw Error(ErrorKind::numeric, "squared-exponential covariance not factorizable with jitter up to 1e-6");
}

Vec GaussianFieldSampler::sample(std::uint64_t seed) const {
    Rng rng(seed, 0x6770);
    Vec xi(L_.rows());
    for (Index i = 0; i < xi.size(); ++i) xi[i] = rng.normal();
    return L_.triangularView<Eigen::Lower>() * xi;
}

Vec gp_sample_field(const CollocationSet& grid, double sigma, std::uint64_t seed) {
    return GaussianFieldSampler(grid, sigma).sample(seed);
}

}  // namespace krom
