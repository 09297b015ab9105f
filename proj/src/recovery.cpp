#include "krom/recovery.hpp"

#include <cmath>

namespace krom {

const ConstraintStencil& ConstraintAssembly::get(std::string_view name) const {
    for (const auto& s : stencils)
        if (s.name == name) return s;
    throw Error(ErrorKind::invalid_parameter, "no stencil named '" + std::string(name) + "'");
}

bool ConstraintAssembly::has(std::string_view name) const {
    for (const auto& s : stencils)
        if (s.name == name) return true;
    return false;
}

namespace {

// Neighbor of node p shifted by `step` along `axis`; -1 if it falls off a non-periodic grid.
Index neighbor(const CollocationSet& g, Index p, int axis, int step) {
    Index stride = 1;
    for (int a = 0; a < axis; ++a) stride *= g.resolution[a];
    const Index n = g.resolution[axis];
    const Index i = (p / stride) % n;
    Index j = i + step;
    if (g.periodic) {
        j = ((j % n) + n) % n;
    } else if (j < 0 || j >= n) {
        return -1;
    }
    return p + (j - i) * stride;
}

void require_tensor(const CollocationSet& g) {
    if (!g.is_tensor()) throw Error(ErrorKind::stencil, "stencils need a tensor grid");
}

Index must_neighbor(const CollocationSet& g, Index p, int axis, int step) {
    const Index q = neighbor(g, p, axis, step);
    if (q < 0) throw Error(ErrorKind::stencil, "node " + std::to_string(p) + " lacks a full stencil neighborhood");
    return q;
}

SpMat from_triplets(Index rows, Index cols, const std::vector<Triplet>& t) {
    SpMat m(rows, cols);
    m.setFromTriplets(t.begin(), t.end());
    return m;
}

}  // namespace

SpMat dirac_stencil(const CollocationSet& grid, const std::vector<Index>& sites) {
    std::vector<Triplet> t;
    for (size_t r = 0; r < sites.size(); ++r) t.emplace_back(static_cast<Index>(r), sites[r], 1.0);
    return from_triplets(static_cast<Index>(sites.size()), grid.size(), t);
}

SpMat derivative_stencil(const CollocationSet& grid, int axis, int order, const std::vector<Index>& sites) {
    require_tensor(grid);
    if (axis < 0 || axis >= grid.dim()) throw Error(ErrorKind::invalid_parameter, "stencil axis out of range");
    if (order != 1 && order != 2) throw Error(ErrorKind::invalid_parameter, "stencil order must be 1 or 2");
    const double h = grid.spacing(axis);
    std::vector<Triplet> t;
    for (size_t r = 0; r < sites.size(); ++r) {
        const Index p = sites[r];
        const Index lo = must_neighbor(grid, p, axis, -1), hi = must_neighbor(grid, p, axis, +1);
        const auto row = static_cast<Index>(r);
        if (order == 1) {
            t.emplace_back(row, hi, 0.5 / h);
            t.emplace_back(row, lo, -0.5 / h);
        } else {
            t.emplace_back(row, hi, 1.0 / (h * h));
            t.emplace_back(row, lo, 1.0 / (h * h));
            t.emplace_back(row, p, -2.0 / (h * h));
        }
    }
    return from_triplets(static_cast<Index>(sites.size()), grid.size(), t);
}

SpMat laplacian_stencil(const CollocationSet& grid, const std::vector<Index>& sites) {
    require_tensor(grid);
    SpMat L = derivative_stencil(grid, 0, 2, sites);
    for (int a = 1; a < grid.dim(); ++a) L += derivative_stencil(grid, a, 2, sites);
    return L;
}

SpMat darcy_stencil(const CollocationSet& grid, const Vec& k, const std::vector<Index>& sites) {
    require_tensor(grid);
    if (k.size() != grid.size()) throw Error(ErrorKind::invalid_parameter, "coefficient field size mismatch");
    std::vector<Triplet> t;
    for (size_t r = 0; r < sites.size(); ++r) {
        const Index p = sites[r];
        const auto row = static_cast<Index>(r);
        for (int a = 0; a < grid.dim(); ++a) {
            const double h2 = grid.spacing(a) * grid.spacing(a);
            for (int step : {-1, 1}) {
                const Index q = must_neighbor(grid, p, a, step);
                const double kf = 2.0 * k[p] * k[q] / (k[p] + k[q]);
                t.emplace_back(row, p, kf / h2);
                t.emplace_back(row, q, -kf / h2);
            }
        }
    }
    return from_triplets(static_cast<Index>(sites.size()), grid.size(), t);
}

Vec checkerboard_permeability(const CollocationSet& grid) {
    Vec k(grid.size());
    for (Index p = 0; p < grid.size(); ++p) {
        const long s = static_cast<long>(std::floor(8.0 * grid.points(p, 0))) +
                       static_cast<long>(std::floor(8.0 * grid.points(p, 1)));
        k[p] = (s % 2 == 0) ? 1.0 : 100.0;
    }
    return k;
}

ConstraintAssembly assemble_constraints(PdeKind kind, const CollocationSet& grid, const Vec* coefficient,
                                        const Vec& bc_values, const Vec& forcing) {
    require_tensor(grid);
    const auto interior = grid.interior_nodes();
    const auto bnd = grid.boundary_nodes();
    ConstraintAssembly out;
    auto add = [&](std::string name, const std::vector<Index>& sites, SpMat w) {
        out.stencils.push_back({std::move(name), sites, std::move(w)});
    };
    switch (kind) {
        case PdeKind::semilinear_elliptic:
            add("operator", interior, -laplacian_stencil(grid, interior));
            break;
        case PdeKind::darcy: {
            if (!coefficient) throw Error(ErrorKind::invalid_parameter, "darcy needs a coefficient field");
            for (Index i = 0; i < coefficient->size(); ++i)
                if (!((*coefficient)[i] > 0)) throw Error(ErrorKind::invalid_parameter, "darcy coefficient must be positive");
            add("operator", interior, darcy_stencil(grid, *coefficient, interior));
            break;
        }
        case PdeKind::burgers:
            add("dx", interior, derivative_stencil(grid, 0, 1, interior));
            add("dxx", interior, derivative_stencil(grid, 0, 2, interior));
            break;
        case PdeKind::allen_cahn:
            add("laplacian", interior, laplacian_stencil(grid, interior));
            break;
        case PdeKind::navier_stokes: {
            if (!grid.periodic) throw Error(ErrorKind::invalid_grid, "navier_stokes needs a periodic grid");
            add("dx", interior, derivative_stencil(grid, 0, 1, interior));
            add("dy", interior, derivative_stencil(grid, 1, 1, interior));
            add("laplacian", interior, laplacian_stencil(grid, interior));
            break;
        }
    }
    add("identity", interior, dirac_stencil(grid, interior));
    if (!bnd.empty()) add("boundary", bnd, dirac_stencil(grid, bnd));

    const auto ni = static_cast<Index>(interior.size()), nb = static_cast<Index>(bnd.size());
    out.rhs = Vec::Zero(ni + nb);
    if (forcing.size() == grid.size())
        for (Index r = 0; r < ni; ++r) out.rhs[r] = forcing[interior[r]];
    else if (forcing.size() != 0)
        throw Error(ErrorKind::invalid_parameter, "forcing must be a nodal field");
    if (bc_values.size() == grid.size())
        for (Index r = 0; r < nb; ++r) out.rhs[ni + r] = bc_values[bnd[r]];
    else if (bc_values.size() != 0)
        throw Error(ErrorKind::invalid_parameter, "boundary values must be a nodal field");
    return out;
}

MeasurementLayout measurement_layout(PdeKind kind, const CollocationSet& grid, const Vec* coefficient) {
    const ConstraintAssembly a = assemble_constraints(kind, grid, coefficient, Vec(), Vec());
    MeasurementLayout layout;
    layout.n_nodes = grid.size();
    const int d = grid.dim();
    auto lap_terms = [&](double c) {
        std::vector<DerivativeTerm> t;
        for (int ax = 0; ax < d; ++ax) {
            MultiIndex o{0, 0, 0};
            o[ax] = 2;
            t.push_back({c, o});
        }
        return t;
    };
    auto family = [&](const char* stencil, std::vector<DerivativeTerm> terms) {
        const auto& s = a.get(stencil);
        FunctionalFamily f;
        f.name = stencil;
        f.sites = s.sites;
        f.site_scale = Vec::Ones(static_cast<Index>(s.sites.size()));
        f.terms = std::move(terms);
        f.discrete = s.weights;
        return f;
    };
    switch (kind) {
        case PdeKind::semilinear_elliptic:
            layout.families.push_back(family("operator", lap_terms(-1.0)));
            break;
        case PdeKind::darcy: {
            auto f = family("operator", lap_terms(-1.0));
            for (size_t r = 0; r < f.sites.size(); ++r) f.site_scale[static_cast<Index>(r)] = (*coefficient)[f.sites[r]];
            layout.families.push_back(std::move(f));
            break;
        }
        case PdeKind::burgers:
            layout.families.push_back(family("dx", {{1.0, {1, 0, 0}}}));
            layout.families.push_back(family("dxx", {{1.0, {2, 0, 0}}}));
            break;
        case PdeKind::allen_cahn:
            layout.families.push_back(family("laplacian", lap_terms(1.0)));
            break;
        case PdeKind::navier_stokes:
            layout.families.push_back(family("dx", {{1.0, {1, 0, 0}}}));
            layout.families.push_back(family("dy", {{1.0, {0, 1, 0}}}));
            layout.families.push_back(family("laplacian", lap_terms(1.0)));
            break;
    }
    return layout;
}

// ---------------------------------------------------------------------------------------------

Vec ConstraintSystem::evaluate(const Vec& z) const {
    Vec g = linear * z;
    for (const auto& p : products) g.array() += p.weight.array() * (p.left * z).array() * (p.right * z).array();
    if (tau && nl_weight.size()) {
        const Vec s = nl_select * z;
        for (Index i = 0; i < g.size(); ++i)
            if (nl_weight[i] != 0.0) g[i] += nl_weight[i] * tau(s[i]);
    }
    return g;
}

SpMat ConstraintSystem::jacobian(const Vec& z) const {
    SpMat J = linear;
    for (const auto& p : products) {
        const Vec a = p.weight.cwiseProduct(p.right * z);
        const Vec b = p.weight.cwiseProduct(p.left * z);
        J += a.asDiagonal() * p.left;
        J += b.asDiagonal() * p.right;
    }
    if (dtau && nl_weight.size()) {
        const Vec s = nl_select * z;
        Vec w(s.size());
        for (Index i = 0; i < s.size(); ++i) w[i] = nl_weight[i] != 0.0 ? nl_weight[i] * dtau(s[i]) : 0.0;
        J += w.asDiagonal() * nl_select;
    }
    J.makeCompressed();
    return J;
}

ConstraintSystem stationary_system(const CollocationSet& grid, const MeasurementLayout& layout, bool boundary_rows) {
    const auto& op = layout.families.at(0);
    const Index off = layout.offset(0);
    const auto bnd = grid.boundary_nodes();
    const auto ni = static_cast<Index>(op.sites.size());
    const Index rows = ni + (boundary_rows ? static_cast<Index>(bnd.size()) : 0);
    std::vector<Triplet> lin, sel;
    for (Index k = 0; k < ni; ++k) {
        lin.emplace_back(k, off + k, 1.0);
        sel.emplace_back(k, op.sites[k], 1.0);
    }
    if (boundary_rows)
        for (size_t r = 0; r < bnd.size(); ++r) lin.emplace_back(ni + static_cast<Index>(r), bnd[r], 1.0);
    ConstraintSystem s;
    s.linear = from_triplets(rows, layout.size(), lin);
    s.nl_select = from_triplets(rows, layout.size(), sel);
    s.nl_weight = Vec::Zero(rows);
    s.nl_weight.head(ni).setOnes();
    s.tau = [](double u) { return u * u * u; };
    s.dtau = [](double u) { return 3.0 * u * u; };
    return s;
}

// ---------------------------------------------------------------------------------------------

CovarianceModel CovarianceModel::dense(Mat theta) {
    CovarianceModel c;
    c.theta_ = std::move(theta);
    return c;
}

CovarianceModel CovarianceModel::sparse(SparseFactor factor) {
    CovarianceModel c;
    c.factor_ = std::move(factor);
    return c;
}

Index CovarianceModel::size() const { return factor_ ? factor_->size() : theta_.rows(); }

Mat CovarianceModel::raw_apply(const Mat& X) const {
    if (factor_) return apply_covariance(*factor_, X);
    return theta_ * X;
}

void CovarianceModel::compress_to_range(const Mat& features, double rel_cut) {
    if (features.rows() != size()) throw Error(ErrorKind::invalid_parameter, "feature rows do not match covariance");
    Eigen::BDCSVD<Mat> svd(features, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vec& s = svd.singularValues();
    Index r = 0;
    while (r < s.size() && s[r] > rel_cut * s[0]) ++r;
    if (r == 0) {
        // zero library: the range is empty and every recovery returns zero
        F_ = features;
        W_ = Mat::Zero(features.rows(), 0);
        V_ = Mat::Zero(features.cols(), 0);
        sigma_ = Vec();
        G_ = Mat::Zero(features.cols(), 0);
        L_ = Mat::Zero(0, 0);
        compressed_ = true;
        return;
    }
    F_ = features;
    W_ = svd.matrixU().leftCols(r);
    V_ = svd.matrixV().leftCols(r);
    sigma_ = s.head(r);
    Mat C = W_.transpose() * raw_apply(W_);
    C = 0.5 * (C + C.transpose()).eval();
    G_ = V_ * sigma_.cwiseInverse().asDiagonal() * C;
    // square root of C through its eigendecomposition, tolerating rounding-level negative modes
    Eigen::SelfAdjointEigenSolver<Mat> eig(C);
    L_ = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    compressed_ = true;
}

Mat CovarianceModel::coefficients(const Mat& X) const {
    if (!compressed_) throw Error(ErrorKind::invalid_parameter, "coefficients need a compressed covariance");
    return G_ * (W_.transpose() * X);
}

Vec CovarianceModel::constrained_coefficients(const SpMat& J, const Vec& b, double lambda_rel) const {
    if (!compressed_) throw Error(ErrorKind::invalid_parameter, "constrained coefficients need a compressed covariance");
    if (J.cols() != size() || J.rows() != b.size()) throw Error(ErrorKind::invalid_parameter, "constraint shape mismatch");
    if (W_.cols() == 0) return Vec::Zero(F_.cols());
    // K~_c = (W L)(W L)^T, so J K~_c J^T + lambda I = R R^T + lambda I with R = J W L; solve through the SVD of R
    const Mat R = (J * W_) * L_;
    const double tr = R.squaredNorm();
    const double lambda = lambda_rel * (tr > 0 ? tr / static_cast<double>(J.rows()) : 1.0);
    Eigen::BDCSVD<Mat> svd(R, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vec& s = svd.singularValues();
    Vec filt(s.size());
    for (Index i = 0; i < s.size(); ++i) {
        const double d = s[i] * s[i] + lambda;
        filt[i] = d > 0 ? s[i] / d : 0.0;
    }
    const Vec w = svd.matrixV() * filt.cwiseProduct(svd.matrixU().transpose() * b);
    return V_ * sigma_.cwiseInverse().asDiagonal() * (L_ * w);
}

Vec CovarianceModel::project(const Vec& z) const {
    if (!compressed_) throw Error(ErrorKind::invalid_parameter, "projection needs a compressed covariance");
    if (W_.cols() == 0) return Vec::Zero(F_.cols());
    return V_ * sigma_.cwiseInverse().asDiagonal() * (W_.transpose() * z);
}

Mat CovarianceModel::apply(const Mat& X) const {
    if (compressed_) return F_ * coefficients(X);
    return raw_apply(X);
}

// ---------------------------------------------------------------------------------------------

namespace {

double residual_norm(const ConstraintSystem& sys, const Vec& z, const Vec& y) {
    const double r = (sys.evaluate(z) - y).norm();
    return std::isfinite(r) ? r : std::numeric_limits<double>::infinity();
}

}  // namespace

GNResult gauss_newton_solve(const RecoveryProblem& problem, const Vec& initial_guess) {
    if (!problem.covariance) throw Error(ErrorKind::invalid_parameter, "recovery problem has no covariance");
    const auto& cov = *problem.covariance;
    const auto& sys = problem.system;
    const auto& y = problem.rhs;
    const auto& cfg = problem.config;
    if (sys.cols() != cov.size() || initial_guess.size() != cov.size())
        throw Error(ErrorKind::invalid_parameter, "constraint system and covariance sizes differ");
    if (y.size() != sys.rows()) throw Error(ErrorKind::invalid_parameter, "rhs length differs from constraint rows");
    if (cfg.lambda_rel < 0) throw Error(ErrorKind::invalid_parameter, "inner nugget must be nonnegative");

    GNResult out;
    const bool comp = cov.compressed();
    if (comp) {
        out.beta = cov.project(initial_guess);
        out.z = cov.features() * out.beta;
    } else {
        out.z = initial_guess;
    }
    double res = residual_norm(sys, out.z, y);
    out.residuals.push_back(res);
    const double stop = cfg.tol * std::max(1.0, y.norm());
    int growth = 0;
    const Index m = sys.rows();

    for (int it = 0; it < cfg.max_iters; ++it) {
        if (res < stop) break;
        const SpMat J = sys.jacobian(out.z);
        const Vec b = y - sys.evaluate(out.z) + J * out.z;
        Vec z_full, beta_full;
        if (comp) {
            beta_full = cov.constrained_coefficients(J, b, cfg.lambda_rel);
            z_full = cov.features() * beta_full;
        } else {
            const Mat KJt = cov.apply(Mat(J.transpose()));
            Mat A = J * KJt;
            A = 0.5 * (A + A.transpose()).eval();
            const double tr = A.trace();
            // a failed factorization escalates the nugget x10 up to 1e-6 relative
            const double scale = tr > 0 ? tr / static_cast<double>(m) : 1.0;
            double rel = cfg.lambda_rel;
            Vec c;
            for (;;) {
                Mat Ar = A;
                Ar.diagonal().array() += rel * scale;
                Eigen::LLT<Mat> llt(Ar);
                if (llt.info() == Eigen::Success) {
                    c = llt.solve(b);
                    if (c.allFinite()) break;
                }
                const double next = rel > 0 ? rel * 10.0 : 1e-12;
                if (next > 1e-6 * (1.0 + 1e-9))
                    throw Error(ErrorKind::ill_conditioned, "inner Gauss-Newton system is not factorizable");
                rel = std::max(next, cfg.lambda_rel);
            }
            z_full = KJt * c;
        }
        if (!z_full.allFinite()) throw Error(ErrorKind::ill_conditioned, "inner Gauss-Newton solve produced non-finite values");

        double alpha = 1.0;
        double best_res = std::numeric_limits<double>::infinity();
        Vec best_z, best_beta;
        bool reduced = false;
        for (int h = 0; h <= cfg.max_halvings; ++h) {
            Vec zt, bt;
            if (comp) {
                bt = out.beta + alpha * (beta_full - out.beta);
                zt = cov.features() * bt;
            } else {
                zt = out.z + alpha * (z_full - out.z);
            }
            const double rt = residual_norm(sys, zt, y);
            if (rt < best_res) {
                best_res = rt;
                best_z = std::move(zt);
                best_beta = std::move(bt);
            }
            if (rt <= res * (1.0 + 1e-12)) {
                reduced = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!std::isfinite(best_res)) {
            out.residuals.push_back(best_res);
            throw DivergenceError("Gauss-Newton produced non-finite residuals at iteration " + std::to_string(it + 1),
                                  out.residuals);
        }
        out.z = std::move(best_z);
        if (comp) out.beta = std::move(best_beta);
        res = best_res;
        out.residuals.push_back(res);
        ++out.iterations;
        growth = reduced ? 0 : growth + 1;
        if (growth >= 2)
            throw DivergenceError("Gauss-Newton residual grew in two successive iterations", out.residuals);
    }
    return out;
}

Vec nodal_values(const GNResult& result, Index n_nodes) { return result.z.head(n_nodes); }

Vec evaluate_solution(const Vec& v, const CollocationSet& grid, const Mat& query) {
    if (v.size() != grid.size()) throw Error(ErrorKind::invalid_parameter, "nodal vector does not match grid");
    Vec out(query.rows());
    for (Index q = 0; q < query.rows(); ++q) {
        double s = 0.0;
        for (auto [node, w] : interpolation_weights(grid, query.row(q).transpose())) s += w * v[node];
        out[q] = s;
    }
    return out;
}

// ---------------------------------------------------------------------------------------------

GNResult interpolate_measurements(const CovarianceModel& cov, const MeasurementLayout& layout, const Vec& u0,
                                  const GNConfig& config) {
    std::vector<Triplet> t;
    for (Index i = 0; i < layout.n_nodes; ++i) t.emplace_back(i, i, 1.0);
    RecoveryProblem p;
    p.covariance = &cov;
    p.system.linear = from_triplets(layout.n_nodes, layout.size(), t);
    p.rhs = u0;
    p.config = config;
    p.config.max_iters = 1;
    return gauss_newton_solve(p, Vec::Zero(layout.size()));
}

namespace {

// (u1 - u0)/dt + (u1 u1_x + u0 u0_x)/2 = nu (u1_xx + u0_xx)/2 on interior sites
StepSystem burgers_step(const MarchSetup& s, const Vec& z, double dt) {
    const auto& L = s.layout;
    const Index fdx = L.family_index("dx"), fdxx = L.family_index("dxx");
    const auto& sites = L.families[fdx].sites;
    const Index odx = L.offset(fdx), odxx = L.offset(fdxx);
    const auto bnd = s.grid->boundary_nodes();
    const auto ni = static_cast<Index>(sites.size());
    const Index rows = ni + (s.boundary_rows ? static_cast<Index>(bnd.size()) : 0);
    const double adv = s.advection ? 1.0 : 0.0;
    std::vector<Triplet> lin, left, right;
    StepSystem out;
    out.rhs = Vec::Zero(rows);
    for (Index k = 0; k < ni; ++k) {
        const Index i = sites[k];
        lin.emplace_back(k, i, 1.0);
        lin.emplace_back(k, odxx + k, -0.5 * dt * s.nu);
        left.emplace_back(k, i, 1.0);
        right.emplace_back(k, odx + k, 1.0);
        out.rhs[k] = z[i] - 0.5 * dt * (adv * z[i] * z[odx + k] - s.nu * z[odxx + k]);
    }
    if (s.boundary_rows)
        for (size_t r = 0; r < bnd.size(); ++r) lin.emplace_back(ni + static_cast<Index>(r), bnd[r], 1.0);
    out.sys.linear = from_triplets(rows, L.size(), lin);
    if (s.advection)
        out.sys.products.push_back(
            {from_triplets(rows, L.size(), left), from_triplets(rows, L.size(), right), Vec::Constant(rows, 0.5 * dt)});
    return out;
}

// (u1 - u0)/dt = eps^2 (Lap u1 + Lap u0)/2 - (f(u1) + f(u0))/2, f(u) = u^3 - u
StepSystem allen_cahn_step(const MarchSetup& s, const Vec& z, double dt) {
    const auto& L = s.layout;
    const Index fl = L.family_index("laplacian");
    const auto& sites = L.families[fl].sites;
    const Index ol = L.offset(fl);
    const auto bnd = s.grid->boundary_nodes();
    const auto ni = static_cast<Index>(sites.size());
    const Index rows = ni + (s.boundary_rows ? static_cast<Index>(bnd.size()) : 0);
    const double e2 = s.epsilon * s.epsilon;
    auto f = [](double u) { return u * u * u - u; };
    std::vector<Triplet> lin, sel;
    StepSystem out;
    out.rhs = Vec::Zero(rows);
    for (Index k = 0; k < ni; ++k) {
        const Index i = sites[k];
        lin.emplace_back(k, i, 1.0);
        lin.emplace_back(k, ol + k, -0.5 * dt * e2);
        sel.emplace_back(k, i, 1.0);
        out.rhs[k] = z[i] + 0.5 * dt * e2 * z[ol + k] - 0.5 * dt * f(z[i]);
    }
    if (s.boundary_rows)
        for (size_t r = 0; r < bnd.size(); ++r) lin.emplace_back(ni + static_cast<Index>(r), bnd[r], 1.0);
    out.sys.linear = from_triplets(rows, L.size(), lin);
    out.sys.nl_select = from_triplets(rows, L.size(), sel);
    out.sys.nl_weight = Vec::Zero(rows);
    out.sys.nl_weight.head(ni).setConstant(0.5 * dt);
    out.sys.tau = f;
    out.sys.dtau = [](double u) { return 3.0 * u * u - 1.0; };
    return out;
}

SpMat embed_dense(const Mat& R, Index rows, Index cols) {
    std::vector<Triplet> t;
    t.reserve(static_cast<size_t>(R.size()));
    for (Index j = 0; j < R.cols(); ++j)
        for (Index i = 0; i < R.rows(); ++i)
            if (R(i, j) != 0.0) t.emplace_back(i, j, R(i, j));
    return from_triplets(rows, cols, t);
}

// w1 + dt/2 (u1.grad w1 - nu Lap w1) = w0 - dt/2 (u0.grad w0 - nu Lap w0), u = R w
StepSystem vorticity_step(const MarchSetup& s, const Vec& z, double dt) {
    const auto& L = s.layout;
    const Index fx = L.family_index("dx"), fy = L.family_index("dy"), fl = L.family_index("laplacian");
    const Index ox = L.offset(fx), oy = L.offset(fy), ol = L.offset(fl);
    const auto& sites = L.families[fx].sites;
    const auto n = static_cast<Index>(sites.size());
    if (s.biot_x.rows() != L.n_nodes || s.biot_y.rows() != L.n_nodes)
        throw Error(ErrorKind::invalid_parameter, "navier_stokes march needs Biot-Savart maps");
    const Vec w = z.head(L.n_nodes);
    const Vec ux = s.biot_x * w, uy = s.biot_y * w;
    std::vector<Triplet> lin, gx, gy, rsite;
    StepSystem out;
    out.rhs = Vec::Zero(n);
    for (Index k = 0; k < n; ++k) {
        const Index i = sites[k];
        lin.emplace_back(k, i, 1.0);
        lin.emplace_back(k, ol + k, -0.5 * dt * s.nu);
        gx.emplace_back(k, ox + k, 1.0);
        gy.emplace_back(k, oy + k, 1.0);
        rsite.emplace_back(k, i, 1.0);
        out.rhs[k] = z[i] - 0.5 * dt * (ux[i] * z[ox + k] + uy[i] * z[oy + k] - s.nu * z[ol + k]);
    }
    const SpMat sel = from_triplets(n, L.n_nodes, rsite);
    const SpMat Rx = embed_dense(Mat(sel * s.biot_x), n, L.size());
    const SpMat Ry = embed_dense(Mat(sel * s.biot_y), n, L.size());
    out.sys.linear = from_triplets(n, L.size(), lin);
    out.sys.products.push_back({Rx, from_triplets(n, L.size(), gx), Vec::Constant(n, 0.5 * dt)});
    out.sys.products.push_back({Ry, from_triplets(n, L.size(), gy), Vec::Constant(n, 0.5 * dt)});
    return out;
}

}  // namespace

StepSystem crank_nicolson_step(const MarchSetup& setup, const Vec& z, double dt) {
    if (!setup.grid) throw Error(ErrorKind::invalid_parameter, "march setup has no grid");
    if (z.size() != setup.layout.size()) throw Error(ErrorKind::invalid_parameter, "state does not match the layout");
    switch (setup.kind) {
        case PdeKind::burgers: return burgers_step(setup, z, dt);
        case PdeKind::allen_cahn: return allen_cahn_step(setup, z, dt);
        case PdeKind::navier_stokes: return vorticity_step(setup, z, dt);
        default: throw Error(ErrorKind::invalid_parameter, "crank_nicolson_march needs a time-dependent kind");
    }
}

MarchResult crank_nicolson_march(const MarchSetup& setup, const Vec& u0, double dt, double t_final,
                                 const GNConfig& config) {
    if (!setup.grid || !setup.covariance) throw Error(ErrorKind::invalid_parameter, "march setup is incomplete");
    if (!(dt > 0) || !(t_final > 0)) throw Error(ErrorKind::invalid_parameter, "dt and t_final must be positive");
    const auto steps = static_cast<Index>(std::llround(t_final / dt));
    if (steps < 1 || std::abs(static_cast<double>(steps) * dt - t_final) > 1e-12 * std::max(1.0, t_final))
        throw Error(ErrorKind::invalid_parameter, "dt must divide t_final");
    if (u0.size() != setup.grid->size()) throw Error(ErrorKind::invalid_parameter, "u0 does not match the grid");
    const Index M = setup.grid->size();

    MarchResult out;
    GNResult state;
    if (setup.initial_measurements.size()) {
        if (setup.initial_measurements.size() != setup.layout.size())
            throw Error(ErrorKind::invalid_parameter, "initial measurements do not match the layout");
        state.z = setup.initial_measurements;
    } else {
        state = interpolate_measurements(*setup.covariance, setup.layout, u0, config);
    }
    out.trajectory.times.push_back(0.0);
    out.trajectory.fields.push_back(u0);
    for (Index n = 1; n <= steps; ++n) {
        StepSystem st = crank_nicolson_step(setup, state.z, dt);
        RecoveryProblem p;
        p.covariance = setup.covariance;
        p.system = std::move(st.sys);
        p.rhs = std::move(st.rhs);
        p.config = config;
        try {
            state = gauss_newton_solve(p, state.z);
        } catch (const DivergenceError& e) {
            out.residuals.push_back(e.history());
            out.error = "step " + std::to_string(n) + ": " + e.what();
            break;
        }
        out.residuals.push_back(state.residuals);
        out.trajectory.times.push_back(static_cast<double>(n) * dt);
        out.trajectory.fields.push_back(nodal_values(state, M));
    }
    out.final_measurements = state.z;
    return out;
}

}  // namespace krom
