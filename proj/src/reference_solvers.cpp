#include "krom/reference_solvers.hpp"

#include <Eigen/SparseLU>
#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <numbers>

namespace krom {

namespace {

// Square system: operator rows at interior nodes, identity rows at boundary nodes.
SpMat full_operator(const CollocationSet& grid, const Vec* k) {
    const auto interior = grid.interior_nodes();
    const auto bnd = grid.boundary_nodes();
    const SpMat op = k ? darcy_stencil(grid, *k, interior) : SpMat(-laplacian_stencil(grid, interior));
    std::vector<Triplet> t;
    for (Index r = 0; r < op.outerSize(); ++r)
        for (SpMat::InnerIterator it(op, r); it; ++it) t.emplace_back(interior[it.row()], it.col(), it.value());
    for (Index b : bnd) t.emplace_back(b, b, 1.0);
    SpMat A(grid.size(), grid.size());
    A.setFromTriplets(t.begin(), t.end());
    return A;
}

Vec residual_vector(const CollocationSet& grid, const SpMat& A, const Vec& u, const Vec& f, const Vec& g) {
    Vec r = A * u;
    for (Index i = 0; i < grid.size(); ++i) r[i] -= grid.boundary[i] ? g[i] : f[i] - u[i] * u[i] * u[i];
    return r;
}

Vec newton_stationary(const CollocationSet& grid, const Vec* k, const Vec& f, const Vec& g, double tol,
                      NewtonInfo* info) {
    if (!grid.is_tensor() || grid.dim() != 2) throw Error(ErrorKind::invalid_grid, "stationary solvers need a 2D tensor grid");
    for (Index n : grid.resolution)
        if (n < 8) throw Error(ErrorKind::invalid_grid, "stationary solvers need at least 8 points per axis");
    if (f.size() != grid.size() || g.size() != grid.size())
        throw Error(ErrorKind::invalid_parameter, "forcing and boundary data must be nodal fields");
    const SpMat A = full_operator(grid, k);
    Vec u = Vec::Zero(grid.size());
    for (Index i = 0; i < grid.size(); ++i)
        if (grid.boundary[i]) u[i] = g[i];
    Eigen::SparseLU<SpMat> lu;
    bool analyzed = false;
    for (int it = 0; it <= 50; ++it) {
        const Vec r = residual_vector(grid, A, u, f, g);
        const double rn = r.lpNorm<Eigen::Infinity>();
        if (!std::isfinite(rn)) throw Error(ErrorKind::blow_up, "Newton iterate became non-finite");
        if (rn <= tol) {
            if (info) *info = {it, rn};
            return u;
        }
        if (it == 50) break;
        Vec d(grid.size());
        for (Index i = 0; i < grid.size(); ++i) d[i] = grid.boundary[i] ? 0.0 : 3.0 * u[i] * u[i];
        SpMat J = A;
        J += SpMat(d.asDiagonal());
        J.makeCompressed();
        if (!analyzed) {
            lu.analyzePattern(J);
            analyzed = true;
        }
        lu.factorize(J);
        if (lu.info() != Eigen::Success) throw Error(ErrorKind::numeric, "Newton Jacobian factorization failed");
        u -= lu.solve(r);
        for (Index i = 0; i < grid.size(); ++i)
            if (grid.boundary[i]) u[i] = g[i];  // identity rows; drop solver rounding
    }
    throw Error(ErrorKind::nonconvergence, "Newton stagnated after 50 iterations");
}

}  // namespace

Vec solve_semilinear_elliptic(const CollocationSet& grid, const Vec& f, const Vec& g, double tol, NewtonInfo* info) {
    return newton_stationary(grid, nullptr, f, g, tol, info);
}

Vec solve_darcy(const CollocationSet& grid, const Vec& k, const Vec& f, const Vec& g, double tol, NewtonInfo* info) {
    if (k.size() != grid.size()) throw Error(ErrorKind::invalid_parameter, "coefficient field size mismatch");
    for (Index i = 0; i < k.size(); ++i)
        if (!(k[i] > 0)) throw Error(ErrorKind::invalid_parameter, "darcy coefficient must be positive");
    return newton_stationary(grid, &k, f, g, tol, info);
}

double stationary_residual(const CollocationSet& grid, const Vec* k, const Vec& u, const Vec& f, const Vec& g) {
    return residual_vector(grid, full_operator(grid, k), u, f, g).lpNorm<Eigen::Infinity>();
}

StepPlan plan_steps(double t_final, double dt_max, Index save_stride, double save_interval) {
    if (!(t_final > 0) || !(dt_max > 0)) throw Error(ErrorKind::invalid_parameter, "t_final and dt must be positive");
    StepPlan p;
    if (save_interval > 0) {
        const double q = t_final / save_interval;
        const auto nint = static_cast<Index>(std::llround(q));
        if (nint < 1 || std::abs(q - static_cast<double>(nint)) > 1e-9)
            throw Error(ErrorKind::invalid_parameter, "save interval must divide t_final");
        const auto per = static_cast<Index>(std::ceil(save_interval / dt_max * (1.0 - 1e-12)));
        p.stride = std::max<Index>(per, 1);
        p.steps = p.stride * nint;
        p.dt = t_final / static_cast<double>(p.steps);
    } else {
        p.steps = std::max<Index>(1, static_cast<Index>(std::ceil(t_final / dt_max * (1.0 - 1e-12))));
        p.dt = t_final / static_cast<double>(p.steps);
        p.stride = std::max<Index>(save_stride, 1);
    }
    return p;
}

// ---------------------------------------------------------------------------------------------
// Burgers

Vec cell_centers(Index cells) {
    const double h = 2.0 / static_cast<double>(cells);
    Vec x(cells);
    for (Index i = 0; i < cells; ++i) x[i] = -1.0 + (static_cast<double>(i) + 0.5) * h;
    return x;
}

namespace {

double minmod(double a, double b) {
    if (a * b <= 0.0) return 0.0;
    return std::abs(a) < std::abs(b) ? a : b;
}

// Face fluxes F_{i-1/2}, i = 0..n (n+1 faces) for the padded state with two ghosts per side.
void burgers_rhs(const Vec& u, double nu, double h, bool periodic, Vec& dudt, double& inflow) {
    const Index n = u.size();
    Vec p(n + 4);
    p.segment(2, n) = u;
    if (periodic) {
        p[0] = u[n - 2];
        p[1] = u[n - 1];
        p[n + 2] = u[0];
        p[n + 3] = u[1];
    } else {
        // odd reflection puts u = 0 on the boundary faces
        p[1] = -u[0];
        p[0] = -u[1];
        p[n + 2] = -u[n - 1];
        p[n + 3] = -u[n - 2];
    }
    Vec slope(n + 2);
    for (Index i = 1; i <= n + 2; ++i) slope[i - 1] = minmod(p[i] - p[i - 1], p[i + 1] - p[i]);
    Vec F(n + 1);
    for (Index f = 0; f <= n; ++f) {
        // face between padded cells f+1 and f+2
        const double uL = p[f + 1] + 0.5 * slope[f];
        const double uR = p[f + 2] - 0.5 * slope[f + 1];
        const double a = std::max(std::abs(uL), std::abs(uR));
        const double adv = 0.25 * (uL * uL + uR * uR) - 0.5 * a * (uR - uL);
        F[f] = adv - nu * (p[f + 2] - p[f + 1]) / h;
    }
    dudt.resize(n);
    for (Index i = 0; i < n; ++i) dudt[i] = -(F[i + 1] - F[i]) / h;
    inflow = F[0] - F[n];
}

}  // namespace

BurgersTrajectory solve_burgers(const Vec& u0, const BurgersOptions& opt) {
    if (!(opt.nu > 0)) throw Error(ErrorKind::invalid_parameter, "viscosity must be positive");
    if (opt.cells < 4 || u0.size() != opt.cells) throw Error(ErrorKind::invalid_parameter, "u0 must hold one value per cell");
    const double h = 2.0 / static_cast<double>(opt.cells);
    const double umax = std::max(u0.lpNorm<Eigen::Infinity>(), 1e-12);
    const double dt_stable = opt.cfl / (umax / h + 2.0 * opt.nu / (h * h));
    double dt_max = opt.dt;
    if (dt_max > dt_stable) dt_max = dt_stable;
    const StepPlan plan = plan_steps(opt.t_final, dt_max, opt.save_stride, opt.save_interval);

    BurgersTrajectory tr;
    tr.centers = cell_centers(opt.cells);
    tr.dt_effective = plan.dt;
    tr.steps = plan.steps;
    Vec u = u0;
    double inflow_total = 0.0;
    auto save = [&](double t) {
        tr.times.push_back(t);
        tr.fields.push_back(u);
        tr.mass.push_back(h * u.sum());
        tr.boundary_inflow.push_back(inflow_total);
    };
    save(0.0);
    Vec k1, k2;
    double in1 = 0.0, in2 = 0.0;
    for (Index s = 1; s <= plan.steps; ++s) {
        burgers_rhs(u, opt.nu, h, opt.periodic, k1, in1);
        const Vec ustar = u + plan.dt * k1;
        burgers_rhs(ustar, opt.nu, h, opt.periodic, k2, in2);
        u = 0.5 * (u + ustar + plan.dt * k2);
        inflow_total += 0.5 * plan.dt * (in1 + in2);
        if (!u.allFinite())
            throw Error(ErrorKind::blow_up, "Burgers solution blew up at t = " + std::to_string(s * plan.dt));
        if (s % plan.stride == 0 || s == plan.steps) save(static_cast<double>(s) * plan.dt);
    }
    return tr;
}

Vec cells_to_nodes(const Vec& cells, bool periodic, const Vec& x_nodes) {
    const Index n = cells.size();
    const double h = 2.0 / static_cast<double>(n);
    Vec out(x_nodes.size());
    for (Index q = 0; q < x_nodes.size(); ++q) {
        const double s = (x_nodes[q] + 1.0) / h - 0.5;  // fractional center index
        const auto i = static_cast<Index>(std::floor(s));
        const double t = s - static_cast<double>(i);
        double a, b;
        if (periodic) {
            a = cells[((i % n) + n) % n];
            b = cells[(((i + 1) % n) + n) % n];
        } else {
            // boundary values are zero; the half cell next to a wall interpolates towards it
            if (i < 0) {
                out[q] = cells[0] * std::max(0.0, (x_nodes[q] + 1.0) / (0.5 * h));
                continue;
            }
            if (i >= n - 1) {
                out[q] = cells[n - 1] * std::max(0.0, (1.0 - x_nodes[q]) / (0.5 * h));
                continue;
            }
            a = cells[i];
            b = cells[i + 1];
        }
        out[q] = (1.0 - t) * a + t * b;
    }
    return out;
}

Index steepest_gradient(const Vec& v) {
    Index best = 1;
    double g = -1.0;
    for (Index i = 1; i + 1 < v.size(); ++i) {
        const double d = std::abs(v[i + 1] - v[i - 1]);
        if (d > g) {
            g = d;
            best = i;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------------------------
// Allen–Cahn

TimeSeries solve_allen_cahn(const Vec& u0, double epsilon, const CollocationSet& grid, const ExplicitOptions& opt) {
    if (!(epsilon > 0)) throw Error(ErrorKind::invalid_parameter, "epsilon must be positive");
    if (u0.size() != grid.size()) throw Error(ErrorKind::invalid_parameter, "u0 does not match the grid");
    double hmin = grid.spacing(0);
    for (int a = 1; a < grid.dim(); ++a) hmin = std::min(hmin, grid.spacing(a));
    // diffusive bound, plus a cap for the explicit reaction term
    const double dt_stable = std::min(hmin * hmin / (4.0 * epsilon * epsilon), 0.1);
    double dt_max = opt.dt;
    if (dt_max > dt_stable) {
        warn("allen_cahn: dt reduced to the stability bound " + std::to_string(dt_stable));
        dt_max = dt_stable;
    }
    const StepPlan plan = plan_steps(opt.t_final, dt_max, opt.save_stride, opt.save_interval);
    const auto interior = grid.interior_nodes();
    const SpMat L = laplacian_stencil(grid, interior);
    const double e2 = epsilon * epsilon;

    TimeSeries tr;
    tr.dt_effective = plan.dt;
    tr.steps = plan.steps;
    Vec u = u0;
    tr.times.push_back(0.0);
    tr.fields.push_back(u);
    Vec lap;
    for (Index s = 1; s <= plan.steps; ++s) {
        lap = L * u;
        for (size_t r = 0; r < interior.size(); ++r) {
            const Index i = interior[r];
            const double ui = u[i];
            u[i] = ui + plan.dt * (e2 * lap[static_cast<Index>(r)] - (ui * ui * ui - ui));
        }
        if (!u.allFinite())
            throw Error(ErrorKind::blow_up, "Allen-Cahn solution blew up at t = " + std::to_string(s * plan.dt));
        if (s % plan.stride == 0 || s == plan.steps) {
            tr.times.push_back(static_cast<double>(s) * plan.dt);
            tr.fields.push_back(u);
        }
    }
    return tr;
}

// ---------------------------------------------------------------------------------------------
// Vorticity / streamfunction

namespace {

using CMat = Eigen::MatrixXcd;

void check_periodic_square(const CollocationSet& grid) {
    if (!grid.periodic || grid.dim() != 2 || grid.resolution[0] != grid.resolution[1])
        throw Error(ErrorKind::invalid_grid, "a periodic square grid is required");
}

CMat fft2(const Mat& a, bool inverse_transform, const CMat* c = nullptr) {
    Eigen::FFT<double> fft;
    const Index n0 = c ? c->rows() : a.rows(), n1 = c ? c->cols() : a.cols();
    CMat m = c ? *c : CMat(a.cast<std::complex<double>>());
    Eigen::VectorXcd in, out;
    for (Index j = 0; j < n1; ++j) {
        in = m.col(j);
        if (inverse_transform) fft.inv(out, in); else fft.fwd(out, in);
        m.col(j) = out;
    }
    for (Index i = 0; i < n0; ++i) {
        in = m.row(i).transpose();
        if (inverse_transform) fft.inv(out, in); else fft.fwd(out, in);
        m.row(i) = out.transpose();
    }
    return m;
}

double wavenumber(Index j, Index n, double length) {
    const Index s = j <= n / 2 ? j : j - n;
    return 2.0 * std::numbers::pi * static_cast<double>(s) / length;
}

}  // namespace

StreamSolution poisson_streamfunction(const Vec& omega, const CollocationSet& grid) {
    check_periodic_square(grid);
    const Index n = grid.resolution[0];
    if (omega.size() != n * n) throw Error(ErrorKind::invalid_parameter, "omega does not match the grid");
    Vec w = omega;
    const double mean = w.mean();
    if (std::abs(mean) > 1e-12 * std::max(1.0, w.lpNorm<Eigen::Infinity>())) {
        warn("poisson_streamfunction: nonzero-mean vorticity projected to zero mean");
    }
    w.array() -= mean;
    const Mat W = Eigen::Map<const Mat>(w.data(), n, n);
    CMat hat = fft2(W, false);
    const double hx = grid.spacing(0), hy = grid.spacing(1);
    const double Lx = grid.bounds(0, 1) - grid.bounds(0, 0), Ly = grid.bounds(1, 1) - grid.bounds(1, 0);
    for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < n; ++i) {
            if (i == 0 && j == 0) {
                hat(i, j) = 0.0;
                continue;
            }
            const double sx = std::sin(0.5 * wavenumber(i, n, Lx) * hx), sy = std::sin(0.5 * wavenumber(j, n, Ly) * hy);
            const double mu = 4.0 * sx * sx / (hx * hx) + 4.0 * sy * sy / (hy * hy);
            hat(i, j) /= mu;
        }
    const CMat back = fft2(Mat(), true, &hat);
    StreamSolution s;
    s.psi.resize(n * n);
    Eigen::Map<Mat>(s.psi.data(), n, n) = back.real();
    s.psi.array() -= s.psi.mean();
    std::vector<Index> all(static_cast<size_t>(n * n));
    for (Index i = 0; i < n * n; ++i) all[static_cast<size_t>(i)] = i;
    s.ux = derivative_stencil(grid, 1, 1, all) * s.psi;
    s.uy = -(derivative_stencil(grid, 0, 1, all) * s.psi);
    return s;
}

std::pair<Mat, Mat> biot_savart_matrices(const CollocationSet& grid) {
    check_periodic_square(grid);
    const Index m = grid.size();
    Mat Rx(m, m), Ry(m, m);
    // the map annihilates constants, so unit vectors minus their mean span the same action
    for (Index j = 0; j < m; ++j) {
        Vec e = Vec::Constant(m, -1.0 / static_cast<double>(m));
        e[j] += 1.0;
        const auto s = poisson_streamfunction(e, grid);
        Rx.col(j) = s.ux;
        Ry.col(j) = s.uy;
    }
    return {Rx, Ry};
}

Vec discrete_divergence(const Vec& ux, const Vec& uy, const CollocationSet& grid) {
    std::vector<Index> all(static_cast<size_t>(grid.size()));
    for (Index i = 0; i < grid.size(); ++i) all[static_cast<size_t>(i)] = i;
    return derivative_stencil(grid, 0, 1, all) * ux + derivative_stencil(grid, 1, 1, all) * uy;
}

TimeSeries solve_ns_vorticity(const Vec& omega0, double nu, const CollocationSet& grid, const ExplicitOptions& opt) {
    check_periodic_square(grid);
    if (!(nu > 0)) throw Error(ErrorKind::invalid_parameter, "viscosity must be positive");
    if (omega0.size() != grid.size()) throw Error(ErrorKind::invalid_parameter, "omega0 does not match the grid");
    Vec w = omega0;
    w.array() -= w.mean();
    std::vector<Index> all(static_cast<size_t>(grid.size()));
    for (Index i = 0; i < grid.size(); ++i) all[static_cast<size_t>(i)] = i;
    const SpMat Dx = derivative_stencil(grid, 0, 1, all), Dy = derivative_stencil(grid, 1, 1, all);
    const SpMat L = laplacian_stencil(grid, all);
    const double h = std::min(grid.spacing(0), grid.spacing(1));

    auto stable_dt = [&](const StreamSolution& s) {
        const double umax = s.ux.lpNorm<Eigen::Infinity>() + s.uy.lpNorm<Eigen::Infinity>();
        double dt = h * h / (4.0 * nu);
        if (umax > 0) dt = std::min({dt, 0.5 * h / umax, nu / (umax * umax)});
        return dt;
    };
    StreamSolution s = poisson_streamfunction(w, grid);
    double dt_max = opt.dt;
    const double bound = stable_dt(s);
    if (dt_max > bound) {
        warn("ns_vorticity: dt reduced to the stability bound " + std::to_string(bound));
        dt_max = bound;
    }
    const StepPlan plan = plan_steps(opt.t_final, dt_max, opt.save_stride, opt.save_interval);

    TimeSeries tr;
    tr.dt_effective = plan.dt;
    tr.steps = plan.steps;
    tr.times.push_back(0.0);
    tr.fields.push_back(w);
    for (Index n = 1; n <= plan.steps; ++n) {
        if (n > 1) s = poisson_streamfunction(w, grid);
        const Vec adv = s.ux.cwiseProduct(Dx * w) + s.uy.cwiseProduct(Dy * w);
        w += plan.dt * (nu * (L * w) - adv);
        if (!w.allFinite())
            throw Error(ErrorKind::blow_up, "vorticity blew up at t = " + std::to_string(n * plan.dt));
        if (n % plan.stride == 0 || n == plan.steps) {
            tr.times.push_back(static_cast<double>(n) * plan.dt);
            tr.fields.push_back(w);
        }
    }
    return tr;
}

}  // namespace krom
