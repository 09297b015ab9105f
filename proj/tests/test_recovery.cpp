#include "doctest.h"
#include "krom/recovery.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace krom;

namespace {

constexpr double pi = std::numbers::pi;

Vec nodal(const CollocationSet& g, const std::function<double(const Vec&)>& f) {
    Vec v(g.size());
    for (Index i = 0; i < g.size(); ++i) v[i] = f(g.points.row(i).transpose());
    return v;
}

Vec pick(const Vec& v, const std::vector<Index>& sites) {
    Vec out(static_cast<Index>(sites.size()));
    for (size_t k = 0; k < sites.size(); ++k) out[static_cast<Index>(k)] = v[sites[k]];
    return out;
}

SpMat random_sparse(Index rows, Index cols, std::mt19937& gen) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<Triplet> t;
    for (Index i = 0; i < rows; ++i)
        for (int k = 0; k < 3; ++k) t.emplace_back(i, static_cast<Index>(gen() % static_cast<unsigned>(cols)), u(gen));
    SpMat m(rows, cols);
    m.setFromTriplets(t.begin(), t.end());
    return m;
}

SpMat select_rows(Index rows, Index cols, const std::vector<std::pair<Index, Index>>& rc) {
    std::vector<Triplet> t;
    for (auto [r, c] : rc) t.emplace_back(r, c, 1.0);
    SpMat m(rows, cols);
    m.setFromTriplets(t.begin(), t.end());
    return m;
}

Mat matern_measurement_cov(const CollocationSet& g, const MeasurementLayout& layout, double theta) {
    Mat G = assemble_measurement_gram(MaternKernel{theta}, g, layout);
    G.diagonal().array() += 1e-10 * G.diagonal().mean();
    return G;
}

MaximinOrdering identity_ordering(Index n) {
    MaximinOrdering o;
    o.perm.resize(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i) o.perm[static_cast<size_t>(i)] = i;
    o.site = o.perm;
    o.lengthscales = Vec::Ones(n);
    return o;
}

}  // namespace

TEST_CASE("stencils reproduce derivatives of low-order polynomials") {
    const auto g = make_grid(unit_box(2), {9, 7});
    const auto in = g.interior_nodes();
    const Vec x2 = nodal(g, [](const Vec& p) { return p[0] * p[0]; });
    const Vec one = Vec::Ones(g.size());
    const SpMat lap = laplacian_stencil(g, in);
    CHECK(((-lap) * x2 - Vec::Constant(lap.rows(), -2.0)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((lap * one).cwiseAbs().maxCoeff() < 1e-10);
    const SpMat dx = derivative_stencil(g, 0, 1, in), dyy = derivative_stencil(g, 1, 2, in);
    CHECK((dx * x2 - 2.0 * pick(nodal(g, [](const Vec& p) { return p[0]; }), in)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((dyy * x2).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((dx * one).cwiseAbs().maxCoeff() < 1e-10);
    const Vec y2 = nodal(g, [](const Vec& p) { return p[1] * p[1]; });
    CHECK((dyy * y2 - Vec::Constant(dyy.rows(), 2.0)).cwiseAbs().maxCoeff() < 1e-10);

    // k = 1 reduces the Darcy operator to -Lap; constants are in its kernel for any k
    const SpMat d1 = darcy_stencil(g, one, in);
    CHECK((Mat(d1) - Mat(-lap)).cwiseAbs().maxCoeff() <= 1e-12 * Mat(lap).cwiseAbs().maxCoeff());
    const Vec k = checkerboard_permeability(g);
    CHECK((darcy_stencil(g, k, in) * one).cwiseAbs().maxCoeff() < 1e-9);

    const SpMat id = dirac_stencil(g, in);
    CHECK((id * x2 - pick(x2, in)).norm() == 0.0);
}

TEST_CASE("5-point Laplacian at h = 0.25 is exact on x^2") {
    const auto g = make_grid(unit_box(2), {5, 5});
    const auto in = g.interior_nodes();
    const Vec x2 = nodal(g, [](const Vec& p) { return p[0] * p[0]; });
    const Vec r = -(laplacian_stencil(g, in) * x2);
    REQUIRE(r.size() == 9);
    for (Index i = 0; i < 9; ++i) CHECK(r[i] == doctest::Approx(-2.0).epsilon(1e-13));
    const Vec one = Vec::Ones(25);
    CHECK((Mat(darcy_stencil(g, one, in)) + Mat(laplacian_stencil(g, in))).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("periodic stencils wrap around") {
    const auto g = make_periodic_grid(unit_box(2), {32, 32});
    std::vector<Index> all(static_cast<size_t>(g.size()));
    for (Index i = 0; i < g.size(); ++i) all[static_cast<size_t>(i)] = i;
    const Vec s = nodal(g, [](const Vec& p) { return std::sin(2 * pi * p[0]); });
    const Vec c = nodal(g, [](const Vec& p) { return 2 * pi * std::cos(2 * pi * p[0]); });
    const Vec d = derivative_stencil(g, 0, 1, all) * s;
    // central difference: exact symbol sin(2 pi h)/h
    const double h = 1.0 / 32.0;
    CHECK((d - c * (std::sin(2 * pi * h) / (2 * pi * h))).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((derivative_stencil(g, 1, 1, all) * s).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(std::abs((laplacian_stencil(g, all) * Vec::Ones(g.size())).sum()) < 1e-9);
}

TEST_CASE("checkerboard permeability takes the two values by cell parity") {
    Mat pts(3, 2);
    pts << 0.01, 0.01, 0.13, 0.01, 0.13, 0.13;
    const auto g = make_point_set(pts, unit_box(2));
    const Vec k = checkerboard_permeability(g);
    CHECK(k[0] == doctest::Approx(1.0));
    CHECK(k[1] == doctest::Approx(100.0));
    CHECK(k[2] == doctest::Approx(1.0));
}

TEST_CASE("constraint assembly: rows, rhs and errors") {
    const auto g = make_grid(unit_box(2), {6, 6});
    const Vec f = Vec::Constant(g.size(), 3.0), bc = Vec::Constant(g.size(), -1.0);
    const auto a = assemble_constraints(PdeKind::semilinear_elliptic, g, nullptr, bc, f);
    CHECK(a.has("operator"));
    CHECK(a.has("identity"));
    CHECK(a.has("boundary"));
    CHECK_FALSE(a.has("dx"));
    CHECK(a.rhs.size() == 36);
    CHECK(a.rhs.head(16).isApproxToConstant(3.0));
    CHECK(a.rhs.tail(20).isApproxToConstant(-1.0));
    CHECK_THROWS_AS(assemble_constraints(PdeKind::darcy, g, nullptr, bc, f), Error);
    const Vec bad = Vec::Zero(g.size());
    CHECK_THROWS_AS(assemble_constraints(PdeKind::darcy, g, &bad, bc, f), Error);
    CHECK_THROWS_AS(assemble_constraints(PdeKind::navier_stokes, g, nullptr, Vec(), Vec()), Error);
    CHECK_THROWS_AS(assemble_constraints(PdeKind::semilinear_elliptic, g, nullptr, Vec::Zero(5), f), Error);

    const auto p = make_periodic_grid(unit_box(2), {4, 4});
    const auto n = assemble_constraints(PdeKind::navier_stokes, p, nullptr, Vec(), Vec());
    CHECK_FALSE(n.has("boundary"));
    for (const char* s : {"dx", "dy", "laplacian", "identity"}) CHECK(n.get(s).sites.size() == 16);
    CHECK_THROWS_AS(n.get("operator"), Error);
}

TEST_CASE("measurement layouts per kind") {
    const auto g1 = make_grid(unit_box(1), {10});
    const auto lb = measurement_layout(PdeKind::burgers, g1);
    CHECK(lb.families.size() == 2);
    CHECK(lb.size() == 10 + 8 + 8);
    CHECK(lb.offset(1) == 18);
    const auto g2 = make_grid(unit_box(2), {5, 5});
    const Vec k = checkerboard_permeability(g2);
    const auto ld = measurement_layout(PdeKind::darcy, g2, &k);
    CHECK(ld.size() == 25 + 9);
    for (size_t r = 0; r < ld.families[0].sites.size(); ++r)
        CHECK(ld.families[0].site_scale[static_cast<Index>(r)] == k[ld.families[0].sites[r]]);
    const auto la = measurement_layout(PdeKind::allen_cahn, g2);
    CHECK(la.families[0].name == "laplacian");
    const auto ln = measurement_layout(PdeKind::navier_stokes, make_periodic_grid(unit_box(2), {4, 4}));
    CHECK(ln.size() == 16 * 4);
}

TEST_CASE("constraint Jacobians match finite differences") {
    std::mt19937 gen(11);
    const Index rows = 9, cols = 14;
    ConstraintSystem s;
    s.linear = random_sparse(rows, cols, gen);
    s.products.push_back({random_sparse(rows, cols, gen), random_sparse(rows, cols, gen), Vec::LinSpaced(rows, 0.1, 1.0)});
    s.products.push_back({random_sparse(rows, cols, gen), random_sparse(rows, cols, gen), Vec::Constant(rows, -0.3)});
    s.nl_select = random_sparse(rows, cols, gen);
    s.nl_weight = Vec::LinSpaced(rows, -1.0, 1.0);
    s.nl_weight[2] = 0.0;
    s.tau = [](double u) { return u * u * u - u; };
    s.dtau = [](double u) { return 3 * u * u - 1; };
    std::normal_distribution<double> nd;
    Vec z(cols);
    for (Index i = 0; i < cols; ++i) z[i] = nd(gen);
    const Mat J = Mat(s.jacobian(z));
    const double h = 1e-6;
    for (Index c = 0; c < cols; ++c) {
        Vec zp = z, zm = z;
        zp[c] += h;
        zm[c] -= h;
        const Vec fd = (s.evaluate(zp) - s.evaluate(zm)) / (2 * h);
        CHECK((J.col(c) - fd).cwiseAbs().maxCoeff() < 1e-6);
    }

    // stationary system
    const auto g = make_grid(unit_box(2), {6, 6});
    const auto layout = measurement_layout(PdeKind::semilinear_elliptic, g);
    const auto st = stationary_system(g, layout, true);
    CHECK(st.rows() == 36);
    Vec w(layout.size());
    for (Index i = 0; i < w.size(); ++i) w[i] = nd(gen);
    const Mat Js = Mat(st.jacobian(w));
    for (Index c = 0; c < w.size(); ++c) {
        Vec zp = w, zm = w;
        zp[c] += h;
        zm[c] -= h;
        CHECK((Js.col(c) - (st.evaluate(zp) - st.evaluate(zm)) / (2 * h)).cwiseAbs().maxCoeff() < 1e-6);
    }
    CHECK(stationary_system(g, layout, false).rows() == 16);
}

TEST_CASE("Gauss-Newton: affine constraints converge in one iteration") {
    std::mt19937 gen(3);
    const Index n = 12;
    Mat K = Mat::Random(n, n);
    K = K * K.transpose() + Mat::Identity(n, n);
    const auto cov = CovarianceModel::dense(K);
    RecoveryProblem p;
    p.covariance = &cov;
    p.system.linear = random_sparse(5, n, gen);
    p.rhs = Vec::LinSpaced(5, 1.0, 2.0);
    const auto r = gauss_newton_solve(p, Vec::Zero(n));
    CHECK(r.iterations == 1);
    CHECK(r.residuals.back() < 1e-10);
    // minimum-norm: K^{-1} z lies in range(J^T)
    const Mat Jt = Mat(p.system.linear).transpose();
    const Vec c = Jt.colPivHouseholderQr().solve(K.ldlt().solve(r.z));
    CHECK((Jt * c - K.ldlt().solve(r.z)).norm() <= 1e-8 * r.z.norm());
}

TEST_CASE("Gauss-Newton: scalar cubic v^3 = 8") {
    const auto cov = CovarianceModel::dense(Mat::Identity(1, 1));
    RecoveryProblem p;
    p.covariance = &cov;
    p.system.linear = SpMat(1, 1);
    p.system.nl_select = select_rows(1, 1, {{0, 0}});
    p.system.nl_weight = Vec::Ones(1);
    p.system.tau = [](double u) { return u * u * u; };
    p.system.dtau = [](double u) { return 3 * u * u; };
    p.rhs = Vec::Constant(1, 8.0);
    p.config.max_iters = 6;
    const auto r = gauss_newton_solve(p, Vec::Constant(1, 1.0));
    CHECK(r.z[0] == doctest::Approx(2.0).epsilon(1e-8));
    CHECK(r.iterations <= 6);
    for (size_t i = 1; i < r.residuals.size(); ++i) CHECK(r.residuals[i] <= r.residuals[i - 1] * (1 + 1e-12));
}

TEST_CASE("Gauss-Newton: two successive residual growths raise divergence with the history") {
    const auto cov = CovarianceModel::dense(Mat::Identity(1, 1));
    RecoveryProblem p;
    p.covariance = &cov;
    p.system.linear = SpMat(1, 1);
    p.system.nl_select = select_rows(1, 1, {{0, 0}});
    p.system.nl_weight = Vec::Ones(1);
    p.system.tau = [](double u) { return u * u * u; };
    p.system.dtau = [](double u) { return -3 * u * u; };  // wrong sign: every step goes uphill
    p.rhs = Vec::Constant(1, 8.0);
    p.config.max_iters = 5;
    try {
        gauss_newton_solve(p, Vec::Constant(1, 1.0));
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK(e.kind() == ErrorKind::divergence);
        CHECK(e.history().size() == 3);
        CHECK(e.history()[1] > e.history()[0]);
    }
}

TEST_CASE("Gauss-Newton: input validation") {
    const auto cov = CovarianceModel::dense(Mat::Identity(3, 3));
    RecoveryProblem p;
    CHECK_THROWS_AS(gauss_newton_solve(p, Vec::Zero(3)), Error);
    p.covariance = &cov;
    p.system.linear = SpMat(2, 3);
    p.rhs = Vec::Zero(3);
    CHECK_THROWS_AS(gauss_newton_solve(p, Vec::Zero(3)), Error);
    p.rhs = Vec::Zero(2);
    CHECK_THROWS_AS(gauss_newton_solve(p, Vec::Zero(4)), Error);
    p.config.lambda_rel = -1;
    CHECK_THROWS_AS(gauss_newton_solve(p, Vec::Zero(3)), Error);
}

TEST_CASE("semilinear elliptic 16^2 with dense Matérn reaches 1e-6 relative residual in 3 iterations") {
    const auto g = make_grid(unit_box(2), {16, 16});
    const auto layout = measurement_layout(PdeKind::semilinear_elliptic, g);
    const auto cov = CovarianceModel::dense(matern_measurement_cov(g, layout, 0.3));
    const Vec u = nodal(g, [](const Vec& p) {
        return 0.5 * std::sin(pi * p[0]) * std::sin(pi * p[1]) + std::sin(2 * pi * p[0]) * std::sin(2 * pi * p[1]);
    });
    const Vec lap = nodal(g, [](const Vec& p) {
        return -pi * pi * std::sin(pi * p[0]) * std::sin(pi * p[1]) -
               8 * pi * pi * std::sin(2 * pi * p[0]) * std::sin(2 * pi * p[1]);
    });
    const Vec f = -lap + u.array().cube().matrix();
    const auto a = assemble_constraints(PdeKind::semilinear_elliptic, g, nullptr, Vec::Zero(g.size()), f);
    RecoveryProblem p;
    p.covariance = &cov;
    p.system = stationary_system(g, layout, true);
    p.rhs = a.rhs;
    const auto r = gauss_newton_solve(p, Vec::Zero(layout.size()));
    CHECK(r.iterations <= 3);
    CHECK(r.residuals.back() <= 1e-6 * p.rhs.norm());
    const Vec v = nodal_values(r, g.size());
    for (Index b : g.boundary_nodes()) CHECK(std::abs(v[b]) < 1e-6);
}

TEST_CASE("elliptic recovery error shrinks under refinement") {
    const double theta = 1.0;
    auto error_at = [&](Index n) {
        const auto g = make_grid(unit_box(2), {n, n});
        const auto layout = measurement_layout(PdeKind::semilinear_elliptic, g);
        const auto cov = CovarianceModel::dense(matern_measurement_cov(g, layout, theta));
        const Vec u = nodal(g, [](const Vec& p) { return std::sin(pi * p[0]) * std::sin(pi * p[1]); });
        const Vec f = 2 * pi * pi * u + u.array().cube().matrix();
        RecoveryProblem p;
        p.covariance = &cov;
        p.system = stationary_system(g, layout, true);
        p.rhs = assemble_constraints(PdeKind::semilinear_elliptic, g, nullptr, Vec::Zero(g.size()), f).rhs;
        const Vec v = nodal_values(gauss_newton_solve(p, Vec::Zero(layout.size())), g.size());
        return (v - u).norm() / u.norm();
    };
    const double e12 = error_at(12), e20 = error_at(20);
    CHECK(e20 < 0.02);
    CHECK(e20 < 0.5 * e12);
}

TEST_CASE("full-pattern sparse covariance is transparent to Gauss-Newton") {
    const auto g = make_grid(unit_box(2), {8, 8});
    const auto layout = measurement_layout(PdeKind::semilinear_elliptic, g);
    const Mat K = matern_measurement_cov(g, layout, 0.3);
    const auto dense = CovarianceModel::dense(K);
    GramMatrix gram;
    gram.entries = K;
    const auto o = identity_ordering(K.rows());
    const auto sparse = CovarianceModel::sparse(kl_sparse_factor(gram, full_pattern(K.rows()), o));
    CHECK(sparse.is_sparse());
    const Vec v = Vec::LinSpaced(K.rows(), 0, 1).array().sin();
    CHECK((sparse.apply(v) - K * v).norm() <= 1e-6 * (K * v).norm());

    const Vec f = Vec::Constant(g.size(), 1.0);
    const auto a = assemble_constraints(PdeKind::semilinear_elliptic, g, nullptr, Vec::Zero(g.size()), f);
    RecoveryProblem p;
    p.system = stationary_system(g, layout, true);
    p.rhs = a.rhs;
    p.covariance = &dense;
    const auto rd = gauss_newton_solve(p, Vec::Zero(layout.size()));
    p.covariance = &sparse;
    const auto rs = gauss_newton_solve(p, Vec::Zero(layout.size()));
    const Vec ud = nodal_values(rd, g.size()), us = nodal_values(rs, g.size());
    CHECK((ud - us).norm() <= 1e-5 * ud.norm());
}

TEST_CASE("compressed covariance: range restriction and constrained coefficients") {
    std::mt19937 gen(5);
    std::normal_distribution<double> nd;
    const Index n = 20, r = 4;
    Mat F(n, r);
    for (Index j = 0; j < r; ++j)
        for (Index i = 0; i < n; ++i) F(i, j) = nd(gen);
    auto cov = CovarianceModel::dense(F * F.transpose());
    cov.compress_to_range(F);
    CHECK(cov.compressed());
    CHECK(cov.range_rank() == r);
    const Vec beta = Vec::LinSpaced(r, -1, 1);
    CHECK((cov.project(F * beta) - beta).norm() < 1e-10);
    const Mat X = Mat::Random(n, 3);
    CHECK((cov.apply(X) - F * F.transpose() * X).norm() < 1e-9 * X.norm() * F.squaredNorm());
    // constrained solve hits the constraint on the feature span
    const SpMat J = random_sparse(3, n, gen);
    const Vec b = J * (F * beta);
    const Vec bc = cov.constrained_coefficients(J, b, 1e-14);
    CHECK((J * (F * bc) - b).norm() <= 1e-8 * b.norm());

    auto zero = CovarianceModel::dense(Mat::Zero(n, n));
    zero.compress_to_range(Mat::Zero(n, 2));
    CHECK(zero.range_rank() == 0);
    CHECK(zero.constrained_coefficients(J, b, 1e-12).norm() == 0.0);
    CHECK_THROWS_AS(CovarianceModel::dense(Mat::Identity(3, 3)).project(Vec::Zero(3)), Error);
}

TEST_CASE("Crank-Nicolson heat step matches a dense KKT oracle") {
    const auto g = make_grid(unit_box(1), {33});
    const auto layout = measurement_layout(PdeKind::burgers, g);
    const Mat K = matern_measurement_cov(g, layout, 0.3);
    const auto cov = CovarianceModel::dense(K);
    const Vec u0 = nodal(g, [](const Vec& p) { return std::sin(pi * p[0]); });
    const double nu = 0.1, dt = 0.01;
    MarchSetup s;
    s.kind = PdeKind::burgers;
    s.grid = &g;
    s.covariance = &cov;
    s.layout = layout;
    s.nu = nu;
    s.advection = false;
    GNConfig cfg;
    cfg.max_iters = 2;
    const auto m = crank_nicolson_march(s, u0, dt, dt, cfg);
    REQUIRE_FALSE(m.error);
    REQUIRE(m.trajectory.fields.size() == 2);

    // oracle: interpolate u0, then the min-norm measurement vector satisfying the CN rows
    const Index M = g.size(), N = layout.size();
    const auto in = g.interior_nodes(), bnd = g.boundary_nodes();
    const auto ni = static_cast<Index>(in.size());
    const Index odxx = layout.offset(1);
    Mat P = Mat::Zero(M, N);
    P.leftCols(M).setIdentity();
    const Eigen::CompleteOrthogonalDecomposition<Mat> cod0(P * K * P.transpose());
    const Vec z0 = K * P.transpose() * cod0.solve(u0);
    Mat J = Mat::Zero(ni + 2, N);
    Vec y(ni + 2);
    for (Index k = 0; k < ni; ++k) {
        J(k, in[k]) = 1.0;
        J(k, odxx + k) = -0.5 * dt * nu;
        y[k] = z0[in[k]] + 0.5 * dt * nu * z0[odxx + k];
    }
    for (size_t r = 0; r < bnd.size(); ++r) {
        J(ni + static_cast<Index>(r), bnd[r]) = 1.0;
        y[ni + static_cast<Index>(r)] = 0.0;
    }
    const Eigen::CompleteOrthogonalDecomposition<Mat> cod(J * K * J.transpose());
    const Vec z1 = K * J.transpose() * cod.solve(y);
    const Vec u1 = z1.head(M);
    CHECK((m.trajectory.fields[1] - u1).norm() <= 1e-8 * u1.norm());

    // and it tracks the exact heat decay over a longer run
    const auto longer = crank_nicolson_march(s, u0, dt, 0.2, cfg);
    REQUIRE_FALSE(longer.error);
    const Vec exact = std::exp(-nu * pi * pi * 0.2) * u0;
    CHECK((longer.trajectory.fields.back() - exact).norm() / exact.norm() < 1e-2);
    CHECK(longer.trajectory.times.back() == doctest::Approx(0.2));
}

TEST_CASE("zero initial condition stays zero") {
    const auto g = make_grid(unit_box(1), {17});
    const auto layout = measurement_layout(PdeKind::burgers, g);
    const auto cov = CovarianceModel::dense(matern_measurement_cov(g, layout, 0.3));
    MarchSetup s;
    s.kind = PdeKind::burgers;
    s.grid = &g;
    s.covariance = &cov;
    s.layout = layout;
    const auto m = crank_nicolson_march(s, Vec::Zero(g.size()), 0.1, 0.5, GNConfig{});
    REQUIRE(m.trajectory.fields.size() == 6);
    for (const auto& f : m.trajectory.fields) CHECK(f.norm() == 0.0);

    const auto g2 = make_grid(unit_box(2), {6, 6});
    const auto l2 = measurement_layout(PdeKind::allen_cahn, g2);
    const auto c2 = CovarianceModel::dense(matern_measurement_cov(g2, l2, 0.3));
    MarchSetup a;
    a.kind = PdeKind::allen_cahn;
    a.grid = &g2;
    a.covariance = &c2;
    a.layout = l2;
    const auto ma = crank_nicolson_march(a, Vec::Zero(g2.size()), 0.05, 0.2, GNConfig{});
    for (const auto& f : ma.trajectory.fields) CHECK(f.norm() == 0.0);
}

TEST_CASE("march validation") {
    const auto g = make_grid(unit_box(1), {9});
    const auto layout = measurement_layout(PdeKind::burgers, g);
    const auto cov = CovarianceModel::dense(matern_measurement_cov(g, layout, 0.3));
    MarchSetup s;
    s.grid = &g;
    s.covariance = &cov;
    s.layout = layout;
    const Vec u0 = Vec::Zero(9);
    CHECK_THROWS_AS(crank_nicolson_march(s, u0, 0.3, 1.0, GNConfig{}), Error);
    CHECK_THROWS_AS(crank_nicolson_march(s, u0, -0.1, 1.0, GNConfig{}), Error);
    CHECK_THROWS_AS(crank_nicolson_march(s, Vec::Zero(4), 0.1, 1.0, GNConfig{}), Error);
    s.kind = PdeKind::semilinear_elliptic;
    CHECK_THROWS_AS(crank_nicolson_march(s, u0, 0.1, 1.0, GNConfig{}), Error);
    s.kind = PdeKind::burgers;
    s.initial_measurements = Vec::Zero(3);
    CHECK_THROWS_AS(crank_nicolson_march(s, u0, 0.1, 1.0, GNConfig{}), Error);
}

TEST_CASE("evaluate_solution interpolates multilinear fields exactly") {
    const auto g = make_grid(unit_box(2), {5, 4});
    const Vec v = nodal(g, [](const Vec& p) { return 1 + 2 * p[0] - p[1] + 3 * p[0] * p[1]; });
    Mat q(4, 2);
    q << 0.1, 0.2, 0.55, 0.9, 1.0, 1.0, 0.0, 0.37;
    const Vec e = evaluate_solution(v, g, q);
    for (Index i = 0; i < 4; ++i)
        CHECK(e[i] == doctest::Approx(1 + 2 * q(i, 0) - q(i, 1) + 3 * q(i, 0) * q(i, 1)));
    CHECK((evaluate_solution(v, g, g.points) - v).norm() == 0.0);
    const Vec c = evaluate_solution(Vec::Constant(g.size(), 2.5), g, q);
    for (Index i = 0; i < 4; ++i) CHECK(c[i] == doctest::Approx(2.5));
    CHECK_THROWS_AS(evaluate_solution(Vec::Zero(3), g, q), Error);
}

TEST_CASE("crank_nicolson_step validates its inputs") {
    const auto g = make_grid(unit_box(1), {9});
    const auto cov = CovarianceModel::dense(Mat::Identity(1, 1));
    MarchSetup s;
    s.kind = PdeKind::burgers;
    s.covariance = &cov;
    s.layout = measurement_layout(PdeKind::burgers, g);
    CHECK_THROWS_AS(crank_nicolson_step(s, Vec::Zero(s.layout.size()), 0.1), Error);
    s.grid = &g;
    CHECK_THROWS_AS(crank_nicolson_step(s, Vec::Zero(3), 0.1), Error);
    const auto st = crank_nicolson_step(s, Vec::Zero(s.layout.size()), 0.1);
    CHECK(st.sys.cols() == s.layout.size());
    CHECK(st.rhs.size() == st.sys.rows());
    CHECK(st.rhs.norm() == 0.0);
    s.kind = PdeKind::semilinear_elliptic;
    CHECK_THROWS_AS(crank_nicolson_step(s, Vec::Zero(s.layout.size()), 0.1), Error);
}
