#include "doctest.h"
#include "krom/snapshots.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <sstream>

using namespace krom;

namespace {

PDEInstance elliptic_template(Index n) {
    PDEInstance p;
    p.kind = PdeKind::semilinear_elliptic;
    p.grid = make_grid(unit_box(2), {n, n});
    return p;
}

PDEInstance burgers_template() {
    PDEInstance p;
    p.kind = PdeKind::burgers;
    p.grid = make_grid(unit_box(1, -1.0, 1.0), {81});
    p.nu = 0.01;
    p.dt = 1e-3;
    p.t_final = 0.5;
    p.save_interval = 0.25;
    return p;
}

Index numerical_rank(const Mat& S) {
    Eigen::JacobiSVD<Mat> svd(S);
    const Vec s = svd.singularValues();
    Index r = 0;
    for (Index i = 0; i < s.size(); ++i)
        if (s[i] > 1e-10 * s[0]) ++r;
    return r;
}

SnapshotLibrary matrix_library(const Mat& S) {
    SnapshotLibrary lib;
    lib.S = S;
    lib.grid = make_grid(unit_box(1), {S.rows()});
    lib.n_instances = S.cols();
    for (Index j = 0; j < S.cols(); ++j) lib.provenance.push_back({1, j, 0, 0.0, 0.0});
    return lib;
}

}  // namespace

TEST_CASE("stationary library: determinism, provenance and rank") {
    SamplerSpec spec;
    spec.seed = 17;
    const auto a = build_library(elliptic_template(32), spec, 40);
    const auto b = build_library(elliptic_template(32), spec, 40);
    CHECK(a.S == b.S);
    CHECK(a.S.rows() == 1024);
    CHECK(a.n_cols() == 40);
    CHECK(a.n_times == 1);
    CHECK(numerical_rank(a.S) == 40);
    for (Index j = 0; j < 40; ++j) {
        CHECK(a.provenance[static_cast<size_t>(j)].seed == derive_seed(17, static_cast<std::uint64_t>(j)));
        CHECK(a.provenance[static_cast<size_t>(j)].instance == j);
    }
    for (Index bnode : a.grid.boundary_nodes()) CHECK(a.S.row(bnode).norm() == 0.0);
    // each column solves its own problem
    spec.seed = 18;
    CHECK(build_library(elliptic_template(16), spec, 2).S != build_library(elliptic_template(16), SamplerSpec{}, 2).S);
    CHECK_THROWS_AS(build_library(elliptic_template(16), spec, 0), Error);
}

TEST_CASE("zero-amplitude sampler gives zero columns") {
    SamplerSpec spec;
    spec.amplitude = 0.0;
    const auto one = build_library(elliptic_template(12), spec, 1);
    CHECK(one.n_cols() == 1);
    CHECK(one.S.norm() == 0.0);
    const auto lib = build_library(elliptic_template(12), spec, 3);
    CHECK(lib.S.norm() == 0.0);
    const auto sel = greedy_select(lib, 3);
    CHECK(sel.indices.empty());
    CHECK_FALSE(sel.note.empty());
}

TEST_CASE("time-dependent library stores every saved slice") {
    SamplerSpec spec;
    spec.kind = SamplerKind::trig_random;
    spec.amplitude = 0.5;
    const auto lib = build_library(burgers_template(), spec, 3);
    CHECK(lib.n_times == 3);
    CHECK(lib.n_cols() == 9);
    CHECK(lib.provenance[4].instance == 1);
    CHECK(lib.provenance[4].time_index == 1);
    CHECK(lib.provenance[4].time == doctest::Approx(0.25));
    CHECK(lib.meta.at("sampler") == "trig_random");
    const auto first = take_instances(lib, 2);
    CHECK(first.n_cols() == 6);
    CHECK(first.S == lib.S.leftCols(6));
    CHECK(first.n_instances == 2);
    CHECK_THROWS_AS(take_instances(lib, 4), Error);
}

TEST_CASE("shift augmentation") {
    SamplerSpec spec;
    spec.kind = SamplerKind::trig_random;
    spec.amplitude = 0.5;
    auto tmpl = burgers_template();
    tmpl.save_interval = 0.0;
    tmpl.save_stride = 1000000;
    tmpl.t_final = 0.1;
    const auto base = build_library(tmpl, spec, 4);
    REQUIRE(base.n_cols() == 8);
    const auto shifts = burgers_shifts();
    REQUIRE(shifts.size() == 9);
    CHECK(shifts.front() == doctest::Approx(-0.8));
    CHECK(shifts[4] == 0.0);
    const auto aug = shift_augment(base, shifts);
    CHECK(aug.n_cols() == 80);
    CHECK(aug.provenance.size() == 80);
    CHECK(aug.S.leftCols(8) == base.S);
    // the zero shift is the identity
    CHECK(aug.S.middleCols(8 * 5, 8) == base.S);
    // grid-aligned shifts are rotations of the period
    const Index np = 80;
    for (Index c = 0; c < 80; ++c)
        CHECK(aug.S.col(c).head(np).norm() == doctest::Approx(base.S.col(c % 8).head(np).norm()));
    CHECK(aug.provenance[8 * 7 + 2].shift == doctest::Approx(shifts[6]));
    // a full period returns the column unchanged; u(x - s) is sampled
    const auto full = shift_augment(base, {2.0, 0.25});
    CHECK(full.S.middleCols(8, 8) == base.S);
    const Index q = 10;  // 0.25 / h
    for (Index i = 0; i < np; ++i) CHECK(full.S(i, 16) == base.S((i - q + np) % np, 0));
    // off-grid shifts interpolate linearly
    const auto half = shift_augment(base, {1.0 / 80.0});
    for (Index i = 1; i < np; ++i)
        CHECK(half.S(i, 8) == doctest::Approx(0.5 * (base.S(i, 0) + base.S(i - 1, 0))));
    CHECK_THROWS_AS(shift_augment(build_library(elliptic_template(12), SamplerSpec{}, 1), {0.1}), Error);
}

TEST_CASE("greedy selection") {
    Mat S(4, 3);
    S << 1, 10, 1, 0, 0, 1, 0, 0, 0, 0, 0, 0;
    const auto sel = greedy_select(matrix_library(S), 3);
    REQUIRE(sel.indices.size() == 2);
    CHECK(sel.indices[0] == 1);
    CHECK(sel.indices[1] == 2);
    CHECK(sel.residuals[0] == doctest::Approx(10.0));
    CHECK(sel.residuals[1] == doctest::Approx(1.0));
    CHECK(sel.note.find("rank") != std::string::npos);

    // one dominant column among unit-norm noise
    Mat D = Mat::Random(20, 6);
    D.colwise().normalize();
    D.col(4) *= 10.0;
    CHECK(greedy_select(matrix_library(D), 2).indices[0] == 4);

    // orthogonal equal-norm columns: any order, but m picks span m dimensions
    const Mat Q = Eigen::HouseholderQR<Mat>(Mat::Random(15, 5)).householderQ() * Mat::Identity(15, 5);
    const auto oq = greedy_select(matrix_library(Q), 3);
    REQUIRE(oq.indices.size() == 3);
    Mat picked(15, 3);
    for (int k = 0; k < 3; ++k) picked.col(k) = Q.col(oq.indices[static_cast<size_t>(k)]);
    CHECK(numerical_rank(picked) == 3);
    for (double r : oq.residuals) CHECK(r == doctest::Approx(1.0));

    const Mat R = Mat::Random(30, 12);
    const auto full = greedy_select(matrix_library(R), 12);
    REQUIRE(full.indices.size() == 12);
    auto sorted = full.indices;
    std::sort(sorted.begin(), sorted.end());
    for (Index j = 0; j < 12; ++j) CHECK(sorted[static_cast<size_t>(j)] == j);
    for (size_t k = 1; k < full.residuals.size(); ++k) CHECK(full.residuals[k] <= full.residuals[k - 1] * (1 + 1e-12));
    CHECK(full.residuals[0] == doctest::Approx(R.colwise().norm().maxCoeff()));
    CHECK(full.note.empty());
    CHECK(greedy_select(matrix_library(R), 0).indices.empty());
    CHECK_THROWS_AS(greedy_select(matrix_library(R), 13), Error);

    const auto sub = take_columns(matrix_library(R), {3, 1});
    CHECK(sub.S.col(0) == R.col(3));
    CHECK(sub.n_instances == 2);
    CHECK_THROWS_AS(take_columns(matrix_library(R), {40}), Error);
}

TEST_CASE("KROMS1 round trip and malformed input") {
    SamplerSpec spec;
    spec.kind = SamplerKind::trig_random;
    const auto lib = shift_augment(build_library(burgers_template(), spec, 2), {0.25});
    std::stringstream ss;
    write_library(lib, ss);
    const std::string bytes = ss.str();
    CHECK(bytes.rfind("KROMS1 81 12 1 81\n", 0) == 0);
    std::istringstream in(bytes);
    const auto back = read_library(in);
    CHECK(back.S == lib.S);
    CHECK(back.kind == lib.kind);
    CHECK(back.n_instances == lib.n_instances);
    CHECK(back.n_times == lib.n_times);
    CHECK(back.meta == lib.meta);
    CHECK(back.grid.points == lib.grid.points);
    REQUIRE(back.provenance.size() == lib.provenance.size());
    for (size_t j = 0; j < back.provenance.size(); ++j) {
        CHECK(back.provenance[j].seed == lib.provenance[j].seed);
        CHECK(back.provenance[j].time == lib.provenance[j].time);
        CHECK(back.provenance[j].shift == lib.provenance[j].shift);
    }

    auto expect_format_error = [](const std::string& text) {
        std::istringstream is(text);
        try {
            read_library(is);
            FAIL("expected a format error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::format);
            CHECK(std::string(e.what()).find("byte") != std::string::npos);
        }
    };
    {
        std::istringstream is("KROMS2 81 12 1 81\n");
        try {
            read_library(is);
            FAIL("expected a format error");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("KROMS1") != std::string::npos);
        }
    }
    expect_format_error(bytes.substr(0, 100));
    expect_format_error("KROMS2 81 12 1 81\n");
    expect_format_error("KROMS1 81 x 1 81\n");
    expect_format_error("KROMS1 80 1 1 81\n");
    std::string bad = bytes;
    bad[0] = 'X';
    expect_format_error(bad);

    const std::string path = "krom_test_library.kroms";
    save_library(lib, path);
    CHECK(load_library(path).S == lib.S);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_library("/nonexistent/dir/file.kroms"), Error);
}
