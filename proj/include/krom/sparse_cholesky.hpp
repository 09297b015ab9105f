#pragma once

#include "krom/geometry.hpp"
#include "krom/kernels.hpp"

#include <charconv>
#include <cmath>
#include <ostream>

namespace krom {

// Upper-triangular U in the permuted ordering with U U^T ~ (P Theta P^T)^{-1}.
// Column j stores the rows s_j (sorted, j last) and the values U[s_j, j].
template <typename Scalar>
struct SparseFactorT {
    std::vector<Index> perm;  // ordered position -> original index
    std::vector<std::vector<Index>> rows;
    std::vector<VectorX<Scalar>> values;

    Index size() const { return static_cast<Index>(perm.size()); }
    Index nnz() const {
        Index n = 0;
        for (const auto& r : rows) n += static_cast<Index>(r.size());
        return n;
    }
    Scalar diag(Index j) const { return values[j][values[j].size() - 1]; }
};
using SparseFactor = SparseFactorT<double>;

// Column j is L^{-T} e_last for the Cholesky factor L of Theta[s_j, s_j], which equals
// Theta_s^{-1} e / sqrt(e^T Theta_s^{-1} e).
template <typename Derived>
SparseFactorT<typename Derived::Scalar> kl_sparse_factor(const Eigen::MatrixBase<Derived>& theta,
                                                         const SparsityPattern& pattern,
                                                         const MaximinOrdering& ordering) {
    using Scalar = typename Derived::Scalar;
    const Index n = ordering.size();
    if (theta.rows() != n || theta.cols() != n || pattern.size() != n)
        throw Error(ErrorKind::invalid_parameter, "factor inputs have mismatched sizes");
    SparseFactorT<Scalar> U;
    U.perm = ordering.perm;
    U.rows = pattern.columns;
    U.values.resize(static_cast<size_t>(n));
    MatrixX<Scalar> sub;
    for (Index j = 0; j < n; ++j) {
        const auto& s = pattern.columns[j];
        const Index k = static_cast<Index>(s.size());
        if (k == 0 || s.back() != j)
            throw Error(ErrorKind::invalid_parameter, "pattern column " + std::to_string(j) + " lacks its diagonal");
        sub.resize(k, k);
        for (Index b = 0; b < k; ++b)
            for (Index a = 0; a < k; ++a) sub(a, b) = theta(ordering.perm[s[a]], ordering.perm[s[b]]);
        Eigen::LLT<MatrixX<Scalar>> llt(sub);
        if (llt.info() != Eigen::Success)
            throw Error(ErrorKind::ill_conditioned, "submatrix factorization failed in column " + std::to_string(j));
        VectorX<Scalar> e = VectorX<Scalar>::Zero(k);
        e[k - 1] = Scalar(1);
        llt.matrixU().solveInPlace(e);
        U.values[j] = std::move(e);
    }
    return U;
}

template <typename Scalar>
SparseFactorT<Scalar> kl_sparse_factor(const GramMatrixT<Scalar>& gram, const SparsityPattern& pattern,
                                       const MaximinOrdering& ordering) {
    return kl_sparse_factor(gram.regularized(), pattern, ordering);
}

// Pattern-consistent dense copy of U (permuted ordering), for diagnostics.
template <typename Scalar>
MatrixX<Scalar> dense_factor(const SparseFactorT<Scalar>& U) {
    const Index n = U.size();
    MatrixX<Scalar> D = MatrixX<Scalar>::Zero(n, n);
    for (Index j = 0; j < n; ++j)
        for (size_t a = 0; a < U.rows[j].size(); ++a) D(U.rows[j][a], j) = U.values[j][static_cast<Index>(a)];
    return D;
}

// Both applies work on the transposed right-hand side so every update is a contiguous column axpy.

// P^T U U^T P v
template <typename Scalar, typename Derived>
MatrixX<Scalar> apply_precision(const SparseFactorT<Scalar>& U, const Eigen::MatrixBase<Derived>& v) {
    const Index n = U.size();
    if (v.rows() != n) throw Error(ErrorKind::invalid_parameter, "apply_precision length mismatch");
    MatrixX<Scalar> w(v.cols(), n);
    for (Index q = 0; q < n; ++q) w.col(q) = v.row(U.perm[q]).transpose();
    MatrixX<Scalar> y = MatrixX<Scalar>::Zero(v.cols(), n);
    for (Index j = 0; j < n; ++j)
        for (size_t a = 0; a < U.rows[j].size(); ++a) y.col(j) += U.values[j][static_cast<Index>(a)] * w.col(U.rows[j][a]);
    w.setZero();
    for (Index j = 0; j < n; ++j)
        for (size_t a = 0; a < U.rows[j].size(); ++a) w.col(U.rows[j][a]) += U.values[j][static_cast<Index>(a)] * y.col(j);
    MatrixX<Scalar> out(n, v.cols());
    for (Index q = 0; q < n; ++q) out.row(U.perm[q]) = w.col(q).transpose();
    return out;
}

// P^T U^{-T} U^{-1} P v by back substitution then forward substitution on the stored columns.
template <typename Scalar, typename Derived>
MatrixX<Scalar> apply_covariance(const SparseFactorT<Scalar>& U, const Eigen::MatrixBase<Derived>& v) {
    const Index n = U.size();
    if (v.rows() != n) throw Error(ErrorKind::invalid_parameter, "apply_covariance length mismatch");
    MatrixX<Scalar> t(v.cols(), n);
    for (Index q = 0; q < n; ++q) t.col(q) = v.row(U.perm[q]).transpose();
    // U t' = t
    for (Index j = n - 1; j >= 0; --j) {
        const Scalar d = U.diag(j);
        if (!(d > Scalar(0))) throw Error(ErrorKind::numeric, "singular factor: zero diagonal in column " + std::to_string(j));
        t.col(j) /= d;
        const auto& s = U.rows[j];
        for (size_t a = 0; a + 1 < s.size(); ++a) t.col(s[a]) -= U.values[j][static_cast<Index>(a)] * t.col(j);
    }
    // U^T y = t'
    for (Index j = 0; j < n; ++j) {
        const auto& s = U.rows[j];
        for (size_t a = 0; a + 1 < s.size(); ++a) t.col(j) -= U.values[j][static_cast<Index>(a)] * t.col(s[a]);
        t.col(j) /= U.diag(j);
    }
    MatrixX<Scalar> out(n, v.cols());
    for (Index q = 0; q < n; ++q) out.row(U.perm[q]) = t.col(q).transpose();
    return out;
}

// KL(N(0, Theta) || N(0, (U U^T)^{-1})) in the permuted ordering.
template <typename Scalar>
Scalar kl_divergence(const GramMatrixT<Scalar>& gram, const SparseFactorT<Scalar>& U) {
    const Index n = U.size();
    if (gram.size() != n) throw Error(ErrorKind::invalid_parameter, "kl_divergence size mismatch");
    const MatrixX<Scalar> theta = gram.regularized();
    Eigen::LLT<MatrixX<Scalar>> llt(theta);
    if (llt.info() != Eigen::Success) throw Error(ErrorKind::numeric, "Gram matrix is not positive definite");
    using std::log;
    Scalar logdet = 0;
    for (Index i = 0; i < n; ++i) logdet += Scalar(2) * log(llt.matrixLLT()(i, i));
    Scalar trace = 0, logdiag = 0;
    for (Index j = 0; j < n; ++j) {
        const auto& s = U.rows[j];
        const Index k = static_cast<Index>(s.size());
        for (Index a = 0; a < k; ++a) {
            Scalar row = 0;
            for (Index b = 0; b < k; ++b) row += theta(U.perm[s[a]], U.perm[s[b]]) * U.values[j][b];
            trace += U.values[j][a] * row;
        }
        const Scalar d = U.diag(j);
        if (!(d > Scalar(0))) throw Error(ErrorKind::numeric, "non-positive factor diagonal");
        logdiag += log(d);
    }
    const Scalar kl = Scalar(0.5) * (trace - Scalar(n) - Scalar(2) * logdiag - logdet);
    using std::isfinite;
    if (!isfinite(kl)) throw Error(ErrorKind::numeric, "non-finite KL divergence");
    return kl;
}

// || Theta^{-1} - P^T U U^T P ||_F with a dense inverse.
template <typename Scalar>
Scalar frobenius_gap(const GramMatrixT<Scalar>& gram, const SparseFactorT<Scalar>& U) {
    const Index n = U.size();
    if (gram.size() != n) throw Error(ErrorKind::invalid_parameter, "frobenius_gap size mismatch");
    Eigen::LLT<MatrixX<Scalar>> llt(gram.regularized());
    if (llt.info() != Eigen::Success) throw Error(ErrorKind::numeric, "dense inversion failed");
    const MatrixX<Scalar> inv = llt.solve(MatrixX<Scalar>::Identity(n, n));
    const MatrixX<Scalar> D = dense_factor(U);
    const MatrixX<Scalar> P = D * D.transpose();
    Scalar acc = 0;
    for (Index b = 0; b < n; ++b)
        for (Index a = 0; a < n; ++a) {
            const Scalar g = inv(U.perm[a], U.perm[b]) - P(a, b);
            acc += g * g;
        }
    using std::sqrt;
    return sqrt(acc);
}

// "KROMU <M> <nnz>" then one "j i value" line per nonzero, zero-based positions in the ordering.
template <typename Scalar>
void write_factor(std::ostream& os, const SparseFactorT<Scalar>& U) {
    os << "KROMU " << U.size() << ' ' << U.nnz() << '\n';
    char buf[64];
    for (Index j = 0; j < U.size(); ++j)
        for (size_t a = 0; a < U.rows[j].size(); ++a) {
            const auto res = std::to_chars(buf, buf + sizeof buf, static_cast<double>(U.values[j][static_cast<Index>(a)]));
            os << j << ' ' << U.rows[j][a] << ' ' << std::string_view(buf, static_cast<size_t>(res.ptr - buf)) << '\n';
        }
}

}  // namespace krom
