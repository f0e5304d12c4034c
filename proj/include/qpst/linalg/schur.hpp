#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "qpst/types.hpp"

namespace qpst::linalg {

/// A = Z T Z^H with T upper triangular and Z unitary.
struct ComplexSchur {
  CMatrix T;
  CMatrix Z;
  int iterations = 0;
};

namespace detail {

struct Givens {
  double c = 1.0;
  cplx s{0.0, 0.0};
};

// [c s; -conj(s) c] * [a; b] = [r; 0]
inline Givens make_givens(cplx a, cplx b) {
  const double abs_b = std::abs(b);
  if (abs_b == 0.0) return {};
  const double abs_a = std::abs(a);
  if (abs_a == 0.0) return {0.0, std::conj(b) / abs_b};
  const double r = std::hypot(abs_a, abs_b);
  return {abs_a / r, (a / abs_a) * std::conj(b) / r};
}

inline void reduce_to_hessenberg(CMatrix& a, CMatrix& q) {
  const Eigen::Index n = a.rows();
  for (Eigen::Index k = 0; k + 2 < n; ++k) {
    const Eigen::Index m = n - k - 1;
    CVector v = a.col(k).tail(m);
    const double xnorm = v.norm();
    if (xnorm == 0.0) continue;
    const cplx phase = std::abs(v(0)) == 0.0 ? cplx{1.0, 0.0} : v(0) / std::abs(v(0));
    v(0) += phase * xnorm;
    const double vnorm = v.norm();
    if (vnorm == 0.0) continue;
    v /= vnorm;
    // P = I - 2 v v^H applied from both sides
    Eigen::RowVectorXcd w = v.adjoint() * a.bottomRows(m);
    a.bottomRows(m).noalias() -= 2.0 * v * w;
    CVector u = a.rightCols(m) * v;
    a.rightCols(m).noalias() -= 2.0 * u * v.adjoint();
    CVector uq = q.rightCols(m) * v;
    q.rightCols(m).noalias() -= 2.0 * uq * v.adjoint();
    a.col(k).tail(m - 1).setZero();
  }
}

}  // namespace detail

/// Complex Schur decomposition: Hessenberg reduction followed by the
/// implicit single-shift QR iteration with Wilkinson shifts and deflation on
/// negligible subdiagonals. An exceptional shift every tenth iteration on a
/// block breaks cycling.
inline ComplexSchur complex_schur(const CMatrix& input, int max_iterations_per_eigenvalue = 60) {
  const Eigen::Index n = input.rows();
  if (input.cols() != n) throw Error("complex_schur: matrix is not square");

  ComplexSchur out;
  out.T = input;
  out.Z = CMatrix::Identity(n, n);
  if (n == 0) return out;
  CMatrix& a = out.T;
  CMatrix& z = out.Z;
  detail::reduce_to_hessenberg(a, z);

  const double eps = std::numeric_limits<double>::epsilon();
  const double anorm = std::max(a.cwiseAbs().colwise().sum().maxCoeff(), std::numeric_limits<double>::min());
  const int budget = max_iterations_per_eigenvalue * static_cast<int>(n);

  Eigen::Index hi = n - 1;
  int iter_on_block = 0;
  int total = 0;
  while (hi > 0) {
    Eigen::Index l = hi;
    for (; l > 0; --l) {
      double s = std::abs(a(l - 1, l - 1)) + std::abs(a(l, l));
      if (s == 0.0) s = anorm;
      if (std::abs(a(l, l - 1)) <= eps * s) {
        a(l, l - 1) = 0.0;
        break;
      }
    }
    if (l == hi) {
      --hi;
      iter_on_block = 0;
      continue;
    }
    if (++total > budget) throw Error("complex_schur: QR iteration did not converge");
    ++iter_on_block;

    cplx shift;
    if (iter_on_block % 10 == 0) {
      shift = a(hi, hi) + 0.75 * std::abs(a(hi, hi - 1));
    } else {
      const cplx p = a(hi - 1, hi - 1);
      const cplx q = a(hi - 1, hi);
      const cplx r = a(hi, hi - 1);
      const cplx d = a(hi, hi);
      const cplx mean = 0.5 * (p + d);
      const cplx disc = std::sqrt(0.25 * (p - d) * (p - d) + q * r);
      const cplx e1 = mean + disc;
      const cplx e2 = mean - disc;
      shift = std::abs(e1 - d) < std::abs(e2 - d) ? e1 : e2;
    }

    cplx x = a(l, l) - shift;
    cplx y = a(l + 1, l);
    for (Eigen::Index k = l; k < hi; ++k) {
      if (k > l) {
        x = a(k, k - 1);
        y = a(k + 1, k - 1);
      }
      const auto g = detail::make_givens(x, y);
      const Eigen::Index jstart = k > l ? k - 1 : l;
      for (Eigen::Index j = jstart; j < n; ++j) {
        const cplx t1 = a(k, j);
        const cplx t2 = a(k + 1, j);
        a(k, j) = g.c * t1 + g.s * t2;
        a(k + 1, j) = -std::conj(g.s) * t1 + g.c * t2;
      }
      const Eigen::Index iend = std::min(k + 2, hi);
      for (Eigen::Index i = 0; i <= iend; ++i) {
        const cplx t1 = a(i, k);
        const cplx t2 = a(i, k + 1);
        a(i, k) = g.c * t1 + std::conj(g.s) * t2;
        a(i, k + 1) = -g.s * t1 + g.c * t2;
      }
      for (Eigen::Index i = 0; i < n; ++i) {
        const cplx t1 = z(i, k);
        const cplx t2 = z(i, k + 1);
        z(i, k) = g.c * t1 + std::conj(g.s) * t2;
        z(i, k + 1) = -g.s * t1 + g.c * t2;
      }
      if (k > l) a(k + 1, k - 1) = 0.0;
    }
  }
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = j + 1; i < n; ++i) a(i, j) = 0.0;
  out.iterations = total;
  return out;
}

/// Right eigenvectors of an upper-triangular T by back substitution; columns
/// normalized to unit 2-norm.
inline CMatrix triangular_eigenvectors(const CMatrix& t) {
  const Eigen::Index n = t.rows();
  const double small = std::max(std::numeric_limits<double>::epsilon() * t.norm(), std::numeric_limits<double>::min());
  CMatrix v = CMatrix::Zero(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    v(k, k) = 1.0;
    for (Eigen::Index i = k - 1; i >= 0; --i) {
      cplx sum = 0.0;
      for (Eigen::Index j = i + 1; j <= k; ++j) sum += t(i, j) * v(j, k);
      cplx denom = t(i, i) - t(k, k);
      if (std::abs(denom) < small) denom = small;
      v(i, k) = -sum / denom;
    }
    v.col(k).normalize();
  }
  return v;
}

struct ComplexEigen {
  CVector values;
  CMatrix vectors;  // unit columns
};

inline ComplexEigen complex_eigen(const CMatrix& a) {
  const ComplexSchur schur = complex_schur(a);
  ComplexEigen out;
  out.values = schur.T.diagonal();
  out.vectors = schur.Z * triangular_eigenvectors(schur.T);
  for (Eigen::Index k = 0; k < out.vectors.cols(); ++k) out.vectors.col(k).normalize();
  return out;
}

}  // namespace qpst::linalg
