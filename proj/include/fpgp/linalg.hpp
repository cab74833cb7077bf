#pragma once

// Dense symmetric-positive-definite helpers templated on the scalar type so
// the same factorizations run under plain doubles and the Rev tape. Matrices
// here are small (basis-sized), so unblocked algorithms are fine.

#include <cmath>

#include "fpgp/ad.hpp"
#include "fpgp/types.hpp"

namespace fpgp::linalg {

// Lower-triangular Cholesky factor. Returns false (without throwing) on a
// non-positive pivot so callers can escalate jitter.
template <typename T>
bool cholesky(const MatT<T>& a, MatT<T>& lower) {
  using ad::sqrt;
  using ad::to_double;
  const Eigen::Index n = a.rows();
  lower = MatT<T>::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    T d = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) d -= lower(j, k) * lower(j, k);
    if (!(to_double(d) > 0.0) || !std::isfinite(to_double(d))) return false;
    const T root = sqrt(d);
    lower(j, j) = root;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      T s = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= lower(i, k) * lower(j, k);
      lower(i, j) = s / root;
    }
  }
  return true;
}

template <typename T>
VecT<T> forward_subst(const MatT<T>& lower, const VecT<T>& b) {
  const Eigen::Index n = lower.rows();
  VecT<T> y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    T s = b(i);
    for (Eigen::Index k = 0; k < i; ++k) s -= lower(i, k) * y(k);
    y(i) = s / lower(i, i);
  }
  return y;
}

template <typename T>
VecT<T> backward_subst(const MatT<T>& lower, const VecT<T>& y) {
  const Eigen::Index n = lower.rows();
  VecT<T> x(n);
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    T s = y(i);
    for (Eigen::Index k = i + 1; k < n; ++k) s -= lower(k, i) * x(k);
    x(i) = s / lower(i, i);
  }
  return x;
}

// Solves A x = b given the Cholesky factor of A.
template <typename T>
VecT<T> cholesky_solve(const MatT<T>& lower, const VecT<T>& b) {
  return backward_subst(lower, forward_subst(lower, b));
}

template <typename T>
MatT<T> cholesky_solve_mat(const MatT<T>& lower, const MatT<T>& b) {
  MatT<T> x(b.rows(), b.cols());
  for (Eigen::Index c = 0; c < b.cols(); ++c) {
    VecT<T> col = b.col(c);
    x.col(c) = cholesky_solve(lower, col);
  }
  return x;
}

template <typename T>
MatT<T> cholesky_inverse(const MatT<T>& lower) {
  const Eigen::Index n = lower.rows();
  MatT<T> eye = MatT<T>::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) eye(i, i) = T(1.0);
  return cholesky_solve_mat(lower, eye);
}

template <typename T>
T log_det_from_cholesky(const MatT<T>& lower) {
  using ad::log;
  T s = T(0.0);
  for (Eigen::Index i = 0; i < lower.rows(); ++i) s += log(lower(i, i));
  return s + s;
}

// b' A^{-1} b via one triangular solve.
template <typename T>
T quad_form_inv(const MatT<T>& lower, const VecT<T>& b) {
  VecT<T> y = forward_subst(lower, b);
  T s = T(0.0);
  for (Eigen::Index i = 0; i < y.size(); ++i) s += y(i) * y(i);
  return s;
}

inline Mat symmetrize(const Mat& a) { return 0.5 * (a + a.transpose()); }

}  // namespace fpgp::linalg
