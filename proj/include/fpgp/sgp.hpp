#pragma once

// Sparse GP over noisy basis observations. Each latent output dimension is an
// independent scalar GP; all dimensions share one kernel, one basis, and one
// gram factorization. The fixed-point model reuses this engine with an
// augmented basis, so the plain-inducing path here is the P = 0 special case
// of the same code.

#include <vector>

#include "fpgp/kernels.hpp"
#include "fpgp/linalg.hpp"
#include "fpgp/types.hpp"

namespace fpgp {

// Inducing pseudo-observations: locations Z (M x D), values U (M x D, one
// column per latent dimension), per-point value noise std devs sigma_u.
template <typename T>
struct InducingSetT {
  MatT<T> Z;
  MatT<T> U;
  VecT<T> sigma_u;

  int m() const { return static_cast<int>(Z.rows()); }
  int dim() const { return static_cast<int>(Z.cols()); }
};

using InducingSet = InducingSetT<double>;

inline void validate(const InducingSet& ind) {
  if (ind.U.rows() != ind.Z.rows() || ind.U.cols() != ind.Z.cols())
    throw ShapeError("inducing set: U must match Z in shape");
  if (ind.sigma_u.size() != ind.Z.rows())
    throw ShapeError("inducing set: sigma_u must have one entry per inducing point");
  if (!ind.Z.allFinite() || !ind.U.allFinite() || !ind.sigma_u.allFinite())
    throw NumericDomainError("inducing set: non-finite entries");
  for (Eigen::Index i = 0; i < ind.sigma_u.size(); ++i)
    if (ind.sigma_u(i) < 0.0)
      throw NumericDomainError("inducing set: sigma_u must be nonnegative");
}

namespace gp {

// Reference scale for jitter: EQ uses the signal variance, the linear kernel
// (whose gram diagonal is location-dependent) uses the mean gram diagonal.
template <typename T>
double kernel_scale(const kernels::KernelParamsT<T>& k, const MatT<T>& gram) {
  if (k.type == kernels::KernelType::ExponentiatedQuadratic)
    return ad::to_double(k.signal_variance);
  double s = 0.0;
  for (Eigen::Index i = 0; i < gram.rows(); ++i) s += ad::to_double(gram(i, i));
  s = gram.rows() > 0 ? s / static_cast<double>(gram.rows()) : 1.0;
  return s > 0.0 ? s : 1.0;
}

// Basis gram without noise.
template <typename T>
MatT<T> gram_matrix(const kernels::KernelParamsT<T>& k,
                    const std::vector<kernels::BasisPointT<T>>& basis) {
  const Eigen::Index n = static_cast<Eigen::Index>(basis.size());
  MatT<T> g(n, n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = a; b < n; ++b) {
      g(a, b) = kernels::feature_cov(k, basis[a], basis[b]);
      g(b, a) = g(a, b);
    }
  return g;
}

constexpr double kJitterBase = 1e-8;
constexpr double kJitterMax = 1e-4;

// Factorized posterior state shared by predictions, moments, and Jacobians.
template <typename T>
struct GpPosterior {
  kernels::KernelParamsT<T> kernel;
  std::vector<kernels::BasisPointT<T>> basis;
  MatT<T> gram;   // noisy gram including the jitter that was used
  MatT<T> chol;
  MatT<T> kinv;
  MatT<T> alpha;  // B x D_out, one weight column per latent dimension
  kernels::PairCache<T> pair_cache;
  double jitter = 0.0;

  int basis_size() const { return static_cast<int>(basis.size()); }
  int dx() const { return kernel.dim(); }
  int dout() const { return static_cast<int>(alpha.cols()); }
};

// Adds noise_var to the diagonal and factorizes, escalating jitter tenfold
// from 1e-8 to 1e-4 times the kernel scale before giving up.
template <typename T>
GpPosterior<T> build_posterior(const kernels::KernelParamsT<T>& kernel,
                               std::vector<kernels::BasisPointT<T>> basis,
                               const VecT<T>& noise_var, const MatT<T>& targets) {
  const Eigen::Index n = static_cast<Eigen::Index>(basis.size());
  if (noise_var.size() != n) throw ShapeError("gp: noise vector size must match basis");
  if (targets.rows() != n) throw ShapeError("gp: target rows must match basis");

  GpPosterior<T> post;
  post.kernel = kernel;
  post.basis = std::move(basis);
  MatT<T> base = gram_matrix(kernel, post.basis);
  const double scale = kernel_scale(kernel, base);
  for (Eigen::Index i = 0; i < n; ++i) base(i, i) += noise_var(i);

  for (double jitter = kJitterBase * scale;; jitter *= 10.0) {
    post.gram = base;
    for (Eigen::Index i = 0; i < n; ++i) post.gram(i, i) += T(jitter);
    if (linalg::cholesky(post.gram, post.chol)) {
      post.jitter = jitter;
      break;
    }
    if (jitter >= kJitterMax * scale)
      throw ConditioningError("gp: gram factorization failed at maximum jitter");
  }
  post.kinv = linalg::cholesky_inverse(post.chol);
  post.alpha = linalg::cholesky_solve_mat(post.chol, targets);
  post.pair_cache = kernels::build_pair_cache(kernel, post.basis);
  return post;
}

template <typename T>
struct PredictResult {
  VecT<T> mean;  // one entry per latent output dimension
  T variance;    // shared across dimensions (common kernel and basis)
};

template <typename T>
PredictResult<T> predict(const GpPosterior<T>& post, const VecT<T>& x) {
  const VecT<T> kx = kernels::cross_vector(post.kernel, post.basis, x);
  PredictResult<T> out;
  out.mean = post.alpha.transpose() * kx;
  VecT<T> kx_copy = kx;
  const T explained = linalg::quad_form_inv(post.chol, kx_copy);
  T var = kernels::eval(post.kernel, x, x) - explained;
  if (var < T(0.0)) var = T(0.0);
  out.variance = var;
  return out;
}

// Moment-matched push of a Gaussian belief through the posterior map.
// Mean: E_x[k_x]' alpha. Variance per dimension, by total variance:
//   E_x[Var_f] = E[k(x,x)] - tr(K^-1 L)
//   Var_x[E_f] = alpha' L alpha - mean^2,   L = E[k_x k_x'].
// The output covariance is diagonal; cross-dimension terms are dropped.
template <typename T>
void predict_moments(const GpPosterior<T>& post, const VecT<T>& mean, const MatT<T>& cov,
                     VecT<T>& out_mean, VecT<T>& out_var) {
  const Eigen::Index n = static_cast<Eigen::Index>(post.basis.size());
  const Eigen::Index dout = post.alpha.cols();
  VecT<T> q;
  MatT<T> outer;
  T kdiag;
  kernels::expected_features(post.kernel, post.basis, &post.pair_cache, mean, cov, q, outer,
                             kdiag);

  out_mean = post.alpha.transpose() * q;

  T expected_var = kdiag;
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b) expected_var -= post.kinv(a, b) * outer(a, b);

  out_var.resize(dout);
  for (Eigen::Index d = 0; d < dout; ++d) {
    VecT<T> la = outer * post.alpha.col(d);
    T v = expected_var + post.alpha.col(d).dot(la) - out_mean(d) * out_mean(d);
    if (v < T(0.0)) v = T(0.0);
    out_var(d) = v;
  }
}

// Jacobian of the posterior mean map, rows = output dims, cols = input dims.
template <typename T>
MatT<T> posterior_jacobian(const GpPosterior<T>& post, const VecT<T>& x) {
  const MatT<T> cj = kernels::cross_jacobian(post.kernel, post.basis, x);  // B x D
  return (cj.transpose() * post.alpha).transpose();                        // Dout x D
}

}  // namespace gp

// ---------------------------------------------------------------------------
// Plain sparse-GP module facade (value basis only).

namespace sgp {

template <typename T>
std::vector<kernels::BasisPointT<T>> value_basis(const InducingSetT<T>& ind) {
  std::vector<kernels::BasisPointT<T>> basis;
  basis.reserve(ind.Z.rows());
  for (Eigen::Index i = 0; i < ind.Z.rows(); ++i)
    basis.push_back({VecT<T>(ind.Z.row(i).transpose()), -1});
  return basis;
}

template <typename T>
gp::GpPosterior<T> build_posterior(const kernels::KernelParamsT<T>& kernel,
                                   const InducingSetT<T>& ind) {
  VecT<T> noise(ind.Z.rows());
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise(i) = ind.sigma_u(i) * ind.sigma_u(i);
  return gp::build_posterior(kernel, value_basis(ind), noise, MatT<T>(ind.U));
}

// Noisy gram over the inducing values, including the jitter actually used.
inline Mat gram(const kernels::KernelHyperparams& kernel, const InducingSet& ind) {
  kernels::validate(kernel);
  validate(ind);
  return build_posterior(kernel, ind).gram;
}

struct Prediction {
  Vec mean;
  double variance;
};

inline Prediction predict(const kernels::KernelHyperparams& kernel, const InducingSet& ind,
                          const Vec& x) {
  kernels::validate(kernel);
  validate(ind);
  if (x.size() != ind.Z.cols()) throw ShapeError("sgp: query dimension mismatch");
  auto post = build_posterior(kernel, ind);
  auto r = gp::predict(post, x);
  return {r.mean, r.variance};
}

inline GaussianBelief predict_moments(const kernels::KernelHyperparams& kernel,
                                      const InducingSet& ind, const GaussianBelief& belief) {
  kernels::validate(kernel);
  validate(ind);
  belief.validate();
  if (belief.dim() != ind.Z.cols()) throw ShapeError("sgp: belief dimension mismatch");
  auto post = build_posterior(kernel, ind);
  Vec mean, var;
  gp::predict_moments(post, belief.mean, belief.cov, mean, var);
  return GaussianBelief(mean, Mat(var.asDiagonal()));
}

}  // namespace sgp

}  // namespace fpgp
