#pragma once

// Kernel evaluations, derivative-feature cross-covariances, and closed-form
// expectations of kernel features under a Gaussian belief. A "feature" is
// either the kernel section k(., z) anchored at a basis location (a value
// feature) or the partial derivative of the latent function at an anchor
// (a derivative feature); both kinds appear in the augmented basis.
//
// Everything on the hot path is templated on the scalar type so gradients of
// the filtering objective can be taped through these expressions.

#include <vector>

#include "fpgp/ad.hpp"
#include "fpgp/linalg.hpp"
#include "fpgp/types.hpp"

namespace fpgp::kernels {

enum class KernelType { ExponentiatedQuadratic, Linear };

template <typename T>
struct KernelParamsT {
  KernelType type = KernelType::ExponentiatedQuadratic;
  T signal_variance = T(1.0);   // EQ only
  VecT<T> lengthscales;         // EQ only, one per input dimension (ARD)
  VecT<T> weight_variances;     // Linear only, one per input dimension

  int dim() const {
    return static_cast<int>(type == KernelType::ExponentiatedQuadratic
                                ? lengthscales.size()
                                : weight_variances.size());
  }
};

using KernelHyperparams = KernelParamsT<double>;

inline KernelHyperparams eq_kernel(double signal_variance, Vec lengthscales) {
  KernelHyperparams k;
  k.type = KernelType::ExponentiatedQuadratic;
  k.signal_variance = signal_variance;
  k.lengthscales = std::move(lengthscales);
  return k;
}

inline KernelHyperparams linear_kernel(Vec weight_variances) {
  KernelHyperparams k;
  k.type = KernelType::Linear;
  k.weight_variances = std::move(weight_variances);
  return k;
}

inline void validate(const KernelHyperparams& k) {
  if (k.type == KernelType::ExponentiatedQuadratic) {
    if (k.lengthscales.size() < 1) throw ShapeError("kernel: lengthscales empty");
    if (!(k.signal_variance > 0.0) || !std::isfinite(k.signal_variance))
      throw NumericDomainError("kernel: signal variance must be positive and finite");
    for (Eigen::Index d = 0; d < k.lengthscales.size(); ++d)
      if (!(k.lengthscales(d) > 0.0) || !std::isfinite(k.lengthscales(d)))
        throw NumericDomainError("kernel: lengthscales must be positive and finite");
  } else {
    if (k.weight_variances.size() < 1) throw ShapeError("kernel: weight variances empty");
    for (Eigen::Index d = 0; d < k.weight_variances.size(); ++d)
      if (!(k.weight_variances(d) > 0.0) || !std::isfinite(k.weight_variances(d)))
        throw NumericDomainError("kernel: weight variances must be positive and finite");
  }
}

// Basis entry: value feature when deriv_dim < 0, otherwise the derivative of
// the latent map along input dimension deriv_dim, anchored at `location`.
template <typename T>
struct BasisPointT {
  VecT<T> location;
  int deriv_dim = -1;

  bool is_value() const { return deriv_dim < 0; }
};

using AugmentedBasisPoint = BasisPointT<double>;

inline AugmentedBasisPoint value_point(Vec loc) { return {std::move(loc), -1}; }
inline AugmentedBasisPoint deriv_point(Vec loc, int dim) { return {std::move(loc), dim}; }

// ---------------------------------------------------------------------------
// Pointwise evaluations.

template <typename T>
T eval(const KernelParamsT<T>& k, const VecT<T>& x, const VecT<T>& z) {
  using ad::exp;
  const Eigen::Index d = x.size();
  if (k.type == KernelType::ExponentiatedQuadratic) {
    T s = T(0.0);
    for (Eigen::Index i = 0; i < d; ++i) {
      const T r = (x(i) - z(i)) / k.lengthscales(i);
      s += r * r;
    }
    return k.signal_variance * exp(T(-0.5) * s);
  }
  T s = T(0.0);
  for (Eigen::Index i = 0; i < d; ++i) s += k.weight_variances(i) * x(i) * z(i);
  return s;
}

// Gradient with respect to the first argument.
template <typename T>
VecT<T> grad1(const KernelParamsT<T>& k, const VecT<T>& x, const VecT<T>& z) {
  const Eigen::Index d = x.size();
  VecT<T> g(d);
  if (k.type == KernelType::ExponentiatedQuadratic) {
    const T kv = eval(k, x, z);
    for (Eigen::Index i = 0; i < d; ++i) {
      const T l2 = k.lengthscales(i) * k.lengthscales(i);
      g(i) = -kv * (x(i) - z(i)) / l2;
    }
    return g;
  }
  for (Eigen::Index i = 0; i < d; ++i) g(i) = k.weight_variances(i) * z(i);
  return g;
}

// Gradient with respect to the second argument.
template <typename T>
VecT<T> grad2(const KernelParamsT<T>& k, const VecT<T>& x, const VecT<T>& z) {
  const Eigen::Index d = x.size();
  VecT<T> g(d);
  if (k.type == KernelType::ExponentiatedQuadratic) {
    const T kv = eval(k, x, z);
    for (Eigen::Index i = 0; i < d; ++i) {
      const T l2 = k.lengthscales(i) * k.lengthscales(i);
      g(i) = kv * (x(i) - z(i)) / l2;
    }
    return g;
  }
  for (Eigen::Index i = 0; i < d; ++i) g(i) = k.weight_variances(i) * x(i);
  return g;
}

// Mixed second derivative, entry (i, j) = d^2 k / dx_i dz_j.
template <typename T>
MatT<T> grad12(const KernelParamsT<T>& k, const VecT<T>& x, const VecT<T>& z) {
  const Eigen::Index d = x.size();
  MatT<T> h(d, d);
  if (k.type == KernelType::ExponentiatedQuadratic) {
    const T kv = eval(k, x, z);
    VecT<T> w(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      const T l2 = k.lengthscales(i) * k.lengthscales(i);
      w(i) = (x(i) - z(i)) / l2;
    }
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) {
        h(i, j) = -kv * w(i) * w(j);
        if (i == j) h(i, j) += kv / (k.lengthscales(i) * k.lengthscales(i));
      }
    }
    return h;
  }
  h.setZero();
  for (Eigen::Index i = 0; i < d; ++i) h(i, i) = k.weight_variances(i);
  return h;
}

// Cross-covariance between two basis features (value or derivative).
template <typename T>
T feature_cov(const KernelParamsT<T>& k, const BasisPointT<T>& a, const BasisPointT<T>& b) {
  if (a.is_value() && b.is_value()) return eval(k, a.location, b.location);
  if (a.is_value()) return grad2(k, a.location, b.location)(b.deriv_dim);
  if (b.is_value()) return grad1(k, a.location, b.location)(a.deriv_dim);
  return grad12(k, a.location, b.location)(a.deriv_dim, b.deriv_dim);
}

// Covariance between the value of the map at x and each basis feature.
template <typename T>
VecT<T> cross_vector(const KernelParamsT<T>& k, const std::vector<BasisPointT<T>>& basis,
                     const VecT<T>& x) {
  VecT<T> out(static_cast<Eigen::Index>(basis.size()));
  BasisPointT<T> probe{x, -1};
  for (size_t b = 0; b < basis.size(); ++b)
    out(static_cast<Eigen::Index>(b)) = feature_cov(k, probe, basis[b]);
  return out;
}

// Row b holds d(cross_vector_b)/dx, used for posterior Jacobians.
template <typename T>
MatT<T> cross_jacobian(const KernelParamsT<T>& k, const std::vector<BasisPointT<T>>& basis,
                       const VecT<T>& x) {
  const Eigen::Index d = x.size();
  MatT<T> out(static_cast<Eigen::Index>(basis.size()), d);
  for (size_t b = 0; b < basis.size(); ++b) {
    if (basis[b].is_value()) {
      out.row(static_cast<Eigen::Index>(b)) = grad1(k, x, basis[b].location).transpose();
    } else {
      MatT<T> h = grad12(k, x, basis[b].location);
      out.row(static_cast<Eigen::Index>(b)) = h.col(basis[b].deriv_dim).transpose();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian expectations of features.
//
// For the EQ kernel every feature is (polynomial in x) * (Gaussian bump in x),
// so expectations reduce to Gaussian product identities: multiplying the
// belief N(mu, Sigma) by a bump centered at c with width Lambda gives an
// unnormalized Gaussian whose mass, mean, and covariance are available in
// closed form. Single features use Lambda; products of two bumps combine into
// one bump of width Lambda/2 centered at their midpoint.

// Belief-independent pair quantities, reusable across filter steps.
template <typename T>
struct PairCache {
  MatT<T> scale;  // EQ: sigma_f^4 * exp(-1/4 (za-zb)' Lam^-1 (za-zb))
};

template <typename T>
PairCache<T> build_pair_cache(const KernelParamsT<T>& k,
                              const std::vector<BasisPointT<T>>& basis) {
  using ad::exp;
  PairCache<T> cache;
  const Eigen::Index n = static_cast<Eigen::Index>(basis.size());
  if (k.type != KernelType::ExponentiatedQuadratic || n == 0) return cache;
  const Eigen::Index d = k.lengthscales.size();
  VecT<T> ilam(d);
  for (Eigen::Index i = 0; i < d; ++i) ilam(i) = T(1.0) / (k.lengthscales(i) * k.lengthscales(i));
  const T sf4 = k.signal_variance * k.signal_variance;
  cache.scale = MatT<T>(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a; b < n; ++b) {
      T s = T(0.0);
      for (Eigen::Index i = 0; i < d; ++i) {
        const T diff = basis[a].location(i) - basis[b].location(i);
        s += diff * diff * ilam(i);
      }
      cache.scale(a, b) = sf4 * exp(T(-0.25) * s);
      cache.scale(b, a) = cache.scale(a, b);
    }
  }
  return cache;
}

namespace detail {

// Shared per-belief state for EQ expectations.
template <typename T>
struct EqBeliefCache {
  VecT<T> ilam;      // 1 / lengthscale^2
  MatT<T> chol1;     // chol(Sigma + Lambda)
  MatT<T> chol2;     // chol(Sigma + Lambda/2)
  MatT<T> w1;        // Sigma (Sigma + Lambda)^-1
  MatT<T> w2;        // Sigma (Sigma + Lambda/2)^-1
  MatT<T> v2;        // Sigma - w2 Sigma (pair product covariance)
  T norm1;           // sqrt(det Lambda / det(Sigma + Lambda))
  T norm2;           // sqrt(det(Lambda/2) / det(Sigma + Lambda/2))
};

template <typename T>
EqBeliefCache<T> build_eq_belief_cache(const KernelParamsT<T>& k, const MatT<T>& cov) {
  using ad::exp;
  using ad::log;
  const Eigen::Index d = k.lengthscales.size();
  EqBeliefCache<T> c;
  c.ilam.resize(d);
  T logdet_lam = T(0.0);
  for (Eigen::Index i = 0; i < d; ++i) {
    const T l2 = k.lengthscales(i) * k.lengthscales(i);
    c.ilam(i) = T(1.0) / l2;
    logdet_lam += log(l2);
  }
  MatT<T> a1 = cov;
  MatT<T> a2 = cov;
  for (Eigen::Index i = 0; i < d; ++i) {
    const T l2 = k.lengthscales(i) * k.lengthscales(i);
    a1(i, i) += l2;
    a2(i, i) += T(0.5) * l2;
  }
  if (!linalg::cholesky(a1, c.chol1) || !linalg::cholesky(a2, c.chol2))
    throw ConditioningError("kernel expectations: belief covariance plus lengthscale matrix not positive definite");
  c.w1 = cov * linalg::cholesky_inverse(c.chol1);
  c.w2 = cov * linalg::cholesky_inverse(c.chol2);
  c.v2 = cov - c.w2 * cov;
  const T half = T(0.5);
  c.norm1 = exp(half * (logdet_lam - linalg::log_det_from_cholesky(c.chol1)));
  c.norm2 = exp(half * (logdet_lam + T(static_cast<double>(d)) * log(T(0.5)) -
                        linalg::log_det_from_cholesky(c.chol2)));
  return c;
}

// Linear-kernel features are exactly linear in x: phi(x) = g' x.
template <typename T>
VecT<T> linear_feature_grad(const KernelParamsT<T>& k, const BasisPointT<T>& b) {
  const Eigen::Index d = k.weight_variances.size();
  VecT<T> g = VecT<T>::Zero(d);
  if (b.is_value()) {
    for (Eigen::Index i = 0; i < d; ++i) g(i) = k.weight_variances(i) * b.location(i);
  } else {
    g(b.deriv_dim) = k.weight_variances(b.deriv_dim);
  }
  return g;
}

}  // namespace detail

// E[phi_b(x)], E[phi_a(x) phi_b(x)], and E[k(x, x)] under x ~ N(mean, cov),
// computed together so per-belief work is shared. `pair_cache` may be null.
template <typename T>
void expected_features(const KernelParamsT<T>& k, const std::vector<BasisPointT<T>>& basis,
                       const PairCache<T>* pair_cache, const VecT<T>& mean, const MatT<T>& cov,
                       VecT<T>& q, MatT<T>& outer, T& kdiag) {
  using ad::exp;
  const Eigen::Index n = static_cast<Eigen::Index>(basis.size());
  const Eigen::Index d = mean.size();
  q.resize(n);
  outer.resize(n, n);

  if (k.type == KernelType::Linear) {
    std::vector<VecT<T>> grads(basis.size());
    for (size_t b = 0; b < basis.size(); ++b) grads[b] = detail::linear_feature_grad(k, basis[b]);
    VecT<T> g_mu(n);
    std::vector<VecT<T>> sig_g(basis.size());
    for (Eigen::Index b = 0; b < n; ++b) {
      g_mu(b) = grads[b].dot(mean);
      sig_g[b] = cov * grads[b];
      q(b) = g_mu(b);
    }
    for (Eigen::Index a = 0; a < n; ++a) {
      for (Eigen::Index b = a; b < n; ++b) {
        outer(a, b) = g_mu(a) * g_mu(b) + grads[a].dot(sig_g[b]);
        outer(b, a) = outer(a, b);
      }
    }
    kdiag = T(0.0);
    for (Eigen::Index i = 0; i < d; ++i)
      kdiag += k.weight_variances(i) * (cov(i, i) + mean(i) * mean(i));
    return;
  }

  const detail::EqBeliefCache<T> bc = detail::build_eq_belief_cache(k, cov);

  // Single-feature expectations.
  const T sf2 = k.signal_variance;
  std::vector<VecT<T>> post_mean1(basis.size());
  for (Eigen::Index b = 0; b < n; ++b) {
    VecT<T> delta = mean - basis[b].location;
    const T e = exp(T(-0.5) * linalg::quad_form_inv(bc.chol1, delta));
    const T qval = sf2 * bc.norm1 * e;
    if (basis[b].is_value()) {
      q(b) = qval;
    } else {
      VecT<T> m1 = mean - bc.w1 * delta;  // posterior mean of N(mu,Sigma) * bump at z_b
      const int j = basis[b].deriv_dim;
      q(b) = qval * (m1(j) - basis[b].location(j)) * bc.ilam(j);
    }
  }

  // Pairwise expectations.
  PairCache<T> local;
  const PairCache<T>* pc = pair_cache;
  if (pc == nullptr || pc->scale.rows() != n) {
    local = build_pair_cache(k, basis);
    pc = &local;
  }
  VecT<T> cmid(d), u(d), m2(d);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a; b < n; ++b) {
      for (Eigen::Index i = 0; i < d; ++i)
        cmid(i) = T(0.5) * (basis[a].location(i) + basis[b].location(i));
      u = mean - cmid;
      const T e = exp(T(-0.5) * linalg::quad_form_inv(bc.chol2, u));
      const T s = pc->scale(a, b) * bc.norm2 * e;
      T factor;
      const bool av = basis[a].is_value();
      const bool bv = basis[b].is_value();
      if (av && bv) {
        factor = T(1.0);
      } else {
        m2 = mean - bc.w2 * u;
        if (av || bv) {
          const auto& der = av ? basis[b] : basis[a];
          const int j = der.deriv_dim;
          factor = (m2(j) - der.location(j)) * bc.ilam(j);
        } else {
          const int i = basis[a].deriv_dim;
          const int j = basis[b].deriv_dim;
          const T da = (m2(i) - basis[a].location(i)) * bc.ilam(i);
          const T db = (m2(j) - basis[b].location(j)) * bc.ilam(j);
          factor = bc.v2(i, j) * bc.ilam(i) * bc.ilam(j) + da * db;
        }
      }
      outer(a, b) = s * factor;
      outer(b, a) = outer(a, b);
    }
  }

  kdiag = sf2;
}

// ---------------------------------------------------------------------------
// Validated double-precision entry points.

namespace detail {
inline void check_belief_for_expectations(const GaussianBelief& belief, int dim) {
  if (belief.dim() != dim)
    throw ShapeError("kernel expectations: belief dimension does not match kernel");
  belief.validate();
}
}  // namespace detail

inline Vec expected_feature_vec(const KernelHyperparams& k, const GaussianBelief& belief,
                                const std::vector<AugmentedBasisPoint>& basis) {
  validate(k);
  detail::check_belief_for_expectations(belief, k.dim());
  Vec q;
  Mat outer;
  double kdiag;
  expected_features(k, basis, static_cast<const PairCache<double>*>(nullptr), belief.mean,
                    belief.cov, q, outer, kdiag);
  return q;
}

inline Mat expected_feature_outer(const KernelHyperparams& k, const GaussianBelief& belief,
                                  const std::vector<AugmentedBasisPoint>& basis) {
  validate(k);
  detail::check_belief_for_expectations(belief, k.dim());
  Vec q;
  Mat outer;
  double kdiag;
  expected_features(k, basis, static_cast<const PairCache<double>*>(nullptr), belief.mean,
                    belief.cov, q, outer, kdiag);
  return outer;
}

inline double expected_kernel_diag(const KernelHyperparams& k, const GaussianBelief& belief) {
  validate(k);
  detail::check_belief_for_expectations(belief, k.dim());
  if (k.type == KernelType::ExponentiatedQuadratic) return k.signal_variance;
  double s = 0.0;
  for (Eigen::Index i = 0; i < belief.dim(); ++i)
    s += k.weight_variances(i) * (belief.cov(i, i) + belief.mean(i) * belief.mean(i));
  return s;
}

}  // namespace kernels
