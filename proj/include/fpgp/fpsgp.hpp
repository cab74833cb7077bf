#pragma once

// Fixed-point augmented sparse GP. The inducing basis is extended with one
// value feature per fixed-point slot (whose target IS the slot location, so
// the posterior map is tied toward f(s) = s) and one derivative feature per
// slot and input dimension (whose targets are the slot's Jacobian entries).
// Per-slot noise sigma_s acts as an ARD switch: large values decouple the
// slot's value and Jacobian observations, recovering the plain SGP.

#include <vector>

#include "fpgp/sgp.hpp"

namespace fpgp {

// Fixed-point slots: locations S (P x D), isotropic location noise sigma_s
// (P), and per-slot Jacobians J[p] (D x D, entry (d1, d2) = df_d1/dx_d2).
template <typename T>
struct FixedPointSetT {
  MatT<T> S;
  VecT<T> sigma_s;
  std::vector<MatT<T>> J;

  int p() const { return static_cast<int>(S.rows()); }

  static FixedPointSetT empty(int dim) {
    FixedPointSetT fp;
    fp.S = MatT<T>(0, dim);
    fp.sigma_s = VecT<T>(0);
    return fp;
  }
};

using FixedPointSet = FixedPointSetT<double>;

inline void validate(const FixedPointSet& fp) {
  if (fp.sigma_s.size() != fp.S.rows())
    throw ShapeError("fixed points: sigma_s must have one entry per slot");
  if (static_cast<Eigen::Index>(fp.J.size()) != fp.S.rows())
    throw ShapeError("fixed points: one Jacobian per slot required");
  for (const auto& j : fp.J)
    if (j.rows() != fp.S.cols() || j.cols() != fp.S.cols())
      throw ShapeError("fixed points: Jacobian shape must match state dimension");
  if (!fp.S.allFinite() || !fp.sigma_s.allFinite())
    throw NumericDomainError("fixed points: non-finite entries");
  for (const auto& j : fp.J)
    if (!j.allFinite()) throw NumericDomainError("fixed points: non-finite Jacobian");
  for (Eigen::Index i = 0; i < fp.sigma_s.size(); ++i)
    if (!(fp.sigma_s(i) > 0.0))
      throw NumericDomainError("fixed points: sigma_s must be positive");
}

template <typename T>
struct TransitionModelT {
  kernels::KernelParamsT<T> kernel;
  InducingSetT<T> inducing;
  FixedPointSetT<T> fixed_points;
  // Additive transition noise std dev per state dimension; without it the
  // predictive variance of a confidently-pinned map underestimates the
  // state spread and the likelihood punishes tight fixed-point slots.
  VecT<T> sigma_eps;
  // When true (default), the Jacobian rows of a slot carry the slot's
  // sigma_s^2 as observation noise so a deactivated slot leaves no trace;
  // false keeps those rows at jitter-only noise.
  bool jacobian_noise_follows_sigma_s = true;

  int dx() const { return inducing.dim(); }
};

using TransitionModel = TransitionModelT<double>;

inline void validate(const TransitionModel& model) {
  kernels::validate(model.kernel);
  validate(model.inducing);
  validate(model.fixed_points);
  if (model.kernel.dim() != model.inducing.dim())
    throw ShapeError("transition model: kernel dimension mismatch");
  if (model.fixed_points.p() > 0 && model.fixed_points.S.cols() != model.inducing.Z.cols())
    throw ShapeError("transition model: fixed-point dimension mismatch");
  if (model.sigma_eps.size() != model.dx())
    throw ShapeError("transition model: sigma_eps must have one entry per state dimension");
  if (!model.sigma_eps.allFinite())
    throw NumericDomainError("transition model: non-finite sigma_eps");
  for (Eigen::Index i = 0; i < model.sigma_eps.size(); ++i)
    if (!(model.sigma_eps(i) > 0.0))
      throw NumericDomainError("transition model: sigma_eps must be positive");
}

namespace fpsgp {

// Basis order: inducing values, slot values, then slot derivative features
// with the derivative dimension as the outer index (dimension-major).
template <typename T>
std::vector<kernels::BasisPointT<T>> augmented_basis(const TransitionModelT<T>& model) {
  const int m = model.inducing.m();
  const int p = model.fixed_points.p();
  const int d = model.dx();
  std::vector<kernels::BasisPointT<T>> basis;
  basis.reserve(m + p + p * d);
  for (int i = 0; i < m; ++i)
    basis.push_back({VecT<T>(model.inducing.Z.row(i).transpose()), -1});
  for (int i = 0; i < p; ++i)
    basis.push_back({VecT<T>(model.fixed_points.S.row(i).transpose()), -1});
  for (int j = 0; j < d; ++j)
    for (int i = 0; i < p; ++i)
      basis.push_back({VecT<T>(model.fixed_points.S.row(i).transpose()), j});
  return basis;
}

template <typename T>
VecT<T> noise_vector(const TransitionModelT<T>& model) {
  const int m = model.inducing.m();
  const int p = model.fixed_points.p();
  const int d = model.dx();
  VecT<T> noise(m + p + p * d);
  for (int i = 0; i < m; ++i) noise(i) = model.inducing.sigma_u(i) * model.inducing.sigma_u(i);
  for (int i = 0; i < p; ++i) {
    const T s2 = model.fixed_points.sigma_s(i) * model.fixed_points.sigma_s(i);
    noise(m + i) = s2;
  }
  for (int j = 0; j < d; ++j)
    for (int i = 0; i < p; ++i) {
      if (model.jacobian_noise_follows_sigma_s) {
        noise(m + p + j * p + i) =
            model.fixed_points.sigma_s(i) * model.fixed_points.sigma_s(i);
      } else {
        noise(m + p + j * p + i) = T(0.0);
      }
    }
  return noise;
}

// Target columns, one per latent output dimension d: inducing values U(:, d),
// slot locations S(:, d) (the fixed-point tie), then Jacobian entries
// J[p](d, j) in basis order.
template <typename T>
MatT<T> augmented_targets_all(const TransitionModelT<T>& model) {
  const int m = model.inducing.m();
  const int p = model.fixed_points.p();
  const int d = model.dx();
  MatT<T> targets(m + p + p * d, d);
  for (int dim = 0; dim < d; ++dim) {
    for (int i = 0; i < m; ++i) targets(i, dim) = model.inducing.U(i, dim);
    for (int i = 0; i < p; ++i) targets(m + i, dim) = model.fixed_points.S(i, dim);
    for (int j = 0; j < d; ++j)
      for (int i = 0; i < p; ++i)
        targets(m + p + j * p + i, dim) = model.fixed_points.J[i](dim, j);
  }
  return targets;
}

template <typename T>
gp::GpPosterior<T> build_posterior(const TransitionModelT<T>& model) {
  return gp::build_posterior(model.kernel, augmented_basis(model), noise_vector(model),
                             augmented_targets_all(model));
}

// Validated double-precision module operations.

inline Mat assemble_block_gram(const TransitionModel& model) {
  validate(model);
  return build_posterior(model).gram;
}

inline Vec augmented_targets(const TransitionModel& model, int dim) {
  validate(model);
  if (dim < 0 || dim >= model.dx())
    throw ShapeError("fpsgp: target dimension out of range");
  return augmented_targets_all(model).col(dim);
}

inline sgp::Prediction predict(const TransitionModel& model, const Vec& x) {
  validate(model);
  if (x.size() != model.dx()) throw ShapeError("fpsgp: query dimension mismatch");
  auto post = build_posterior(model);
  auto r = gp::predict(post, x);
  return {r.mean, r.variance};
}

inline GaussianBelief predict_moments(const TransitionModel& model,
                                      const GaussianBelief& belief) {
  validate(model);
  belief.validate();
  if (belief.dim() != model.dx()) throw ShapeError("fpsgp: belief dimension mismatch");
  auto post = build_posterior(model);
  Vec mean, var;
  gp::predict_moments(post, belief.mean, belief.cov, mean, var);
  return GaussianBelief(mean, Mat(var.asDiagonal()));
}

inline Mat posterior_jacobian(const TransitionModel& model, const Vec& x) {
  validate(model);
  if (x.size() != model.dx()) throw ShapeError("fpsgp: query dimension mismatch");
  auto post = build_posterior(model);
  return gp::posterior_jacobian(post, x);
}

}  // namespace fpsgp

}  // namespace fpgp
