#pragma once

// Assumed density filtering through the learned transition map. Each step
// pushes the current diagonal Gaussian belief through the GP by moment
// matching, applies an exact linear-Gaussian measurement update, and projects
// the posterior back to a diagonal Gaussian. Step log-likelihoods summed over
// steps and trials form the exact learning objective.

#include <cmath>
#include <vector>

#include "fpgp/fpsgp.hpp"
#include "fpgp/linalg.hpp"

namespace fpgp {

// Linear-Gaussian observation: y = C x + eta, eta ~ N(0, diag(sigma_eta^2)).
template <typename T>
struct ObservationModelT {
  MatT<T> C;            // D_y x D_x, D_x <= D_y
  VecT<T> sigma_eta;    // D_y

  int dy() const { return static_cast<int>(C.rows()); }
  int dx() const { return static_cast<int>(C.cols()); }
};

using ObservationModel = ObservationModelT<double>;

inline void validate(const ObservationModel& obs) {
  if (obs.sigma_eta.size() != obs.C.rows())
    throw ShapeError("observation model: sigma_eta must have one entry per output row");
  if (obs.C.cols() > obs.C.rows())
    throw ShapeError("observation model: latent dimension must not exceed observed dimension");
  if (!obs.C.allFinite() || !obs.sigma_eta.allFinite())
    throw NumericDomainError("observation model: non-finite entries");
  for (Eigen::Index i = 0; i < obs.sigma_eta.size(); ++i)
    if (obs.sigma_eta(i) < 0.0)
      throw NumericDomainError("observation model: sigma_eta must be nonnegative");
}

// Initial latent belief with diagonal covariance, stored as std devs.
template <typename T>
struct LatentInitT {
  VecT<T> mu0;
  VecT<T> sigma0;  // diag(Sigma0) = sigma0^2

  int dx() const { return static_cast<int>(mu0.size()); }
};

using LatentInit = LatentInitT<double>;

inline void validate(const LatentInit& init) {
  if (init.sigma0.size() != init.mu0.size())
    throw ShapeError("latent init: sigma0 must match mu0 in size");
  if (!init.mu0.allFinite() || !init.sigma0.allFinite())
    throw NumericDomainError("latent init: non-finite entries");
  for (Eigen::Index i = 0; i < init.sigma0.size(); ++i)
    if (init.sigma0(i) < 0.0) throw NumericDomainError("latent init: sigma0 must be nonnegative");
}

template <typename T>
struct SystemModelT {
  TransitionModelT<T> transition;
  ObservationModelT<T> observation;
  LatentInitT<T> init;
};

using SystemModel = SystemModelT<double>;

inline void validate(const SystemModel& sys) {
  validate(sys.transition);
  validate(sys.observation);
  validate(sys.init);
  if (sys.observation.dx() != sys.transition.dx() || sys.init.dx() != sys.transition.dx())
    throw ShapeError("system model: latent dimensions disagree");
}

// Observed trajectories. Rows of each trial matrix are time steps t = 1..T.
struct TrajectoryDataset {
  std::vector<Mat> trials;       // each T_n x D_y
  std::vector<double> control;   // optional per-trial control tag (size N or 0)

  int n() const { return static_cast<int>(trials.size()); }
  int dy() const { return trials.empty() ? 0 : static_cast<int>(trials.front().cols()); }

  void validate() const {
    if (trials.empty()) throw ShapeError("dataset: at least one trial required");
    const Eigen::Index d = trials.front().cols();
    for (const auto& y : trials) {
      if (y.rows() < 2) throw ShapeError("dataset: each trial needs at least two steps");
      if (y.cols() != d) throw ShapeError("dataset: inconsistent observation dimension");
      if (!y.allFinite()) throw NumericDomainError("dataset: non-finite observations");
    }
    if (!control.empty() && control.size() != trials.size())
      throw ShapeError("dataset: control tags must cover every trial or none");
  }

  // Pooled standard deviation of all observation entries around their mean.
  double observation_scale() const {
    double n_total = 0.0, mean = 0.0;
    for (const auto& y : trials) {
      n_total += static_cast<double>(y.size());
      mean += y.sum();
    }
    mean /= n_total;
    double ss = 0.0;
    for (const auto& y : trials) ss += (y.array() - mean).square().sum();
    const double sd = std::sqrt(ss / std::max(1.0, n_total - 1.0));
    return sd > 0.0 ? sd : 1.0;
  }
};

namespace adf {

template <typename T>
struct UpdateResultT {
  VecT<T> mean;
  MatT<T> cov;
  T loglik;
};

// Exact Kalman measurement update of a predicted belief, plus the step's
// predictive log-likelihood log N(y; C mu, C Sigma C' + diag(sigma_eta^2)).
template <typename T>
UpdateResultT<T> update_core(const VecT<T>& pred_mean, const MatT<T>& pred_cov,
                             const ObservationModelT<T>& obs, const VecT<T>& y) {
  using ad::log;
  const Eigen::Index dy = obs.C.rows();

  MatT<T> c_sigma = obs.C * pred_cov;                 // D_y x D_x
  MatT<T> s_fwd = c_sigma * obs.C.transpose();        // D_y x D_y
  for (Eigen::Index i = 0; i < dy; ++i) s_fwd(i, i) += obs.sigma_eta(i) * obs.sigma_eta(i);

  MatT<T> chol;
  if (!linalg::cholesky(s_fwd, chol))
    throw ConditioningError("adf update: singular forward covariance");

  VecT<T> resid = y - obs.C * pred_mean;

  // Sigma^back = Sigma C' [S_fwd]^-1, via solves against the factor.
  MatT<T> back = linalg::cholesky_solve_mat(chol, MatT<T>(c_sigma)).transpose();  // D_x x D_y

  UpdateResultT<T> out;
  out.mean = pred_mean + back * resid;
  MatT<T> cov = pred_cov - back * c_sigma;
  out.cov = T(0.5) * (cov + MatT<T>(cov.transpose()));

  VecT<T> r = resid;
  const T quad = linalg::quad_form_inv(chol, r);
  const T logdet = linalg::log_det_from_cholesky(chol);
  out.loglik =
      T(-0.5) * (T(static_cast<double>(dy)) * T(std::log(2.0 * M_PI)) + logdet + quad);
  return out;
}

struct UpdateResult {
  GaussianBelief posterior;
  double loglik;
};

inline UpdateResult update(const GaussianBelief& predicted, const ObservationModel& obs,
                           const Vec& y) {
  validate(obs);
  predicted.validate();
  if (predicted.dim() != obs.dx()) throw ShapeError("adf update: belief dimension mismatch");
  if (y.size() != obs.dy()) throw ShapeError("adf update: observation dimension mismatch");
  auto r = update_core<double>(predicted.mean, predicted.cov, obs, y);
  return {GaussianBelief(r.mean, r.cov), r.loglik};
}

// Projection onto independent per-dimension Gaussians (drop off-diagonals).
inline GaussianBelief diagonalize(const GaussianBelief& belief) {
  return GaussianBelief(belief.mean, Mat(belief.cov.diagonal().asDiagonal()));
}

// One trial's filtering pass. Beliefs are recorded (when requested) with the
// full update-step covariance; the recursion itself carries the diagonal.
// sigma_eps enters the propagated variance additively each step.
template <typename T>
T filter_trial_core(const gp::GpPosterior<T>& post, const VecT<T>& sigma_eps,
                    const ObservationModelT<T>& obs, const LatentInitT<T>& init,
                    const Mat& y_trial, std::vector<GaussianBelief>* predicted_out = nullptr,
                    std::vector<GaussianBelief>* posterior_out = nullptr) {
  const Eigen::Index dx = init.mu0.size();
  const Eigen::Index steps = y_trial.rows();

  VecT<T> mean = init.mu0;
  MatT<T> cov = MatT<T>::Zero(dx, dx);
  for (Eigen::Index i = 0; i < dx; ++i) cov(i, i) = init.sigma0(i) * init.sigma0(i);

  T total = T(0.0);
  VecT<T> pred_mean, pred_var;
  for (Eigen::Index t = 0; t < steps; ++t) {
    gp::predict_moments(post, mean, cov, pred_mean, pred_var);
    for (Eigen::Index i = 0; i < dx; ++i) pred_var(i) += sigma_eps(i) * sigma_eps(i);
    MatT<T> pred_cov = MatT<T>::Zero(dx, dx);
    for (Eigen::Index i = 0; i < dx; ++i) pred_cov(i, i) = pred_var(i);

    VecT<T> y(y_trial.cols());
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = T(y_trial(t, i));
    auto up = update_core(pred_mean, pred_cov, obs, y);
    total += up.loglik;

    if (predicted_out != nullptr) {
      Vec pm(dx), pv(dx);
      for (Eigen::Index i = 0; i < dx; ++i) {
        pm(i) = ad::to_double(pred_mean(i));
        pv(i) = ad::to_double(pred_var(i));
      }
      predicted_out->emplace_back(pm, Mat(pv.asDiagonal()));
    }
    if (posterior_out != nullptr) {
      Vec m(dx);
      Mat c(dx, dx);
      for (Eigen::Index i = 0; i < dx; ++i) {
        m(i) = ad::to_double(up.mean(i));
        for (Eigen::Index j = 0; j < dx; ++j) c(i, j) = ad::to_double(up.cov(i, j));
      }
      posterior_out->emplace_back(m, c);
    }

    mean = up.mean;
    cov = MatT<T>::Zero(dx, dx);
    for (Eigen::Index i = 0; i < dx; ++i) cov(i, i) = up.cov(i, i);
  }
  return total;
}

struct FilterResult {
  std::vector<GaussianBelief> predicted;  // diagonal propagated beliefs per step
  std::vector<GaussianBelief> posterior;  // full update posteriors per step
  double loglik = 0.0;
};

inline FilterResult filter_trial(const SystemModel& sys, const Mat& y_trial) {
  validate(sys);
  if (y_trial.rows() < 1) throw ShapeError("adf filter: trial must have at least one step");
  if (y_trial.cols() != sys.observation.dy())
    throw ShapeError("adf filter: observation dimension mismatch");
  auto post = fpsgp::build_posterior(sys.transition);
  FilterResult out;
  out.loglik = filter_trial_core<double>(post, sys.transition.sigma_eps, sys.observation,
                                         sys.init, y_trial, &out.predicted, &out.posterior);
  return out;
}

// Sum of step log-likelihoods across trials: the exact learning objective.
template <typename T>
T log_marginal_likelihood_core(const SystemModelT<T>& sys, const TrajectoryDataset& data) {
  auto post = fpsgp::build_posterior(sys.transition);
  T total = T(0.0);
  for (const auto& y : data.trials)
    total += filter_trial_core(post, sys.transition.sigma_eps, sys.observation, sys.init, y);
  return total;
}

inline double log_marginal_likelihood(const SystemModel& sys, const TrajectoryDataset& data) {
  validate(sys);
  data.validate();
  if (data.dy() != sys.observation.dy())
    throw ShapeError("adf: dataset observation dimension mismatch");
  return log_marginal_likelihood_core<double>(sys, data);
}

}  // namespace adf

}  // namespace fpgp
