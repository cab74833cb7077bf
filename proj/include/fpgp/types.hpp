#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace fpgp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

template <typename T>
using VecT = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using MatT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

// Error taxonomy. Shape and domain problems throw; fit failures are reported
// in-band by FitResult so the last valid iterate survives.
struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct NumericDomainError : std::runtime_error {
  explicit NumericDomainError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConditioningError : std::runtime_error {
  explicit ConditioningError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InitError : std::runtime_error {
  explicit InitError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Multivariate normal belief over a latent state.
struct GaussianBelief {
  Vec mean;
  Mat cov;

  GaussianBelief() = default;
  GaussianBelief(Vec m, Mat c) : mean(std::move(m)), cov(std::move(c)) {}

  static GaussianBelief dirac(const Vec& m) {
    return GaussianBelief(m, Mat::Zero(m.size(), m.size()));
  }

  static GaussianBelief isotropic(const Vec& m, double var) {
    return GaussianBelief(m, var * Mat::Identity(m.size(), m.size()));
  }

  Eigen::Index dim() const { return mean.size(); }

  // Symmetry within 1e-12 relative, eigenvalues >= -1e-10 * scale.
  void validate() const {
    if (cov.rows() != mean.size() || cov.cols() != mean.size())
      throw ShapeError("GaussianBelief: covariance shape does not match mean");
    if (!mean.allFinite() || !cov.allFinite())
      throw NumericDomainError("GaussianBelief: non-finite entries");
    const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
      throw NumericDomainError("GaussianBelief: covariance not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(cov, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-10 * scale)
      throw NumericDomainError("GaussianBelief: covariance not positive semidefinite");
  }
};

}  // namespace fpgp
