#pragma once

// Maximum-likelihood fitting of the transition and observation parameters.
// All learnable fields are flattened into one unconstrained vector through a
// manifest; positive scalars travel through log space. Gradients come from
// the reverse-mode tape by default, with central finite differences as an
// independent fallback.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fpgp/adf.hpp"

namespace fpgp::learn {

enum class Transform { Identity, Log };
enum class GradientMethod { Adjoint, CentralDifference };
enum class FitStatus { Converged, MaxIterations, Failed };

// How restarts beyond the first differ. JitterOnly perturbs the start point.
// PlantLater runs the first restart plainly and re-seeds fixed-point slots at
// empirical roots in later ones. PlantAll re-seeds slots in every restart, so
// each candidate commits to data-supported fixed points; use it when the
// diagram downstream needs slot estimates rather than raw likelihood.
enum class RestartPlan { JitterOnly, PlantLater, PlantAll };

struct ManifestEntry {
  std::string name;
  int offset = 0;
  int size = 0;
  Transform transform = Transform::Identity;
  bool frozen = false;
};

// Fixed field order; every learnable field appears exactly once.
struct ParamManifest {
  std::vector<ManifestEntry> entries;
  int total = 0;
  int dx = 0;
  int dy = 0;
  int m = 0;
  int p = 0;
  kernels::KernelType kernel_type = kernels::KernelType::ExponentiatedQuadratic;
  bool jacobian_noise_follows_sigma_s = true;

  const ManifestEntry* find(const std::string& name) const;
};

ParamManifest build_manifest(const SystemModel& model,
                             const std::vector<std::string>& freeze = {});

Vec pack(const SystemModel& model, const ParamManifest& manifest);

template <typename T>
SystemModelT<T> unpack(const ParamManifest& manifest, const VecT<T>& theta);

double objective(const ParamManifest& manifest, const Vec& theta,
                 const TrajectoryDataset& data);

// Gradient of the objective; frozen slices are exactly zero.
Vec gradient(const ParamManifest& manifest, const Vec& theta, const TrajectoryDataset& data,
             GradientMethod method = GradientMethod::Adjoint);

struct FitConfig {
  int m_inducing = 16;
  int p_fixed_points = 5;
  kernels::KernelType kernel_type = kernels::KernelType::ExponentiatedQuadratic;
  GradientMethod gradient_method = GradientMethod::Adjoint;
  int max_iterations = 500;
  double tolerance = 1e-7;   // relative objective change for convergence
  double step_size = 0.05;   // adaptive-moment base rate in unconstrained space
  int restarts = 3;
  RestartPlan restart_plan = RestartPlan::PlantLater;
  std::vector<std::string> freeze;
  uint64_t seed = 0;
  bool jacobian_noise_follows_sigma_s = true;
  std::ostream* log = nullptr;  // line-oriented progress records
  int log_every = 25;
};

struct IterRecord {
  int iteration = 0;
  double objective = 0.0;
  double grad_norm = 0.0;
  double step = 0.0;
};

struct FitResult {
  SystemModel model;
  ParamManifest manifest;
  Vec theta;
  double objective = 0.0;
  std::vector<IterRecord> trace;           // accepted iterations of the best restart
  std::vector<double> restart_objectives;  // final objective per restart
  FitStatus status = FitStatus::Failed;
  std::string message;
};

FitResult fit(const TrajectoryDataset& data, const FitConfig& config,
              const std::optional<SystemModel>& init = std::nullopt);

// Deterministic data-driven initialization: inducing locations at state
// quantiles (1-D) or seeded k-means (multi-D), inducing values from successor
// means, fixed-point slots at per-dimension state quantiles with J = 0.5 I,
// noise scales from the data standard deviation.
TransitionModel auto_init(const TrajectoryDataset& data, int m_inducing, int p_fixed_points,
                          kernels::KernelType kernel_type, uint64_t seed);

SystemModel auto_init_system(const TrajectoryDataset& data, const FitConfig& config);

struct EmpiricalFixedPoint {
  Vec location;
  Mat slope;      // local-linear Jacobian estimate at the root
  double weight;  // effective sample count behind the estimate
};

// Roots of a kernel-weighted local-linear estimate of the one-step map,
// found by Newton iteration from data-spanning seeds and deduplicated.
// Model-free: informed restarts plant fixed-point slots here, and the same
// estimate serves as a quick diagnostic of where the data pins the map.
// Sorted by descending weight so the best-supported roots come first.
std::vector<EmpiricalFixedPoint> empirical_fixed_points(const TrajectoryDataset& data,
                                                        double bandwidth);

}  // namespace fpgp::learn
