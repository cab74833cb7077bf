#pragma once
// Fixed-point extraction from fitted transition models, stability
// classification, and control-parameter sweeps producing bifurcation
// diagrams and eigenvalue traces.

#include <complex>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include <fpgp/fpsgp.hpp>
#include <fpgp/learn.hpp>
#include <fpgp/sim.hpp>
#include <fpgp/stability.hpp>

namespace fpgp::bifurcation {

struct FixedPointEstimate {
  int slot = -1;
  Vec location;
  Mat jacobian;
  std::vector<std::complex<double>> eigenvalues;
  Eigen::MatrixXcd eigenvectors;  // one column per eigenvalue
  double sigma_s = 0.0;
  double belief_strength = 0.0;  // exp(-sigma_s / data_scale), in (0, 1]
  bool active = false;           // belief_strength >= threshold
  Stability cls = Stability::Stable;
  bool marginal = false;  // some |eigenvalue| within 1e-9 of 1
  double max_abs_eig = 0.0;
  std::vector<int> merged_from;  // slots absorbed during dedupe
};

// One estimate per slot, active or not. belief_strength decreases
// monotonically in sigma_s; slots below the threshold are flagged inactive
// but still reported so callers can re-threshold.
std::vector<FixedPointEstimate> extract_fixed_points(
    const TransitionModel& model, double data_scale, double threshold = 0.5);

// Merges active estimates within `radius` of each other, keeping the one
// with the highest belief and recording the absorbed slots. Inactive
// estimates never participate. Idempotent.
std::vector<FixedPointEstimate> dedupe(std::vector<FixedPointEstimate> estimates,
                                       double radius);

struct FitDiagnostics {
  double objective = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  int restarts = 0;
  learn::FitStatus status = learn::FitStatus::Failed;
  std::string message;
};

struct DiagramPoint {
  double control = 0.0;
  double data_scale = 1.0;
  std::vector<FixedPointEstimate> estimates;
  FitDiagnostics fit;
};

struct BifurcationDiagram {
  std::vector<DiagramPoint> points;  // control values strictly increasing
};

void validate(const BifurcationDiagram& diagram);

// Simulator template for a sweep; the control value overrides r or e_ext at
// each grid point.
using SimSpec = std::variant<sim::PitchforkParams, sim::MutualInhibitionParams>;

struct SweepConfig {
  SimSpec system = sim::PitchforkParams{};
  learn::FitConfig fit;
  double belief_threshold = 0.5;
  double dedupe_radius_scale = 0.25;  // radius = scale * data_scale
  bool warm_start = false;            // seed each fit with the previous model
  uint64_t seed = 0;
};

// Simulate, fit, extract and dedupe at every grid value. Each point draws
// its simulation and fit substreams from the control value itself, so the
// result does not depend on evaluation order (warm starts excepted).
// Per-point fit failures are recorded in the diagnostics and the sweep
// continues.
BifurcationDiagram sweep(const Vec& grid, const SweepConfig& config);

// Same, but fit caller-provided datasets instead of simulating.
BifurcationDiagram sweep_data(const Vec& grid,
                              const std::vector<TrajectoryDataset>& datasets,
                              const SweepConfig& config);

struct EigenTraceOptions {
  Vec reference;  // starting location to match against
  double radius = std::numeric_limits<double>::infinity();
  bool follow = true;  // move the reference to each matched location
};

struct EigenTraceEntry {
  double control = 0.0;
  bool matched = false;  // false marks a gap, nothing fabricated
  int slot = -1;
  Vec location;
  std::vector<std::complex<double>> eigenvalues;
  Eigen::MatrixXcd eigenvectors;
  double max_abs_eig = std::numeric_limits<double>::quiet_NaN();
};

// Tracks the active estimate nearest the reference across control values.
std::vector<EigenTraceEntry> eigen_trace(const BifurcationDiagram& diagram,
                                         const EigenTraceOptions& options);

}  // namespace fpgp::bifurcation
