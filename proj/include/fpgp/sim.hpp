#pragma once
// Ground-truth simulators used for validation: a scalar stochastic pitchfork
// map and a symmetric two-population mutual-inhibition circuit, together with
// their nullclines and analytically checked fixed points.

#include <cstdint>
#include <complex>
#include <vector>

#include <fpgp/adf.hpp>
#include <fpgp/stability.hpp>
#include <fpgp/types.hpp>

namespace fpgp::sim {

// x(t+1) = r x(t) - x(t)^3 + eps,  eps ~ N(0, sigma^2), x(0) ~ N(mu0, s0^2).
// Observations equal states; rows are t = 1..n_steps, x(0) stays hidden.
struct PitchforkParams {
  double r = 1.5;
  double noise_std = 0.2;
  int n_steps = 20;
  int n_trials = 32;
  double init_mean = 0.0;
  double init_std = 0.001;
  uint64_t seed = 0;
};

void validate(const PitchforkParams& p);
TrajectoryDataset simulate_pitchfork(const PitchforkParams& p);

struct PitchforkFixedPoint {
  double location = 0.0;
  double derivative = 0.0;  // map slope r - 3 x^2 at the point
  bool stable = false;      // |derivative| < 1
};

// Always contains 0; for r > 1 adds +-sqrt(r-1) with slope 3 - 2r. Sorted by
// location.
std::vector<PitchforkFixedPoint> true_fixed_points_pitchfork(double r);

// Two mutually inhibiting rate populations driven by a shared input:
//   Pos(t+1) = Pos(t) + leak * (-Pos(t) + f(-omega_i Neg(t) + e_ext)) + eps
// and symmetrically for Neg, with the response function
//   f(I) = amplitude * tanh(gain * (I - threshold)) + baseline.
// The relaxation toward the driven rate keeps the update contractive in each
// coordinate; with the defaults below the circuit has a single stable fixed
// point for small e_ext and a saddle flanked by two mirror-image stable
// points once e_ext exceeds roughly 0.93.
struct MutualInhibitionParams {
  double e_ext = 1.4;
  double omega_i = 1.0;
  double leak = 0.5;
  double noise_std = 0.1;
  double gain = 4.0;
  double threshold = 1.0;
  double amplitude = 0.5;
  double baseline = 0.5;
  int n_steps = 80;
  int n_trials = 60;
  Vec init_mean = Vec::Constant(2, 0.5);
  double init_std = 0.3;
  uint64_t seed = 0;
};

void validate(const MutualInhibitionParams& p);

double response(const MutualInhibitionParams& p, double input);
double response_slope(const MutualInhibitionParams& p, double input);

// Deterministic part of the update and its analytic Jacobian.
Vec mutual_update(const MutualInhibitionParams& p, const Vec& state);
Mat mutual_jacobian(const MutualInhibitionParams& p, const Vec& state);

TrajectoryDataset simulate_mutual_inhibition(const MutualInhibitionParams& p);

// Zero-increment loci sampled over a rate grid: on the Pos curve each row is
// (f(-omega_i v + e_ext), v) for grid value v, and symmetrically for Neg.
struct Nullclines {
  Mat pos;  // rows (Pos, Neg) where the Pos increment vanishes
  Mat neg;  // rows (Pos, Neg) where the Neg increment vanishes
};

Nullclines nullclines(const MutualInhibitionParams& p, const Vec& grid);
Nullclines nullclines(const MutualInhibitionParams& p, int n_points = 201);

struct MutualFixedPoint {
  Vec location;  // (Pos, Neg)
  Mat jacobian;  // 2x2 Jacobian of the deterministic update
  std::vector<std::complex<double>> eigenvalues;
  Stability cls = Stability::Stable;
};

// All roots of the deterministic update, found by a scan-and-bisect search
// on the scalar composition u -> f(e - w f(e - w u)), polished by Newton and
// deduplicated at 1e-6. Sorted by Pos then Neg coordinate. Every returned
// point satisfies ||update(x) - x||_inf < 1e-8.
std::vector<MutualFixedPoint> true_fixed_points_mutual(
    const MutualInhibitionParams& p);

}  // namespace fpgp::sim
