#include <fpgp/sim.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

#include <fpgp/rng.hpp>

namespace fpgp::sim {

void validate(const PitchforkParams& p) {
  if (!std::isfinite(p.r)) throw ConfigError("pitchfork: r must be finite");
  if (!(p.noise_std >= 0.0)) throw ConfigError("pitchfork: noise_std must be >= 0");
  if (p.n_steps < 2) throw ConfigError("pitchfork: n_steps must be >= 2");
  if (p.n_trials < 1) throw ConfigError("pitchfork: n_trials must be >= 1");
  if (!(p.init_std >= 0.0)) throw ConfigError("pitchfork: init_std must be >= 0");
  if (!std::isfinite(p.init_mean)) throw ConfigError("pitchfork: init_mean must be finite");
}

TrajectoryDataset simulate_pitchfork(const PitchforkParams& p) {
  validate(p);
  TrajectoryDataset data;
  data.trials.reserve(p.n_trials);
  data.control.assign(p.n_trials, p.r);
  for (int n = 0; n < p.n_trials; ++n) {
    auto gen = rng::substream(p.seed, "trial", static_cast<uint64_t>(n));
    std::normal_distribution<double> nd;
    double x = p.init_mean + p.init_std * nd(gen);
    Mat y(p.n_steps, 1);
    for (int t = 0; t < p.n_steps; ++t) {
      x = p.r * x - x * x * x + p.noise_std * nd(gen);
      y(t, 0) = x;
    }
    data.trials.push_back(std::move(y));
  }
  return data;
}

std::vector<PitchforkFixedPoint> true_fixed_points_pitchfork(double r) {
  std::vector<PitchforkFixedPoint> out;
  out.push_back({0.0, r, std::abs(r) < 1.0});
  if (r > 1.0) {
    const double loc = std::sqrt(r - 1.0);
    const double slope = 3.0 - 2.0 * r;
    out.push_back({loc, slope, std::abs(slope) < 1.0});
    out.push_back({-loc, slope, std::abs(slope) < 1.0});
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.location < b.location; });
  return out;
}

void validate(const MutualInhibitionParams& p) {
  if (!std::isfinite(p.e_ext)) throw ConfigError("mutual: e_ext must be finite");
  if (!(p.omega_i > 0.0)) throw ConfigError("mutual: omega_i must be > 0");
  if (!(p.leak > 0.0 && p.leak <= 1.0)) throw ConfigError("mutual: leak must be in (0, 1]");
  if (!(p.noise_std >= 0.0)) throw ConfigError("mutual: noise_std must be >= 0");
  if (!(p.gain > 0.0)) throw ConfigError("mutual: gain must be > 0");
  if (!(p.amplitude > 0.0)) throw ConfigError("mutual: amplitude must be > 0");
  if (!std::isfinite(p.threshold) || !std::isfinite(p.baseline))
    throw ConfigError("mutual: threshold and baseline must be finite");
  if (p.n_steps < 2) throw ConfigError("mutual: n_steps must be >= 2");
  if (p.n_trials < 1) throw ConfigError("mutual: n_trials must be >= 1");
  if (p.init_mean.size() != 2) throw ConfigError("mutual: init_mean must have 2 entries");
  if (!(p.init_std >= 0.0)) throw ConfigError("mutual: init_std must be >= 0");
}

double response(const MutualInhibitionParams& p, double input) {
  return p.amplitude * std::tanh(p.gain * (input - p.threshold)) + p.baseline;
}

double response_slope(const MutualInhibitionParams& p, double input) {
  const double th = std::tanh(p.gain * (input - p.threshold));
  return p.amplitude * p.gain * (1.0 - th * th);
}

Vec mutual_update(const MutualInhibitionParams& p, const Vec& state) {
  if (state.size() != 2) throw ShapeError("mutual_update: state must have 2 entries");
  Vec next(2);
  next(0) = state(0) + p.leak * (-state(0) + response(p, -p.omega_i * state(1) + p.e_ext));
  next(1) = state(1) + p.leak * (-state(1) + response(p, -p.omega_i * state(0) + p.e_ext));
  return next;
}

Mat mutual_jacobian(const MutualInhibitionParams& p, const Vec& state) {
  if (state.size() != 2) throw ShapeError("mutual_jacobian: state must have 2 entries");
  Mat j(2, 2);
  j(0, 0) = 1.0 - p.leak;
  j(1, 1) = 1.0 - p.leak;
  j(0, 1) = -p.leak * p.omega_i * response_slope(p, -p.omega_i * state(1) + p.e_ext);
  j(1, 0) = -p.leak * p.omega_i * response_slope(p, -p.omega_i * state(0) + p.e_ext);
  return j;
}

TrajectoryDataset simulate_mutual_inhibition(const MutualInhibitionParams& p) {
  validate(p);
  TrajectoryDataset data;
  data.trials.reserve(p.n_trials);
  data.control.assign(p.n_trials, p.e_ext);
  for (int n = 0; n < p.n_trials; ++n) {
    auto gen = rng::substream(p.seed, "trial", static_cast<uint64_t>(n));
    std::normal_distribution<double> nd;
    Vec x(2);
    x(0) = p.init_mean(0) + p.init_std * nd(gen);
    x(1) = p.init_mean(1) + p.init_std * nd(gen);
    Mat y(p.n_steps, 2);
    for (int t = 0; t < p.n_steps; ++t) {
      Vec next = mutual_update(p, x);
      next(0) += p.noise_std * nd(gen);
      next(1) += p.noise_std * nd(gen);
      x = next;
      y.row(t) = x.transpose();
    }
    data.trials.push_back(std::move(y));
  }
  return data;
}

Nullclines nullclines(const MutualInhibitionParams& p, const Vec& grid) {
  validate(p);
  if (grid.size() < 2) throw ConfigError("nullclines: grid needs at least 2 points");
  Nullclines out;
  out.pos.resize(grid.size(), 2);
  out.neg.resize(grid.size(), 2);
  for (int i = 0; i < grid.size(); ++i) {
    const double v = grid(i);
    out.pos(i, 0) = response(p, -p.omega_i * v + p.e_ext);
    out.pos(i, 1) = v;
    out.neg(i, 0) = v;
    out.neg(i, 1) = response(p, -p.omega_i * v + p.e_ext);
  }
  return out;
}

Nullclines nullclines(const MutualInhibitionParams& p, int n_points) {
  if (n_points < 2) throw ConfigError("nullclines: n_points must be >= 2");
  const double lo = p.baseline - p.amplitude;
  const double hi = p.baseline + p.amplitude;
  return nullclines(p, Vec::LinSpaced(n_points, lo, hi));
}

namespace {

// Scalar composition whose roots are exactly the Pos coordinates of fixed
// points: any root of update satisfies u = f(e - w f(e - w u)).
double composed_gap(const MutualInhibitionParams& p, double u) {
  const double partner = response(p, -p.omega_i * u + p.e_ext);
  return response(p, -p.omega_i * partner + p.e_ext) - u;
}

double composed_gap_slope(const MutualInhibitionParams& p, double u) {
  const double partner = response(p, -p.omega_i * u + p.e_ext);
  const double s1 = response_slope(p, -p.omega_i * u + p.e_ext);
  const double s2 = response_slope(p, -p.omega_i * partner + p.e_ext);
  return p.omega_i * p.omega_i * s1 * s2 - 1.0;
}

}  // namespace

std::vector<MutualFixedPoint> true_fixed_points_mutual(
    const MutualInhibitionParams& p) {
  validate(p);
  // All fixed-point coordinates lie in the closed range of f.
  const double lo = p.baseline - p.amplitude;
  const double hi = p.baseline + p.amplitude;
  const int n_cells = 1024;
  const double width = (hi - lo) / n_cells;

  std::vector<double> roots;
  std::vector<double> failed_starts;
  auto consider = [&](double a, double b) {
    double ga = composed_gap(p, a);
    double gb = composed_gap(p, b);
    if (ga == 0.0) {
      roots.push_back(a);
      return;
    }
    if (ga * gb > 0.0) return;
    double left = a, right = b;
    for (int it = 0; it < 200 && right - left > 1e-15; ++it) {
      const double mid = 0.5 * (left + right);
      const double gm = composed_gap(p, mid);
      if (gm == 0.0) {
        left = right = mid;
        break;
      }
      if (ga * gm < 0.0) {
        right = mid;
      } else {
        left = mid;
        ga = gm;
      }
    }
    double u = 0.5 * (left + right);
    for (int it = 0; it < 4; ++it) {
      const double slope = composed_gap_slope(p, u);
      if (std::abs(slope) < 1e-12) break;
      u -= composed_gap(p, u) / slope;
    }
    if (std::abs(composed_gap(p, u)) < 1e-10) {
      roots.push_back(u);
    } else {
      failed_starts.push_back(0.5 * (a + b));
    }
  };
  for (int i = 0; i < n_cells; ++i) consider(lo + i * width, lo + (i + 1) * width);
  {
    const double ghi = composed_gap(p, hi);
    if (ghi == 0.0) roots.push_back(hi);
  }

  if (!failed_starts.empty()) {
    std::ostringstream msg;
    msg << "fixed point search did not converge from starts:";
    for (double s : failed_starts) msg << " " << s;
    throw NumericDomainError(msg.str());
  }

  std::sort(roots.begin(), roots.end());
  std::vector<MutualFixedPoint> out;
  for (double u : roots) {
    if (!out.empty() && std::abs(u - out.back().location(0)) < 1e-6) continue;
    MutualFixedPoint fp;
    fp.location = Vec(2);
    fp.location << u, response(p, -p.omega_i * u + p.e_ext);
    fp.jacobian = mutual_jacobian(p, fp.location);
    Eigen::EigenSolver<Mat> es(fp.jacobian);
    if (es.info() != Eigen::Success)
      throw NumericDomainError("eigensolver failed on a true fixed point");
    for (int i = 0; i < 2; ++i) fp.eigenvalues.push_back(es.eigenvalues()(i));
    fp.cls = classify_eigenvalues(fp.eigenvalues).cls;
    out.push_back(std::move(fp));
  }
  for (const auto& fp : out) {
    const Vec gap = mutual_update(p, fp.location) - fp.location;
    if (gap.cwiseAbs().maxCoeff() >= 1e-8)
      throw NumericDomainError("fixed point residual above tolerance");
  }
  // Sort by Pos then Neg so output order is reproducible.
  std::sort(out.begin(), out.end(), [](const MutualFixedPoint& a, const MutualFixedPoint& b) {
    if (a.location(0) != b.location(0)) return a.location(0) < b.location(0);
    return a.location(1) < b.location(1);
  });
  return out;
}

}  // namespace fpgp::sim
