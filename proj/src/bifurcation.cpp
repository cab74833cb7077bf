#include <fpgp/bifurcation.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>

#include <fpgp/rng.hpp>

namespace fpgp::bifurcation {

std::vector<FixedPointEstimate> extract_fixed_points(const TransitionModel& model,
                                                     double data_scale,
                                                     double threshold) {
  validate(model);
  if (!(data_scale > 0.0))
    throw ConfigError("extract_fixed_points: data_scale must be > 0");
  if (!(threshold > 0.0 && threshold <= 1.0))
    throw ConfigError("extract_fixed_points: threshold must be in (0, 1]");

  std::vector<FixedPointEstimate> out;
  const int p = model.fixed_points.p();
  out.reserve(p);
  for (int i = 0; i < p; ++i) {
    FixedPointEstimate est;
    est.slot = i;
    est.location = model.fixed_points.S.row(i).transpose();
    est.jacobian = model.fixed_points.J[i];
    est.sigma_s = model.fixed_points.sigma_s(i);
    est.belief_strength = std::exp(-est.sigma_s / data_scale);
    est.active = est.belief_strength >= threshold;
    Eigen::EigenSolver<Mat> es(est.jacobian);
    if (es.info() != Eigen::Success) {
      std::ostringstream msg;
      msg << "extract_fixed_points: eigensolver failed on slot " << i;
      throw NumericDomainError(msg.str());
    }
    for (int k = 0; k < es.eigenvalues().size(); ++k)
      est.eigenvalues.push_back(es.eigenvalues()(k));
    est.eigenvectors = es.eigenvectors();
    const StabilityCall call = classify_eigenvalues(est.eigenvalues);
    est.cls = call.cls;
    est.marginal = call.marginal;
    est.max_abs_eig = call.max_abs_eig;
    out.push_back(std::move(est));
  }
  return out;
}

std::vector<FixedPointEstimate> dedupe(std::vector<FixedPointEstimate> estimates,
                                       double radius) {
  if (!(radius > 0.0)) throw ConfigError("dedupe: radius must be > 0");

  std::vector<int> active_order;
  for (int i = 0; i < static_cast<int>(estimates.size()); ++i)
    if (estimates[i].active) active_order.push_back(i);
  std::sort(active_order.begin(), active_order.end(), [&](int a, int b) {
    if (estimates[a].belief_strength != estimates[b].belief_strength)
      return estimates[a].belief_strength > estimates[b].belief_strength;
    return estimates[a].slot < estimates[b].slot;
  });

  std::vector<int> kept;
  std::vector<bool> absorbed(estimates.size(), false);
  for (int idx : active_order) {
    bool merged = false;
    for (int k : kept) {
      if ((estimates[idx].location - estimates[k].location).norm() <= radius) {
        estimates[k].merged_from.push_back(estimates[idx].slot);
        for (int s : estimates[idx].merged_from) estimates[k].merged_from.push_back(s);
        absorbed[idx] = true;
        merged = true;
        break;
      }
    }
    if (!merged) kept.push_back(idx);
  }

  std::vector<FixedPointEstimate> out;
  out.reserve(estimates.size());
  for (int i = 0; i < static_cast<int>(estimates.size()); ++i)
    if (!absorbed[i]) out.push_back(std::move(estimates[i]));
  std::sort(out.begin(), out.end(), [](const FixedPointEstimate& a,
                                       const FixedPointEstimate& b) {
    return a.slot < b.slot;
  });
  return out;
}

void validate(const BifurcationDiagram& diagram) {
  for (size_t i = 1; i < diagram.points.size(); ++i)
    if (!(diagram.points[i].control > diagram.points[i - 1].control))
      throw ConfigError("bifurcation diagram: control values must be strictly increasing");
}

namespace {

// Substreams keyed by the control value itself keep grid points independent
// of their position in the grid.
uint64_t control_stream(uint64_t master, const char* name, double control) {
  return rng::substream_seed(master, name, std::bit_cast<uint64_t>(control));
}

TrajectoryDataset simulate_point(const SimSpec& spec, double control, uint64_t seed) {
  if (std::holds_alternative<sim::PitchforkParams>(spec)) {
    sim::PitchforkParams p = std::get<sim::PitchforkParams>(spec);
    p.r = control;
    p.seed = seed;
    return sim::simulate_pitchfork(p);
  }
  sim::MutualInhibitionParams p = std::get<sim::MutualInhibitionParams>(spec);
  p.e_ext = control;
  p.seed = seed;
  return sim::simulate_mutual_inhibition(p);
}

DiagramPoint fit_point(double control, const TrajectoryDataset& data,
                       const SweepConfig& config,
                       const std::optional<SystemModel>& init,
                       std::optional<SystemModel>& fitted) {
  DiagramPoint point;
  point.control = control;
  point.data_scale = data.observation_scale();
  fitted.reset();
  try {
    learn::FitConfig fit_cfg = config.fit;
    fit_cfg.seed = control_stream(config.seed, "sweep-fit", control);
    learn::FitResult res = learn::fit(data, fit_cfg, init);
    point.fit.objective = res.objective;
    point.fit.iterations =
        res.trace.empty() ? 0 : res.trace.back().iteration;
    point.fit.restarts = static_cast<int>(res.restart_objectives.size());
    point.fit.status = res.status;
    point.fit.message = res.message;
    if (std::isfinite(res.objective)) {
      fitted = res.model;
      auto ests = extract_fixed_points(res.model.transition, point.data_scale,
                                       config.belief_threshold);
      point.estimates =
          dedupe(std::move(ests), config.dedupe_radius_scale * point.data_scale);
    }
  } catch (const std::exception& e) {
    point.fit.status = learn::FitStatus::Failed;
    point.fit.message = e.what();
    point.estimates.clear();
  }
  return point;
}

}  // namespace

BifurcationDiagram sweep_data(const Vec& grid,
                              const std::vector<TrajectoryDataset>& datasets,
                              const SweepConfig& config) {
  if (grid.size() == 0) throw ConfigError("sweep: empty grid");
  if (static_cast<Eigen::Index>(datasets.size()) != grid.size())
    throw ShapeError("sweep: one dataset per grid value required");
  for (int i = 1; i < grid.size(); ++i)
    if (!(grid(i) > grid(i - 1)))
      throw ConfigError("sweep: grid must be strictly increasing");

  BifurcationDiagram diagram;
  std::optional<SystemModel> prev;
  for (int i = 0; i < grid.size(); ++i) {
    std::optional<SystemModel> fitted;
    DiagramPoint point = fit_point(grid(i), datasets[i], config,
                                   config.warm_start ? prev : std::nullopt, fitted);
    diagram.points.push_back(std::move(point));
    prev = std::move(fitted);
  }
  validate(diagram);
  return diagram;
}

BifurcationDiagram sweep(const Vec& grid, const SweepConfig& config) {
  if (grid.size() == 0) throw ConfigError("sweep: empty grid");
  std::vector<TrajectoryDataset> datasets;
  datasets.reserve(grid.size());
  for (int i = 0; i < grid.size(); ++i)
    datasets.push_back(simulate_point(config.system, grid(i),
                                      control_stream(config.seed, "sweep-sim", grid(i))));
  return sweep_data(grid, datasets, config);
}

std::vector<EigenTraceEntry> eigen_trace(const BifurcationDiagram& diagram,
                                         const EigenTraceOptions& options) {
  if (diagram.points.empty()) throw ConfigError("eigen_trace: empty diagram");
  if (options.reference.size() == 0)
    throw ShapeError("eigen_trace: reference location required");
  if (!(options.radius > 0.0)) throw ConfigError("eigen_trace: radius must be > 0");

  Vec reference = options.reference;
  std::vector<EigenTraceEntry> trace;
  trace.reserve(diagram.points.size());
  for (const auto& point : diagram.points) {
    EigenTraceEntry entry;
    entry.control = point.control;
    const FixedPointEstimate* best = nullptr;
    double best_dist = options.radius;
    for (const auto& est : point.estimates) {
      if (!est.active) continue;
      if (est.location.size() != reference.size())
        throw ShapeError("eigen_trace: reference dimension mismatch");
      const double dist = (est.location - reference).norm();
      if (dist <= best_dist) {
        best_dist = dist;
        best = &est;
      }
    }
    if (best != nullptr) {
      entry.matched = true;
      entry.slot = best->slot;
      entry.location = best->location;
      entry.eigenvalues = best->eigenvalues;
      entry.eigenvectors = best->eigenvectors;
      entry.max_abs_eig = best->max_abs_eig;
      if (options.follow) reference = best->location;
    }
    trace.push_back(std::move(entry));
  }
  return trace;
}

}  // namespace fpgp::bifurcation
