#include "fpgp/learn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "fpgp/rng.hpp"

namespace fpgp::learn {

namespace {

constexpr double kLogFloor = 1e-12;

double safe_log(double x) { return std::log(std::max(x, kLogFloor)); }

}  // namespace

const ManifestEntry* ParamManifest::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

ParamManifest build_manifest(const SystemModel& model, const std::vector<std::string>& freeze) {
  validate(model);
  ParamManifest man;
  man.dx = model.transition.dx();
  man.dy = model.observation.dy();
  man.m = model.transition.inducing.m();
  man.p = model.transition.fixed_points.p();
  man.kernel_type = model.transition.kernel.type;
  man.jacobian_noise_follows_sigma_s = model.transition.jacobian_noise_follows_sigma_s;

  auto add = [&man](const std::string& name, int size, Transform tf) {
    if (size == 0) return;
    man.entries.push_back({name, man.total, size, tf, false});
    man.total += size;
  };

  const int d = man.dx;
  if (man.kernel_type == kernels::KernelType::ExponentiatedQuadratic) {
    add("kernel.lengthscales", d, Transform::Log);
    add("kernel.signal_variance", 1, Transform::Log);
  } else {
    add("kernel.weight_variances", d, Transform::Log);
  }
  add("inducing.Z", man.m * d, Transform::Identity);
  add("inducing.U", man.m * d, Transform::Identity);
  add("inducing.sigma_u", man.m, Transform::Log);
  add("fixed_points.S", man.p * d, Transform::Identity);
  add("fixed_points.sigma_s", man.p, Transform::Log);
  add("fixed_points.J", man.p * d * d, Transform::Identity);
  add("transition.sigma_eps", d, Transform::Log);
  add("observation.C", man.dy * d, Transform::Identity);
  add("observation.sigma_eta", man.dy, Transform::Log);
  add("init.mu0", d, Transform::Identity);
  add("init.sigma0", d, Transform::Log);

  for (const auto& name : freeze) {
    bool found = false;
    for (auto& e : man.entries)
      if (e.name == name) {
        e.frozen = true;
        found = true;
      }
    if (!found) throw ConfigError("freeze list names unknown parameter field: " + name);
  }
  return man;
}

Vec pack(const SystemModel& model, const ParamManifest& manifest) {
  const int d = manifest.dx;
  Vec theta(manifest.total);
  for (const auto& e : manifest.entries) {
    Eigen::Map<Vec> slice(theta.data() + e.offset, e.size);
    if (e.name == "kernel.lengthscales") {
      for (int i = 0; i < e.size; ++i) slice(i) = safe_log(model.transition.kernel.lengthscales(i));
    } else if (e.name == "kernel.signal_variance") {
      slice(0) = safe_log(model.transition.kernel.signal_variance);
    } else if (e.name == "kernel.weight_variances") {
      for (int i = 0; i < e.size; ++i)
        slice(i) = safe_log(model.transition.kernel.weight_variances(i));
    } else if (e.name == "inducing.Z") {
      for (int i = 0; i < manifest.m; ++i)
        for (int j = 0; j < d; ++j) slice(i * d + j) = model.transition.inducing.Z(i, j);
    } else if (e.name == "inducing.U") {
      for (int i = 0; i < manifest.m; ++i)
        for (int j = 0; j < d; ++j) slice(i * d + j) = model.transition.inducing.U(i, j);
    } else if (e.name == "inducing.sigma_u") {
      for (int i = 0; i < e.size; ++i) slice(i) = safe_log(model.transition.inducing.sigma_u(i));
    } else if (e.name == "fixed_points.S") {
      for (int i = 0; i < manifest.p; ++i)
        for (int j = 0; j < d; ++j) slice(i * d + j) = model.transition.fixed_points.S(i, j);
    } else if (e.name == "fixed_points.sigma_s") {
      for (int i = 0; i < e.size; ++i)
        slice(i) = safe_log(model.transition.fixed_points.sigma_s(i));
    } else if (e.name == "fixed_points.J") {
      for (int i = 0; i < manifest.p; ++i)
        for (int r = 0; r < d; ++r)
          for (int c = 0; c < d; ++c)
            slice(i * d * d + r * d + c) = model.transition.fixed_points.J[i](r, c);
    } else if (e.name == "transition.sigma_eps") {
      for (int i = 0; i < e.size; ++i) slice(i) = safe_log(model.transition.sigma_eps(i));
    } else if (e.name == "observation.C") {
      for (int r = 0; r < manifest.dy; ++r)
        for (int c = 0; c < d; ++c) slice(r * d + c) = model.observation.C(r, c);
    } else if (e.name == "observation.sigma_eta") {
      for (int i = 0; i < e.size; ++i) slice(i) = safe_log(model.observation.sigma_eta(i));
    } else if (e.name == "init.mu0") {
      for (int i = 0; i < e.size; ++i) slice(i) = model.init.mu0(i);
    } else if (e.name == "init.sigma0") {
      for (int i = 0; i < e.size; ++i) slice(i) = safe_log(model.init.sigma0(i));
    }
  }
  return theta;
}

template <typename T>
SystemModelT<T> unpack(const ParamManifest& manifest, const VecT<T>& theta) {
  using ad::exp;
  if (theta.size() != manifest.total)
    throw ShapeError("unpack: parameter vector length does not match manifest");
  const int d = manifest.dx;
  SystemModelT<T> sys;
  sys.transition.kernel.type = manifest.kernel_type;
  sys.transition.jacobian_noise_follows_sigma_s = manifest.jacobian_noise_follows_sigma_s;
  sys.transition.inducing.Z = MatT<T>(manifest.m, d);
  sys.transition.inducing.U = MatT<T>(manifest.m, d);
  sys.transition.inducing.sigma_u = VecT<T>(manifest.m);
  sys.transition.fixed_points.S = MatT<T>(manifest.p, d);
  sys.transition.fixed_points.sigma_s = VecT<T>(manifest.p);
  sys.transition.fixed_points.J.assign(manifest.p, MatT<T>(d, d));
  sys.transition.sigma_eps = VecT<T>(d);
  sys.observation.C = MatT<T>(manifest.dy, d);
  sys.observation.sigma_eta = VecT<T>(manifest.dy);
  sys.init.mu0 = VecT<T>(d);
  sys.init.sigma0 = VecT<T>(d);

  for (const auto& e : manifest.entries) {
    auto at = [&](int i) { return theta(e.offset + i); };
    if (e.name == "kernel.lengthscales") {
      sys.transition.kernel.lengthscales.resize(d);
      for (int i = 0; i < d; ++i) sys.transition.kernel.lengthscales(i) = exp(at(i));
    } else if (e.name == "kernel.signal_variance") {
      sys.transition.kernel.signal_variance = exp(at(0));
    } else if (e.name == "kernel.weight_variances") {
      sys.transition.kernel.weight_variances.resize(d);
      for (int i = 0; i < d; ++i) sys.transition.kernel.weight_variances(i) = exp(at(i));
    } else if (e.name == "inducing.Z") {
      for (int i = 0; i < manifest.m; ++i)
        for (int j = 0; j < d; ++j) sys.transition.inducing.Z(i, j) = at(i * d + j);
    } else if (e.name == "inducing.U") {
      for (int i = 0; i < manifest.m; ++i)
        for (int j = 0; j < d; ++j) sys.transition.inducing.U(i, j) = at(i * d + j);
    } else if (e.name == "inducing.sigma_u") {
      for (int i = 0; i < manifest.m; ++i) sys.transition.inducing.sigma_u(i) = exp(at(i));
    } else if (e.name == "fixed_points.S") {
      for (int i = 0; i < manifest.p; ++i)
        for (int j = 0; j < d; ++j) sys.transition.fixed_points.S(i, j) = at(i * d + j);
    } else if (e.name == "fixed_points.sigma_s") {
      for (int i = 0; i < manifest.p; ++i) sys.transition.fixed_points.sigma_s(i) = exp(at(i));
    } else if (e.name == "fixed_points.J") {
      for (int i = 0; i < manifest.p; ++i)
        for (int r = 0; r < d; ++r)
          for (int c = 0; c < d; ++c)
            sys.transition.fixed_points.J[i](r, c) = at(i * d * d + r * d + c);
    } else if (e.name == "transition.sigma_eps") {
      for (int i = 0; i < d; ++i) sys.transition.sigma_eps(i) = exp(at(i));
    } else if (e.name == "observation.C") {
      for (int r = 0; r < manifest.dy; ++r)
        for (int c = 0; c < d; ++c) sys.observation.C(r, c) = at(r * d + c);
    } else if (e.name == "observation.sigma_eta") {
      for (int i = 0; i < manifest.dy; ++i) sys.observation.sigma_eta(i) = exp(at(i));
    } else if (e.name == "init.mu0") {
      for (int i = 0; i < d; ++i) sys.init.mu0(i) = at(i);
    } else if (e.name == "init.sigma0") {
      for (int i = 0; i < d; ++i) sys.init.sigma0(i) = exp(at(i));
    }
  }
  return sys;
}

template SystemModelT<double> unpack<double>(const ParamManifest&, const VecT<double>&);
template SystemModelT<ad::Rev> unpack<ad::Rev>(const ParamManifest&, const VecT<ad::Rev>&);

double objective(const ParamManifest& manifest, const Vec& theta,
                 const TrajectoryDataset& data) {
  SystemModel sys = unpack<double>(manifest, theta);
  return adf::log_marginal_likelihood_core<double>(sys, data);
}

namespace {

Vec adjoint_gradient(const ParamManifest& manifest, const Vec& theta,
                     const TrajectoryDataset& data) {
  Vec g = Vec::Zero(manifest.total);
  ad::Tape tape;
  for (const auto& y : data.trials) {
    tape.clear();
    ad::active_tape() = &tape;
    VecT<ad::Rev> th(manifest.total);
    std::vector<int32_t> input_idx(manifest.total);
    for (int i = 0; i < manifest.total; ++i) {
      th(i) = ad::Rev::input(theta(i));
      input_idx[i] = th(i).idx;
    }
    ad::Rev ll;
    try {
      SystemModelT<ad::Rev> sys = unpack<ad::Rev>(manifest, th);
      auto post = fpsgp::build_posterior(sys.transition);
      ll = adf::filter_trial_core(post, sys.transition.sigma_eps, sys.observation, sys.init, y);
    } catch (...) {
      ad::active_tape() = nullptr;
      throw;
    }
    auto adj = tape.backward(ll.idx);
    ad::active_tape() = nullptr;
    for (int i = 0; i < manifest.total; ++i) g(i) += adj[input_idx[i]];
  }
  return g;
}

Vec fd_gradient(const ParamManifest& manifest, const Vec& theta, const TrajectoryDataset& data) {
  constexpr double kStep = 1e-5;
  Vec g = Vec::Zero(manifest.total);
  Vec work = theta;
  for (const auto& e : manifest.entries) {
    if (e.frozen) continue;
    for (int i = e.offset; i < e.offset + e.size; ++i) {
      const double saved = work(i);
      work(i) = saved + kStep;
      const double up = objective(manifest, work, data);
      work(i) = saved - kStep;
      const double down = objective(manifest, work, data);
      work(i) = saved;
      g(i) = (up - down) / (2.0 * kStep);
    }
  }
  return g;
}

}  // namespace

Vec gradient(const ParamManifest& manifest, const Vec& theta, const TrajectoryDataset& data,
             GradientMethod method) {
  Vec g = method == GradientMethod::Adjoint ? adjoint_gradient(manifest, theta, data)
                                            : fd_gradient(manifest, theta, data);
  for (const auto& e : manifest.entries)
    if (e.frozen) g.segment(e.offset, e.size).setZero();
  return g;
}

namespace {

double objective_or_nan(const ParamManifest& manifest, const Vec& theta,
                        const TrajectoryDataset& data) {
  try {
    return objective(manifest, theta, data);
  } catch (const std::exception&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

struct AscentOutcome {
  Vec theta;
  double objective = std::numeric_limits<double>::quiet_NaN();
  std::vector<IterRecord> trace;
  FitStatus status = FitStatus::Failed;
  std::string message;
};

// Adaptive-moment gradient ascent; a proposed step that lowers the objective
// halves the step scale and retries, so the accepted trace is non-decreasing.
AscentOutcome ascend(const ParamManifest& manifest, Vec theta, const TrajectoryDataset& data,
                     const FitConfig& cfg, int restart_index) {
  AscentOutcome out;
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;

  double current = objective_or_nan(manifest, theta, data);
  if (!std::isfinite(current)) {
    out.theta = theta;
    out.message = "objective non-finite at initialization";
    return out;
  }

  Vec m = Vec::Zero(manifest.total);
  Vec v = Vec::Zero(manifest.total);
  double scale = 1.0;
  int flat_streak = 0;

  for (int it = 1; it <= cfg.max_iterations; ++it) {
    Vec g;
    try {
      g = gradient(manifest, theta, data, cfg.gradient_method);
    } catch (const std::exception& e) {
      out.theta = theta;
      out.objective = current;
      out.status = FitStatus::Failed;
      out.message = std::string("gradient evaluation failed: ") + e.what();
      return out;
    }
    if (!g.allFinite()) {
      out.theta = theta;
      out.objective = current;
      out.status = FitStatus::Failed;
      out.message = "non-finite gradient";
      return out;
    }

    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(kBeta1, it);
    const double c2 = 1.0 - std::pow(kBeta2, it);
    Vec dir = (m / c1).cwiseQuotient(((v / c2).cwiseSqrt().array() + kEps).matrix());

    bool accepted = false;
    double proposed = std::numeric_limits<double>::quiet_NaN();
    Vec theta_new;
    int nonfinite_halvings = 0;
    for (int attempt = 0; attempt < 16; ++attempt) {
      theta_new = theta + cfg.step_size * scale * dir;
      proposed = objective_or_nan(manifest, theta_new, data);
      if (!std::isfinite(proposed)) {
        ++nonfinite_halvings;
        if (nonfinite_halvings > 5) {
          out.theta = theta;
          out.objective = current;
          out.status = FitStatus::Failed;
          out.message = "persistent non-finite objective after 5 step reductions";
          return out;
        }
        scale *= 0.5;
        continue;
      }
      if (proposed >= current) {
        accepted = true;
        break;
      }
      scale *= 0.5;
      if (attempt == 7) {
        // stale momentum can stop being an ascent direction; reset it
        m = g;
        v = g.cwiseProduct(g);
        dir = m.cwiseQuotient((v.cwiseSqrt().array() + kEps).matrix());
      }
    }

    if (!accepted) {
      // The scaled direction can fail on sharp ridges even after the
      // momentum reset; the raw gradient is an ascent direction for some
      // step, so search along it before giving up.
      const double gmax = g.cwiseAbs().maxCoeff();
      if (gmax > 0.0) {
        Vec gdir = g / gmax;
        double gscale = 1.0;
        for (int attempt = 0; attempt < 24; ++attempt) {
          theta_new = theta + cfg.step_size * gscale * gdir;
          proposed = objective_or_nan(manifest, theta_new, data);
          if (std::isfinite(proposed) && proposed > current) {
            accepted = true;
            m = g;
            v = g.cwiseProduct(g);
            scale = std::max(scale, 1e-4);
            break;
          }
          gscale *= 0.5;
        }
      }
    }

    if (!accepted) {
      // no improving step at the smallest scale: treat as converged
      out.theta = theta;
      out.objective = current;
      out.status = FitStatus::Converged;
      out.message = "no ascent step found at minimum scale";
      return out;
    }

    const double delta = proposed - current;
    theta = theta_new;
    current = proposed;
    scale = std::min(scale * 1.5, 1.0);
    out.trace.push_back({it, current, g.norm(), cfg.step_size * scale});

    if (cfg.log != nullptr && (it % std::max(1, cfg.log_every) == 0 || it == 1)) {
      (*cfg.log) << "restart " << restart_index << " iteration " << it << " objective "
                 << current << " grad_norm " << g.norm() << " step "
                 << cfg.step_size * scale << "\n";
      cfg.log->flush();
    }

    if (std::abs(delta) < cfg.tolerance * (1.0 + std::abs(current))) {
      if (++flat_streak >= 5) {
        out.theta = theta;
        out.objective = current;
        out.status = FitStatus::Converged;
        out.message = "relative objective change below tolerance";
        return out;
      }
    } else {
      flat_streak = 0;
    }
  }

  out.theta = theta;
  out.objective = current;
  out.status = FitStatus::MaxIterations;
  out.message = "maximum iterations reached";
  return out;
}

// One kernel-weighted linear regression of successors on predecessors,
// centered at x so the intercept is the map value and the coefficients are
// its Jacobian.
struct LocalLinearFit {
  Vec value;
  Mat slope;
  double weight = 0.0;
  bool ok = false;
};

LocalLinearFit local_linear_map(const TrajectoryDataset& data, const Vec& x, double h) {
  const int d = data.dy();
  LocalLinearFit out;
  Mat xtx = Mat::Zero(d + 1, d + 1);
  Mat xty = Mat::Zero(d + 1, d);
  double wsum = 0.0;
  for (const auto& y : data.trials) {
    for (Eigen::Index t = 0; t + 1 < y.rows(); ++t) {
      const Vec xt = y.row(t).transpose();
      const double w = std::exp(-0.5 * (xt - x).squaredNorm() / (h * h));
      if (w < 1e-12) continue;
      Vec reg(d + 1);
      reg(0) = 1.0;
      reg.tail(d) = xt - x;
      xtx += w * reg * reg.transpose();
      xty += w * reg * y.row(t + 1);
      wsum += w;
    }
  }
  // Fewer than a few effective points cannot identify value plus slope.
  if (wsum < 3.0) return out;
  xtx.diagonal().array() += 1e-9 * wsum;
  const Mat beta = xtx.ldlt().solve(xty);
  out.value = beta.row(0).transpose();
  out.slope = beta.bottomRows(d).transpose();
  out.weight = wsum;
  out.ok = out.value.allFinite() && out.slope.allFinite();
  return out;
}

}  // namespace

std::vector<EmpiricalFixedPoint> empirical_fixed_points(const TrajectoryDataset& data,
                                                        double bandwidth) {
  data.validate();
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth))
    throw NumericDomainError("empirical fixed points: bandwidth must be positive");
  const int d = data.dy();
  const double scale = std::max(data.observation_scale(), 1e-12);

  Vec lo = Vec::Constant(d, std::numeric_limits<double>::infinity());
  Vec hi = Vec::Constant(d, -std::numeric_limits<double>::infinity());
  std::vector<Vec> pts;
  for (const auto& y : data.trials)
    for (Eigen::Index t = 0; t < y.rows(); ++t) {
      const Vec v = y.row(t).transpose();
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
      pts.push_back(v);
    }
  const Vec margin = 0.1 * (hi - lo).cwiseMax(1e-3);

  std::vector<Vec> seeds;
  const size_t stride = std::max<size_t>(1, pts.size() / 64);
  for (size_t i = 0; i < pts.size(); i += stride) seeds.push_back(pts[i]);

  std::vector<EmpiricalFixedPoint> roots;
  for (const auto& seed : seeds) {
    Vec x = seed;
    bool ok = false;
    Mat slope;
    double weight = 0.0;
    for (int it = 0; it < 50; ++it) {
      const LocalLinearFit lm = local_linear_map(data, x, bandwidth);
      if (!lm.ok) break;
      const Mat a = lm.slope - Mat::Identity(d, d);
      Vec step = a.fullPivLu().solve(lm.value - x);
      if (!step.allFinite()) break;
      // Capped steps keep the iteration inside the data's reach.
      const double cap = 0.5 * scale;
      if (step.norm() > cap) step *= cap / step.norm();
      x -= step;
      if ((x.array() < (lo - margin).array()).any() ||
          (x.array() > (hi + margin).array()).any())
        break;
      if (step.norm() < 1e-9 * scale) {
        const LocalLinearFit fin = local_linear_map(data, x, bandwidth);
        ok = fin.ok && (fin.value - x).norm() < 1e-6 * scale;
        slope = fin.slope;
        weight = fin.weight;
        break;
      }
    }
    if (!ok) continue;
    bool dup = false;
    for (const auto& r : roots)
      if ((r.location - x).norm() < 0.25 * scale) { dup = true; break; }
    if (!dup) roots.push_back({x, slope, weight});
  }
  std::sort(roots.begin(), roots.end(), [](const EmpiricalFixedPoint& a,
                                           const EmpiricalFixedPoint& b) {
    if (a.weight != b.weight) return a.weight > b.weight;
    for (Eigen::Index i = 0; i < a.location.size(); ++i)
      if (a.location(i) != b.location(i)) return a.location(i) < b.location(i);
    return false;
  });
  return roots;
}

FitResult fit(const TrajectoryDataset& data, const FitConfig& config,
              const std::optional<SystemModel>& init) {
  data.validate();
  SystemModel base = init.has_value() ? *init : auto_init_system(data, config);
  validate(base);
  ParamManifest manifest = build_manifest(base, config.freeze);
  const Vec theta0 = pack(base, manifest);
  const double data_scale = data.observation_scale();

  FitResult result;
  result.manifest = manifest;
  result.objective = -std::numeric_limits<double>::infinity();
  bool any_valid = false;

  auto user_frozen = [&config](const char* name) {
    return std::find(config.freeze.begin(), config.freeze.end(), name) != config.freeze.end();
  };
  // Later restarts re-seed the fixed-point slots at data-supported roots and
  // co-adapt the rest of the model around them before releasing everything;
  // plain joint ascent from a washed-out state almost never tightens a slot
  // because the objective is locally flat in sigma_s there.
  const bool can_plant = manifest.p > 0 && !user_frozen("fixed_points.S") &&
                         !user_frozen("fixed_points.sigma_s") && !user_frozen("fixed_points.J");

  const int restarts = std::max(1, config.restarts);
  for (int r = 0; r < restarts; ++r) {
    AscentOutcome run;
    bool informed = false;
    const bool plant_this =
        can_plant && (config.restart_plan == RestartPlan::PlantAll
                          ? true
                          : config.restart_plan == RestartPlan::PlantLater && r > 0 && any_valid);
    if (plant_this) {
      static constexpr double kBandwidthFactors[] = {0.4, 0.25, 0.55};
      const int variant = config.restart_plan == RestartPlan::PlantAll ? r : r - 1;
      const double h = kBandwidthFactors[variant % 3] * data_scale;
      const auto roots = empirical_fixed_points(data, std::max(h, 1e-12));
      if (!roots.empty()) {
        const bool from_best = r > 0 && any_valid;
        SystemModel planted = unpack<double>(manifest, from_best ? result.theta : theta0);
        auto& fp = planted.transition.fixed_points;
        for (int i = 0; i < fp.p(); ++i) {
          if (i < static_cast<int>(roots.size())) {
            fp.S.row(i) = roots[i].location.transpose();
            fp.sigma_s(i) = 0.2 * data_scale;
            fp.J[i] = roots[i].slope;
          } else {
            fp.sigma_s(i) = 5.0 * data_scale;
          }
        }
        std::vector<std::string> freeze_planted = config.freeze;
        freeze_planted.insert(freeze_planted.end(),
                              {"fixed_points.S", "fixed_points.sigma_s", "fixed_points.J"});
        const ParamManifest man_planted = build_manifest(planted, freeze_planted);
        AscentOutcome held = ascend(man_planted, pack(planted, man_planted), data, config, r);
        if (std::isfinite(held.objective)) {
          // The held stage ends near-stationary, so the usual flat-streak
          // exit would fire immediately; let the polish run its budget. A
          // candidate that commits to planted slots polishes on half budget
          // so the release cannot slowly unwind what the held stage built.
          FitConfig polish = config;
          polish.tolerance = 0.0;
          if (config.restart_plan == RestartPlan::PlantAll)
            polish.max_iterations = std::max(1, config.max_iterations / 2);
          AscentOutcome freed = ascend(manifest, held.theta, data, polish, r);
          if (std::isfinite(freed.objective)) {
            run = std::move(freed);
            const int held_last = held.trace.empty() ? 0 : held.trace.back().iteration;
            for (auto& rec : run.trace) rec.iteration += held_last;
            run.trace.insert(run.trace.begin(), held.trace.begin(), held.trace.end());
            informed = true;
          }
        }
      }
    }
    if (!informed) {
      Vec theta = theta0;
      if (r > 0) {
        auto gen = rng::substream(config.seed, "restart", static_cast<uint64_t>(r));
        std::normal_distribution<double> nd;
        for (const auto& e : manifest.entries) {
          if (e.frozen) continue;
          const double jitter =
              e.transform == Transform::Log ? 0.25 : 0.2 * data_scale;
          for (int i = e.offset; i < e.offset + e.size; ++i) theta(i) += jitter * nd(gen);
        }
      }
      run = ascend(manifest, theta, data, config, r);
    }
    result.restart_objectives.push_back(run.objective);
    if (std::isfinite(run.objective)) {
      any_valid = true;
      if (run.objective > result.objective) {
        result.objective = run.objective;
        result.theta = run.theta;
        result.trace = run.trace;
        result.status = run.status;
        result.message = run.message;
      }
    } else if (!any_valid) {
      result.message = run.message.empty() ? "all restarts failed" : run.message;
    }
  }

  if (any_valid) {
    result.model = unpack<double>(manifest, result.theta);
  } else {
    result.model = base;
    if (result.theta.size() == 0) result.theta = theta0;
    if (result.status != FitStatus::Failed) result.status = FitStatus::Failed;
  }
  return result;
}

namespace {

// Pooled state estimates (one row per observed step) using the pseudo-inverse
// of C when the observation map is not the identity.
Mat pooled_states(const TrajectoryDataset& data) {
  int rows = 0;
  for (const auto& y : data.trials) rows += static_cast<int>(y.rows());
  Mat x(rows, data.dy());
  int at = 0;
  for (const auto& y : data.trials) {
    x.middleRows(at, y.rows()) = y;
    at += static_cast<int>(y.rows());
  }
  return x;
}

double quantile(std::vector<double> v, double level) {
  std::sort(v.begin(), v.end());
  const double pos = level * (static_cast<double>(v.size()) - 1.0);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, v.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return (1.0 - w) * v[lo] + w * v[hi];
}

Mat kmeans_centers(const Mat& x, int k, uint64_t seed) {
  auto gen = rng::substream(seed, "init-kmeans");
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  Mat centers(k, d);

  // k-means++ seeding
  std::uniform_int_distribution<int> first(0, n - 1);
  centers.row(0) = x.row(first(gen));
  Vec dist2 = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = dist2.sum();
    if (total <= 0.0) {
      centers.row(c) = x.row(first(gen));
    } else {
      std::uniform_real_distribution<double> ud(0.0, total);
      double target = ud(gen);
      int pick = n - 1;
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        acc += dist2(i);
        if (acc >= target) {
          pick = i;
          break;
        }
      }
      centers.row(c) = x.row(pick);
    }
    for (int i = 0; i < n; ++i)
      dist2(i) = std::min(dist2(i), (x.row(i) - centers.row(c)).squaredNorm());
  }

  std::vector<int> assign(n, 0);
  for (int iter = 0; iter < 25; ++iter) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d2 = (x.row(i) - centers.row(c)).squaredNorm();
        if (d2 < bd) {
          bd = d2;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    Mat sums = Mat::Zero(k, d);
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      sums.row(assign[i]) += x.row(i);
      ++counts[assign[i]];
    }
    std::uniform_int_distribution<int> anyrow(0, n - 1);
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0)
        centers.row(c) = sums.row(c) / static_cast<double>(counts[c]);
      else
        centers.row(c) = x.row(anyrow(gen));
    }
    if (!changed) break;
  }
  return centers;
}

}  // namespace

TransitionModel auto_init(const TrajectoryDataset& data, int m_inducing, int p_fixed_points,
                          kernels::KernelType kernel_type, uint64_t seed) {
  data.validate();
  if (m_inducing < 1) throw ConfigError("auto_init: need at least one inducing point");
  if (p_fixed_points < 0) throw ConfigError("auto_init: negative fixed-point count");

  const Mat x = pooled_states(data);
  const int d = static_cast<int>(x.cols());
  const double data_scale = data.observation_scale();

  TransitionModel model;

  // Inducing locations.
  if (d == 1) {
    std::vector<double> col(x.data(), x.data() + x.rows());
    model.inducing.Z = Mat(m_inducing, 1);
    for (int i = 0; i < m_inducing; ++i)
      model.inducing.Z(i, 0) =
          quantile(col, static_cast<double>(i + 1) / static_cast<double>(m_inducing + 1));
  } else {
    model.inducing.Z = kmeans_centers(x, m_inducing, seed);
  }

  // Inducing values: successor-state means in each nearest-neighbor cell.
  Mat succ_sum = Mat::Zero(m_inducing, d);
  std::vector<int> succ_count(m_inducing, 0);
  for (const auto& y : data.trials) {
    for (Eigen::Index t = 0; t + 1 < y.rows(); ++t) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < m_inducing; ++c) {
        const double d2 = (y.row(t) - model.inducing.Z.row(c)).squaredNorm();
        if (d2 < bd) {
          bd = d2;
          best = c;
        }
      }
      succ_sum.row(best) += y.row(t + 1);
      ++succ_count[best];
    }
  }
  model.inducing.U = Mat(m_inducing, d);
  for (int c = 0; c < m_inducing; ++c) {
    if (succ_count[c] > 0)
      model.inducing.U.row(c) = succ_sum.row(c) / static_cast<double>(succ_count[c]);
    else
      model.inducing.U.row(c) = model.inducing.Z.row(c);  // identity-map fallback
  }
  model.inducing.sigma_u = Vec::Constant(m_inducing, data_scale);

  // Fixed-point slots at per-dimension quantiles, mid-strength Jacobians.
  model.fixed_points.S = Mat(p_fixed_points, d);
  for (int i = 0; i < p_fixed_points; ++i) {
    const double level = static_cast<double>(i + 1) / static_cast<double>(p_fixed_points + 1);
    for (int j = 0; j < d; ++j) {
      std::vector<double> col(x.rows());
      for (Eigen::Index r = 0; r < x.rows(); ++r) col[r] = x(r, j);
      model.fixed_points.S(i, j) = quantile(col, level);
    }
  }
  model.fixed_points.sigma_s = Vec::Constant(p_fixed_points, data_scale);
  model.fixed_points.J.assign(p_fixed_points, 0.5 * Mat::Identity(d, d));
  model.sigma_eps = Vec::Constant(d, 0.5 * data_scale);

  // Kernel scales from the data spread.
  if (kernel_type == kernels::KernelType::ExponentiatedQuadratic) {
    const int nsub = std::min<int>(400, static_cast<int>(x.rows()));
    auto gen = rng::substream(seed, "init-lengthscale");
    std::uniform_int_distribution<int> pick(0, static_cast<int>(x.rows()) - 1);
    Vec ls(d);
    for (int j = 0; j < d; ++j) {
      std::vector<double> diffs;
      diffs.reserve(static_cast<size_t>(nsub) * (nsub - 1) / 2);
      std::vector<int> idx(nsub);
      for (int i = 0; i < nsub; ++i) idx[i] = pick(gen);
      for (int a = 0; a < nsub; ++a)
        for (int b = a + 1; b < nsub; ++b) {
          const double diff = std::abs(x(idx[a], j) - x(idx[b], j));
          if (diff > 0.0) diffs.push_back(diff);
        }
      ls(j) = diffs.empty() ? std::max(data_scale, 1e-3) : quantile(diffs, 0.5);
      ls(j) = std::max(ls(j), 1e-3 * data_scale);
    }
    model.kernel = kernels::eq_kernel(data_scale * data_scale, ls);
  } else {
    model.kernel = kernels::linear_kernel(Vec::Ones(d));
  }

  return model;
}

SystemModel auto_init_system(const TrajectoryDataset& data, const FitConfig& config) {
  SystemModel sys;
  sys.transition = auto_init(data, config.m_inducing, config.p_fixed_points, config.kernel_type,
                             config.seed);
  sys.transition.jacobian_noise_follows_sigma_s = config.jacobian_noise_follows_sigma_s;
  const int d = sys.transition.dx();
  const double data_scale = data.observation_scale();

  sys.observation.C = Mat::Identity(d, d);
  sys.observation.sigma_eta = Vec::Constant(d, 0.1 * data_scale);

  // First observed step's moments anchor the initial belief.
  Mat first(data.n(), d);
  for (int i = 0; i < data.n(); ++i) first.row(i) = data.trials[i].row(0);
  sys.init.mu0 = first.colwise().mean();
  sys.init.sigma0 = Vec(d);
  for (int j = 0; j < d; ++j) {
    const double var =
        (first.col(j).array() - sys.init.mu0(j)).square().sum() /
        std::max(1.0, static_cast<double>(data.n() - 1));
    sys.init.sigma0(j) = std::max(std::sqrt(var), 1e-3 * data_scale);
  }
  return sys;
}

}  // namespace fpgp::learn
