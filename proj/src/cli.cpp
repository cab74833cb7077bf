#include <fpgp/cli.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include <fpgp/bifurcation.hpp>
#include <fpgp/io.hpp>
#include <fpgp/rng.hpp>

namespace fs = std::filesystem;

namespace fpgp::cli {

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::optional<uint64_t> seed;
  int threads = 1;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required) {
  auto* config = cmd->add_option("--config", opts.config_path,
                                 "Run configuration file (JSON)");
  if (config_required) config->required();
  cmd->add_option("--out", opts.out_dir, "Output directory (overrides config)");
  cmd->add_option("--seed", opts.seed, "Master seed (overrides config)");
  cmd->add_option("--threads", opts.threads, "Worker cap; the build runs single-threaded")
      ->check(CLI::PositiveNumber);
}

io::RunConfig resolve(const CommonOpts& opts) {
  io::RunConfig cfg;
  if (!opts.config_path.empty()) cfg = io::load_run_config(opts.config_path);
  if (opts.seed.has_value()) cfg.seed = *opts.seed;
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  fs::create_directories(cfg.out_dir);
  return cfg;
}

std::string out_path(const io::RunConfig& cfg, const std::string& name) {
  return (fs::path(cfg.out_dir) / name).string();
}

void emit_resolved(const io::RunConfig& cfg) {
  io::write_text_file(out_path(cfg, "resolved_config.json"),
                      io::resolved_config_text(cfg));
}

int do_simulate(const CommonOpts& opts) {
  io::RunConfig cfg = resolve(opts);
  if (cfg.pitchfork.has_value() == cfg.mutual.has_value())
    throw ConfigError(
        "config: simulate needs exactly one of 'pitchfork' or 'mutual_inhibition'");
  emit_resolved(cfg);

  TrajectoryDataset data;
  io::DatasetMeta meta;
  if (cfg.pitchfork.has_value()) {
    sim::PitchforkParams p = *cfg.pitchfork;
    p.seed = cfg.seed;
    data = sim::simulate_pitchfork(p);
    meta.kind = "pitchfork";
    meta.pitchfork = p;
  } else {
    sim::MutualInhibitionParams p = *cfg.mutual;
    p.seed = cfg.seed;
    data = sim::simulate_mutual_inhibition(p);
    meta.kind = "mutual_inhibition";
    meta.mutual = p;
  }
  io::write_dataset(out_path(cfg, "dataset.csv"), data);
  io::write_dataset_meta(out_path(cfg, "dataset.json"), meta);
  std::cout << "wrote " << out_path(cfg, "dataset.csv") << " (" << data.n()
            << " trials x " << data.trials.front().rows() << " steps x "
            << data.dy() << " channels)\n";
  return 0;
}

int do_fit(const CommonOpts& opts) {
  io::RunConfig cfg = resolve(opts);
  if (cfg.dataset_path.empty())
    throw ConfigError("config: fit requires 'dataset'");
  emit_resolved(cfg);

  TrajectoryDataset data = io::read_dataset(cfg.dataset_path);
  learn::FitConfig fit_cfg = cfg.fit;
  fit_cfg.seed = cfg.seed;
  std::ofstream log(out_path(cfg, "fit_log.txt"));
  fit_cfg.log = &log;
  learn::FitResult result = learn::fit(data, fit_cfg);

  io::ModelArchive archive;
  archive.model = result.model;
  archive.seed = cfg.seed;
  archive.config_hash = io::config_hash(io::resolved_config_text(cfg));
  io::save_model(out_path(cfg, "model.json"), archive);

  std::cout << "fit status=";
  switch (result.status) {
    case learn::FitStatus::Converged: std::cout << "converged"; break;
    case learn::FitStatus::MaxIterations: std::cout << "max_iterations"; break;
    default: std::cout << "failed"; break;
  }
  std::cout << " objective=" << result.objective
            << " iterations=" << (result.trace.empty() ? 0 : result.trace.back().iteration)
            << "\n";
  if (!result.message.empty()) std::cout << "note: " << result.message << "\n";
  std::cout << "wrote " << out_path(cfg, "model.json") << "\n";
  if (result.status == learn::FitStatus::Failed) {
    std::cerr << "fit failed: " << result.message << "\n";
    return 2;
  }
  return 0;
}

int do_sweep(const CommonOpts& opts) {
  io::RunConfig cfg = resolve(opts);
  if (!cfg.sweep.has_value()) throw ConfigError("config: sweep requires a 'sweep' section");
  emit_resolved(cfg);

  bifurcation::SweepConfig sweep_cfg;
  if (cfg.sweep->system == "pitchfork") {
    sweep_cfg.system = cfg.pitchfork.value_or(sim::PitchforkParams{});
  } else {
    sweep_cfg.system = cfg.mutual.value_or(sim::MutualInhibitionParams{});
  }
  sweep_cfg.fit = cfg.fit;
  sweep_cfg.belief_threshold = cfg.sweep->belief_threshold;
  sweep_cfg.dedupe_radius_scale = cfg.sweep->dedupe_radius_scale;
  sweep_cfg.warm_start = cfg.sweep->warm_start;
  sweep_cfg.seed = cfg.seed;

  bifurcation::BifurcationDiagram diagram = bifurcation::sweep(cfg.sweep->grid, sweep_cfg);

  int failed = 0;
  for (const auto& point : diagram.points) {
    int active = 0;
    for (const auto& est : point.estimates) active += est.active ? 1 : 0;
    std::cout << "control=" << point.control << " status=";
    switch (point.fit.status) {
      case learn::FitStatus::Converged: std::cout << "converged"; break;
      case learn::FitStatus::MaxIterations: std::cout << "max_iterations"; break;
      default: std::cout << "failed"; ++failed; break;
    }
    std::cout << " objective=" << point.fit.objective << " active_estimates=" << active
              << "\n";
  }
  io::write_diagram(out_path(cfg, "diagram.csv"), diagram);
  io::write_diagram_summary(out_path(cfg, "diagram.json"), diagram);
  std::cout << "wrote " << out_path(cfg, "diagram.csv") << "\n";
  std::cout << "wrote " << out_path(cfg, "diagram.json") << "\n";
  if (failed == static_cast<int>(diagram.points.size())) {
    std::cerr << "sweep failed at every grid point\n";
    return 2;
  }
  return 0;
}

Vec parse_reference(const std::string& text) {
  Vec ref(std::count(text.begin(), text.end(), ',') + 1);
  std::istringstream in(text);
  std::string item;
  Eigen::Index i = 0;
  while (std::getline(in, item, ',')) {
    try {
      ref(i++) = std::stod(item);
    } catch (const std::exception&) {
      throw ConfigError("report: bad --ref component '" + item + "'");
    }
  }
  return ref;
}

int do_report(const CommonOpts& opts, const std::string& diagram_arg,
              const std::string& ref_arg, double radius) {
  io::RunConfig cfg = resolve(opts);
  std::string path = diagram_arg.empty() ? cfg.diagram_path : diagram_arg;
  if (path.empty())
    throw ConfigError("config: report requires 'diagram' or a diagram path argument");
  emit_resolved(cfg);

  bifurcation::BifurcationDiagram diagram;
  bool full_fidelity = false;
  if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
    diagram = io::read_diagram_summary(path);
    full_fidelity = true;
  } else {
    const std::string sibling = fs::path(path).replace_extension(".json").string();
    if (fs::exists(sibling)) {
      diagram = io::read_diagram_summary(sibling);
      full_fidelity = true;
    } else {
      diagram = io::read_diagram(path);
    }
  }

  size_t total = 0;
  for (const auto& point : diagram.points) total += point.estimates.size();
  if (diagram.points.empty() || total == 0) throw ConfigError("report: empty diagram");

  int d = 0;
  for (const auto& point : diagram.points)
    for (const auto& est : point.estimates) d = static_cast<int>(est.location.size());

  // Locations table: one row per active estimate, plot-ready.
  {
    std::ostringstream out;
    out << "control";
    if (d == 1) {
      out << ",location";
    } else {
      for (int i = 1; i <= d; ++i) out << ",x_" << i;
    }
    out << ",class,belief\n";
    for (const auto& point : diagram.points)
      for (const auto& est : point.estimates) {
        if (!est.active) continue;
        out << io::format_double(point.control);
        for (int i = 0; i < d; ++i) out << "," << io::format_double(est.location(i));
        out << "," << to_string(est.cls) << "," << io::format_double(est.belief_strength)
            << "\n";
      }
    io::write_text_file(out_path(cfg, "locations.csv"), out.str());
    std::cout << "wrote " << out_path(cfg, "locations.csv") << "\n";
  }

  // Eigenvalue trace of the tracked central estimate.
  bifurcation::EigenTraceOptions trace_opts;
  if (!ref_arg.empty()) {
    trace_opts.reference = parse_reference(ref_arg);
  } else {
    // Default reference: centroid of the active estimates at the first
    // control value.
    Vec centroid = Vec::Zero(d);
    int count = 0;
    for (const auto& est : diagram.points.front().estimates) {
      if (!est.active) continue;
      centroid += est.location;
      ++count;
    }
    if (count == 0) {
      for (const auto& est : diagram.points.front().estimates) {
        centroid += est.location;
        ++count;
      }
    }
    if (count == 0) throw ConfigError("report: no estimates at the first control value");
    trace_opts.reference = centroid / count;
  }
  trace_opts.radius = radius;
  if (static_cast<int>(trace_opts.reference.size()) != d)
    throw ConfigError("report: --ref dimension does not match the diagram");

  const auto trace = bifurcation::eigen_trace(diagram, trace_opts);
  {
    std::ostringstream out;
    out << "control,matched,slot";
    for (int i = 1; i <= d; ++i) out << ",x_" << i;
    out << ",max_abs_eig";
    for (int i = 1; i <= d; ++i) out << ",eig_abs_" << i;
    for (int i = 1; i <= d; ++i) out << ",eig_real_" << i;
    for (int i = 1; i <= d; ++i) out << ",eig_imag_" << i;
    out << "\n";
    for (const auto& entry : trace) {
      out << io::format_double(entry.control) << "," << (entry.matched ? 1 : 0) << ","
          << entry.slot;
      for (int i = 0; i < d; ++i)
        out << ","
            << (entry.matched ? io::format_double(entry.location(i)) : std::string());
      out << "," << (entry.matched ? io::format_double(entry.max_abs_eig) : std::string());
      for (int i = 0; i < d; ++i)
        out << ","
            << (entry.matched && i < static_cast<int>(entry.eigenvalues.size())
                    ? io::format_double(std::abs(entry.eigenvalues[i]))
                    : std::string());
      for (int i = 0; i < d; ++i)
        out << ","
            << (entry.matched && i < static_cast<int>(entry.eigenvalues.size())
                    ? io::format_double(entry.eigenvalues[i].real())
                    : std::string());
      for (int i = 0; i < d; ++i)
        out << ","
            << (entry.matched && i < static_cast<int>(entry.eigenvalues.size())
                    ? io::format_double(entry.eigenvalues[i].imag())
                    : std::string());
      out << "\n";
    }
    io::write_text_file(out_path(cfg, "eigentrace.csv"), out.str());
    std::cout << "wrote " << out_path(cfg, "eigentrace.csv") << "\n";
  }

  // Eigenvector directions are only available when the Jacobians were loaded
  // (JSON summary); nothing is fabricated from the bare table.
  if (full_fidelity) {
    std::ostringstream out;
    out << "control,eig_index";
    for (int i = 1; i <= d; ++i) out << ",evec_re_" << i;
    for (int i = 1; i <= d; ++i) out << ",evec_im_" << i;
    out << "\n";
    for (const auto& entry : trace) {
      if (!entry.matched || entry.eigenvectors.rows() != d) continue;
      for (int k = 0; k < d; ++k) {
        out << io::format_double(entry.control) << "," << (k + 1);
        for (int i = 0; i < d; ++i)
          out << "," << io::format_double(entry.eigenvectors(i, k).real());
        for (int i = 0; i < d; ++i)
          out << "," << io::format_double(entry.eigenvectors(i, k).imag());
        out << "\n";
      }
    }
    io::write_text_file(out_path(cfg, "eigenvectors.csv"), out.str());
    std::cout << "wrote " << out_path(cfg, "eigenvectors.csv") << "\n";
  } else {
    std::cout << "eigenvectors unavailable from the bare table; "
                 "point report at the diagram JSON summary for them\n";
  }

  // Per-control class counts over active estimates.
  for (const auto& point : diagram.points) {
    int n_stable = 0, n_unstable = 0, n_saddle = 0;
    for (const auto& est : point.estimates) {
      if (!est.active) continue;
      if (est.cls == Stability::Stable) ++n_stable;
      if (est.cls == Stability::Unstable) ++n_unstable;
      if (est.cls == Stability::Saddle) ++n_saddle;
    }
    std::cout << "control=" << point.control << " stable=" << n_stable
              << " unstable=" << n_unstable << " saddle=" << n_saddle << "\n";
  }
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Empirical fixed-point analysis of stochastic dynamical systems"};
  app.require_subcommand(1);

  CommonOpts sim_opts;
  CLI::App* cmd_sim = app.add_subcommand("simulate", "Generate a dataset from a simulator");
  add_common(cmd_sim, sim_opts, true);

  CommonOpts fit_opts;
  CLI::App* cmd_fit = app.add_subcommand("fit", "Fit the transition model to a dataset");
  add_common(cmd_fit, fit_opts, true);

  CommonOpts sweep_opts;
  CLI::App* cmd_sweep = app.add_subcommand("sweep", "Fit across a control-parameter grid");
  add_common(cmd_sweep, sweep_opts, true);

  CommonOpts report_opts;
  std::string report_diagram;
  std::string report_ref;
  double report_radius = std::numeric_limits<double>::infinity();
  CLI::App* cmd_report = app.add_subcommand("report", "Emit plot-ready tables from a diagram");
  add_common(cmd_report, report_opts, false);
  cmd_report->add_option("diagram", report_diagram, "Diagram table or JSON summary path");
  cmd_report->add_option("--ref", report_ref,
                         "Comma-separated reference location for the eigenvalue trace");
  cmd_report->add_option("--radius", report_radius, "Matching radius for the trace");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (cmd_sim->parsed()) return do_simulate(sim_opts);
    if (cmd_fit->parsed()) return do_fit(fit_opts);
    if (cmd_sweep->parsed()) return do_sweep(sweep_opts);
    if (cmd_report->parsed())
      return do_report(report_opts, report_diagram, report_ref, report_radius);
    std::cerr << "no command given\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const InitError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace fpgp::cli
