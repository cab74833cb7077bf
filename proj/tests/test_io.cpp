#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fpgp/adf.hpp>
#include <fpgp/io.hpp>
#include <fpgp/learn.hpp>
#include <fpgp/sim.hpp>

using namespace fpgp;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path dir;
  TempDir() {
    dir = fs::temp_directory_path() / "fpgp_io_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~TempDir() { fs::remove_all(dir); }
  std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

bool same_bits(double a, double b) {
  uint64_t ba, bb;
  std::memcpy(&ba, &a, sizeof ba);
  std::memcpy(&bb, &b, sizeof bb);
  return ba == bb;
}

TrajectoryDataset awkward_dataset() {
  TrajectoryDataset data;
  Mat a(3, 2);
  a << 1.0 / 3.0, -0.1, M_PI, 1e-300, std::nextafter(2.0, 3.0), -1e17;
  Mat b(3, 2);
  b << 0.0, -0.0, 7.25, std::nextafter(0.1, 1.0), 1e300, 2.5e-5;
  data.trials = {a, b};
  return data;
}

bifurcation::FixedPointEstimate diagram_estimate(int slot, const Vec& x, const Mat& jac,
                                                 double belief, bool active,
                                                 std::vector<int> merged) {
  bifurcation::FixedPointEstimate est;
  est.slot = slot;
  est.location = x;
  est.jacobian = jac;
  Eigen::EigenSolver<Mat> es(jac);
  for (int k = 0; k < es.eigenvalues().size(); ++k)
    est.eigenvalues.push_back(es.eigenvalues()(k));
  est.eigenvectors = es.eigenvectors();
  est.sigma_s = -std::log(belief);
  est.belief_strength = belief;
  est.active = active;
  est.merged_from = std::move(merged);
  const auto call = classify_eigenvalues(est.eigenvalues);
  est.cls = call.cls;
  est.marginal = call.marginal;
  est.max_abs_eig = call.max_abs_eig;
  return est;
}

bifurcation::BifurcationDiagram spiral_diagram() {
  bifurcation::BifurcationDiagram d;
  d.points.resize(2);
  d.points[0].control = -0.25;
  d.points[0].data_scale = 1.75;
  d.points[0].fit = {1.25, 40, 2, learn::FitStatus::Converged, ""};
  Mat spiral(2, 2);
  spiral << 0.3, -0.4, 0.4, 0.3;  // complex pair 0.3 +- 0.4i
  Mat saddle(2, 2);
  saddle << 1.5, 0.0, 0.2, 0.5;
  d.points[0].estimates = {
      diagram_estimate(0, (Vec(2) << 0.1, -0.2).finished(), spiral, 0.9, true, {2, 3}),
      diagram_estimate(1, (Vec(2) << 1.0, 1.0).finished(), saddle, 0.4, false, {})};
  d.points[1].control = 0.5;
  d.points[1].data_scale = 2.0;
  d.points[1].fit = {-3.5, 200, 1, learn::FitStatus::MaxIterations, ""};
  d.points[1].estimates = {
      diagram_estimate(4, (Vec(2) << -0.6, 0.7).finished(), saddle, 0.99, true, {})};
  return d;
}

SystemModel fitted_tiny_model() {
  sim::PitchforkParams p;
  p.n_trials = 3;
  p.n_steps = 8;
  p.seed = 11;
  const auto data = sim::simulate_pitchfork(p);
  learn::FitConfig cfg;
  cfg.m_inducing = 3;
  cfg.p_fixed_points = 1;
  return learn::auto_init_system(data, cfg);
}

}  // namespace

TEST_CASE("formatted doubles reproduce every bit on read") {
  const std::vector<double> values = {0.0,       -0.0,   1.0 / 3.0, M_PI,  1e-300, 1e300,
                                      -1e17,     2.5e-5, 0.1,       123.0, -7.25,
                                      std::nextafter(1.0, 2.0)};
  for (double v : values) {
    const std::string s = io::format_double(v);
    CHECK(same_bits(std::stod(s), v));
  }
}

TEST_CASE("dataset tables survive a write read cycle bit for bit") {
  TempDir tmp;
  const auto data = awkward_dataset();
  const std::string path = tmp / "data.csv";
  io::write_dataset(path, data);
  const auto back = io::read_dataset(path);
  REQUIRE(back.n() == 2);
  REQUIRE(back.dy() == 2);
  for (int n = 0; n < 2; ++n) {
    REQUIRE(back.trials[n].rows() == data.trials[n].rows());
    for (Eigen::Index t = 0; t < back.trials[n].rows(); ++t)
      for (Eigen::Index d = 0; d < 2; ++d)
        CHECK(same_bits(back.trials[n](t, d), data.trials[n](t, d)));
  }
  // Rewriting the parsed dataset reproduces the file byte for byte.
  const std::string again = tmp / "data2.csv";
  io::write_dataset(again, back);
  CHECK(io::read_text_file(path) == io::read_text_file(again));
}

TEST_CASE("dataset parse errors name the offending row") {
  TempDir tmp;
  const std::string path = tmp / "broken.csv";

  io::write_text_file(path, "trial,t,y_1\n0,1,0.5\n0,2,oops\n");
  try {
    io::read_dataset(path);
    FAIL("expected a parse error");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 3") != std::string::npos);
    CHECK(msg.find("not a number") != std::string::npos);
    CHECK(msg.find("oops") != std::string::npos);
  }

  io::write_text_file(path, "trial,t,y_1\n0,1,0.5,9.0\n");
  CHECK_THROWS_WITH_AS(io::read_dataset(path),
                       doctest::Contains("expected 3 fields, got 4"), ConfigError);

  io::write_text_file(path, "trial,t,y_1\n0,1,0.5\n0,3,0.5\n");
  CHECK_THROWS_WITH_AS(io::read_dataset(path), doctest::Contains("expected t=2"),
                       ConfigError);

  io::write_text_file(path, "trial,t,y_1\n0,1,0.5\n0,2,0.5\n2,1,0.5\n");
  CHECK_THROWS_WITH_AS(io::read_dataset(path), doctest::Contains("contiguous"),
                       ConfigError);

  io::write_text_file(path, "trial,t,y_1\n0,1,inf\n0,2,0.5\n");
  CHECK_THROWS_WITH_AS(io::read_dataset(path), doctest::Contains("non-finite"),
                       ConfigError);

  io::write_text_file(path, "t,trial,y_1\n");
  CHECK_THROWS_AS(io::read_dataset(path), ConfigError);
  io::write_text_file(path, "");
  CHECK_THROWS_WITH_AS(io::read_dataset(path), doctest::Contains("missing header"),
                       ConfigError);
}

TEST_CASE("dataset metadata round trips for both generators") {
  TempDir tmp;
  io::DatasetMeta meta;
  meta.kind = "pitchfork";
  sim::PitchforkParams p;
  p.r = 1.3;
  p.noise_std = 0.025;
  p.n_steps = 17;
  p.n_trials = 9;
  p.init_mean = -0.3;
  p.init_std = 0.41;
  p.seed = 12345;
  meta.pitchfork = p;
  const std::string path = tmp / "meta.json";
  io::write_dataset_meta(path, meta);
  const auto back = io::read_dataset_meta(path);
  REQUIRE(back.kind == "pitchfork");
  REQUIRE(back.pitchfork.has_value());
  CHECK(same_bits(back.pitchfork->r, p.r));
  CHECK(same_bits(back.pitchfork->noise_std, p.noise_std));
  CHECK(back.pitchfork->n_steps == p.n_steps);
  CHECK(back.pitchfork->n_trials == p.n_trials);
  CHECK(same_bits(back.pitchfork->init_mean, p.init_mean));
  CHECK(same_bits(back.pitchfork->init_std, p.init_std));
  CHECK(back.pitchfork->seed == p.seed);

  io::DatasetMeta mm;
  mm.kind = "mutual_inhibition";
  sim::MutualInhibitionParams q;
  q.e_ext = 1.4;
  q.gain = 3.5;
  q.init_mean = (Vec(2) << 0.6, 0.4).finished();
  q.seed = 77;
  mm.mutual = q;
  io::write_dataset_meta(path, mm);
  const auto mback = io::read_dataset_meta(path);
  REQUIRE(mback.mutual.has_value());
  CHECK(same_bits(mback.mutual->e_ext, q.e_ext));
  CHECK(same_bits(mback.mutual->gain, q.gain));
  CHECK(mback.mutual->init_mean == q.init_mean);
  CHECK(mback.mutual->seed == q.seed);

  io::write_text_file(path, "{\"kind\": \"volcano\", \"params\": {}, \"seed\": 0}");
  CHECK_THROWS_WITH_AS(io::read_dataset_meta(path),
                       doctest::Contains("unknown dataset kind 'volcano'"), ConfigError);
  io::write_text_file(path, "{\"kind\": \"pitchfork\", \"params\": {\"radius\": 1}, \"seed\": 0}");
  CHECK_THROWS_WITH_AS(io::read_dataset_meta(path),
                       doctest::Contains("unknown key 'radius'"), ConfigError);
}

TEST_CASE("model archives round trip and predict identically") {
  TempDir tmp;
  io::ModelArchive archive;
  archive.model = fitted_tiny_model();
  archive.seed = 987654321;
  archive.config_hash = "00ff00ff00ff00ff";
  const std::string path = tmp / "model.json";
  io::save_model(path, archive);
  const auto back = io::load_model(path);

  CHECK(back.format_version == 1);
  CHECK(back.seed == archive.seed);
  CHECK(back.config_hash == archive.config_hash);
  const auto& a = archive.model.transition;
  const auto& b = back.model.transition;
  CHECK(b.kernel.type == a.kernel.type);
  CHECK((b.kernel.lengthscales - a.kernel.lengthscales).norm() == 0.0);
  CHECK(same_bits(b.kernel.signal_variance, a.kernel.signal_variance));
  CHECK((b.inducing.Z - a.inducing.Z).norm() == 0.0);
  CHECK((b.inducing.U - a.inducing.U).norm() == 0.0);
  CHECK((b.inducing.sigma_u - a.inducing.sigma_u).norm() == 0.0);
  CHECK((b.fixed_points.S - a.fixed_points.S).norm() == 0.0);
  CHECK((b.fixed_points.sigma_s - a.fixed_points.sigma_s).norm() == 0.0);
  REQUIRE(b.fixed_points.J.size() == a.fixed_points.J.size());
  for (size_t i = 0; i < a.fixed_points.J.size(); ++i)
    CHECK((b.fixed_points.J[i] - a.fixed_points.J[i]).norm() == 0.0);
  CHECK((b.sigma_eps - a.sigma_eps).norm() == 0.0);
  CHECK(b.jacobian_noise_follows_sigma_s == a.jacobian_noise_follows_sigma_s);
  CHECK((back.model.observation.C - archive.model.observation.C).norm() == 0.0);
  CHECK((back.model.init.mu0 - archive.model.init.mu0).norm() == 0.0);
  CHECK((back.model.init.sigma0 - archive.model.init.sigma0).norm() == 0.0);

  // Identical parameters mean identical predictions.
  for (double x : {-0.8, -0.1, 0.4, 1.2}) {
    const Vec at = Vec::Constant(1, x);
    CHECK(same_bits(fpsgp::predict(a, at).mean(0), fpsgp::predict(b, at).mean(0)));
  }

  // No stray temp files after the atomic rename.
  size_t entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(tmp.dir)) ++entries;
  CHECK(entries == 1);

  // Future format versions are refused instead of misread.
  auto text = io::read_text_file(path);
  const auto pos = text.find("\"format_version\": 1");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, std::string("\"format_version\": 1").size(), "\"format_version\": 9");
  io::write_text_file(path, text);
  CHECK_THROWS_WITH_AS(io::load_model(path),
                       doctest::Contains("unsupported format_version 9"), ConfigError);
}

TEST_CASE("diagram tables round trip everything the table stores") {
  TempDir tmp;
  const auto d = spiral_diagram();
  const std::string path = tmp / "diagram.csv";
  io::write_diagram(path, d);
  const auto back = io::read_diagram(path);

  REQUIRE(back.points.size() == 2);
  for (size_t pi = 0; pi < 2; ++pi) {
    const auto& p0 = d.points[pi];
    const auto& p1 = back.points[pi];
    CHECK(same_bits(p0.control, p1.control));
    REQUIRE(p1.estimates.size() == p0.estimates.size());
    for (size_t i = 0; i < p0.estimates.size(); ++i) {
      const auto& a = p0.estimates[i];
      const auto& b = p1.estimates[i];
      CHECK(b.slot == a.slot);
      CHECK(b.active == a.active);
      CHECK((b.location - a.location).norm() == 0.0);
      CHECK(same_bits(b.sigma_s, a.sigma_s));
      CHECK(same_bits(b.belief_strength, a.belief_strength));
      CHECK(b.cls == a.cls);
      CHECK(b.merged_from == a.merged_from);
      REQUIRE(b.eigenvalues.size() == a.eigenvalues.size());
      for (size_t k = 0; k < a.eigenvalues.size(); ++k) {
        CHECK(same_bits(b.eigenvalues[k].real(), a.eigenvalues[k].real()));
        CHECK(same_bits(b.eigenvalues[k].imag(), a.eigenvalues[k].imag()));
      }
      CHECK(b.max_abs_eig == doctest::Approx(a.max_abs_eig).epsilon(1e-15));
      // The table intentionally drops Jacobians and eigenvectors.
      CHECK(b.jacobian.size() == 0);
    }
  }

  io::write_text_file(path, "control,slot\n");
  CHECK_THROWS_WITH_AS(io::read_diagram(path), doctest::Contains("malformed diagram header"),
                       ConfigError);
}

TEST_CASE("the JSON summary keeps Jacobians and fit diagnostics") {
  TempDir tmp;
  const auto d = spiral_diagram();
  const std::string path = tmp / "summary.json";
  io::write_diagram_summary(path, d);
  const auto back = io::read_diagram_summary(path);

  REQUIRE(back.points.size() == 2);
  for (size_t pi = 0; pi < 2; ++pi) {
    const auto& p0 = d.points[pi];
    const auto& p1 = back.points[pi];
    CHECK(same_bits(p0.control, p1.control));
    CHECK(same_bits(p0.data_scale, p1.data_scale));
    CHECK(p1.fit.status == p0.fit.status);
    CHECK(same_bits(p1.fit.objective, p0.fit.objective));
    CHECK(p1.fit.iterations == p0.fit.iterations);
    CHECK(p1.fit.restarts == p0.fit.restarts);
    REQUIRE(p1.estimates.size() == p0.estimates.size());
    for (size_t i = 0; i < p0.estimates.size(); ++i) {
      const auto& a = p0.estimates[i];
      const auto& b = p1.estimates[i];
      CHECK((b.jacobian - a.jacobian).norm() == 0.0);
      CHECK((b.location - a.location).norm() == 0.0);
      CHECK(same_bits(b.sigma_s, a.sigma_s));
      CHECK(b.active == a.active);
      CHECK(b.cls == a.cls);
      CHECK(b.marginal == a.marginal);
      CHECK(b.merged_from == a.merged_from);
      // Eigenstructure is recomputed from the stored Jacobian.
      CHECK(b.max_abs_eig == doctest::Approx(a.max_abs_eig).epsilon(1e-12));
      CHECK(b.eigenvectors.rows() == a.jacobian.rows());
    }
  }
}

TEST_CASE("a failed grid point survives the summary round trip") {
  bifurcation::BifurcationDiagram d;
  d.points.resize(1);
  d.points[0].control = 1.0;
  d.points[0].data_scale = 1.0;
  d.points[0].fit.status = learn::FitStatus::Failed;
  d.points[0].fit.objective = std::numeric_limits<double>::quiet_NaN();
  d.points[0].fit.message = "kernel hyperparameters: signal variance must be positive";

  TempDir tmp;
  const std::string path = tmp / "failed.json";
  io::write_diagram_summary(path, d);
  const auto back = io::read_diagram_summary(path);
  REQUIRE(back.points.size() == 1);
  CHECK(back.points[0].fit.status == learn::FitStatus::Failed);
  CHECK(std::isnan(back.points[0].fit.objective));
  CHECK(back.points[0].fit.message == d.points[0].fit.message);
  CHECK(back.points[0].estimates.empty());
}

TEST_CASE("run configs resolve deterministically and hash stably") {
  const std::string text = R"({
    "seed": 42,
    "pitchfork": {"r": 1.5, "n_trials": 8},
    "fit": {"m_inducing": 6},
    "sweep": {"grid": [0.5, 1.0, 1.5]}
  })";
  const auto cfg = io::parse_run_config(text);
  CHECK(cfg.seed == 42);
  REQUIRE(cfg.pitchfork.has_value());
  CHECK(cfg.pitchfork->r == 1.5);
  CHECK(cfg.pitchfork->n_trials == 8);
  CHECK(cfg.fit.m_inducing == 6);
  REQUIRE(cfg.sweep.has_value());
  CHECK(cfg.sweep->grid.size() == 3);
  CHECK(cfg.sweep->system == "pitchfork");

  const std::string resolved = io::resolved_config_text(cfg);
  // Defaults are materialized.
  CHECK(resolved.find("\"p_fixed_points\"") != std::string::npos);
  CHECK(resolved.find("\"belief_threshold\"") != std::string::npos);
  CHECK(resolved.find("\"noise_std\"") != std::string::npos);
  // Resolving is a fixed point: parse(resolved) resolves to the same text.
  CHECK(io::resolved_config_text(io::parse_run_config(resolved)) == resolved);
  CHECK(io::resolved_config_text(io::parse_run_config(text)) == resolved);

  const std::string h = io::config_hash(resolved);
  CHECK(h.size() == 16);
  CHECK(h.find_first_not_of("0123456789abcdef") == std::string::npos);
  CHECK(io::config_hash(resolved) == h);
  auto other = cfg;
  other.seed = 43;
  CHECK(io::config_hash(io::resolved_config_text(other)) != h);
}

TEST_CASE("unknown configuration keys are rejected with their context") {
  CHECK_THROWS_WITH_AS(io::parse_run_config(R"({"sed": 1})"),
                       doctest::Contains("config: unknown key 'sed'"), ConfigError);
  CHECK_THROWS_WITH_AS(io::parse_run_config(R"({"fit": {"m_inducin": 8}})"),
                       doctest::Contains("config.fit: unknown key 'm_inducin'"), ConfigError);
  CHECK_THROWS_WITH_AS(io::parse_run_config(R"({"sweep": {"gird": [1]}})"),
                       doctest::Contains("config.sweep: unknown key 'gird'"), ConfigError);
  CHECK_THROWS_WITH_AS(io::parse_run_config(R"({"pitchfork": {"R": 2}})"),
                       doctest::Contains("config.pitchfork: unknown key 'R'"), ConfigError);
  CHECK_THROWS_WITH_AS(io::parse_run_config(R"({"sweep": {"system": "lorenz"}})"),
                       doctest::Contains("unknown system 'lorenz'"), ConfigError);
  CHECK_THROWS_WITH_AS(io::parse_run_config("{nope"), doctest::Contains("config:"),
                       ConfigError);
}

TEST_CASE("missing files fail with the path in the message") {
  CHECK_THROWS_WITH_AS(io::read_text_file("/nonexistent/fpgp.csv"),
                       doctest::Contains("/nonexistent/fpgp.csv"), ConfigError);
}
