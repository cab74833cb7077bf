#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include <fpgp/io.hpp>

using namespace fpgp;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

struct CliFixture {
  fs::path root;
  int run_id = 0;

  CliFixture() {
    root = fs::temp_directory_path() / "fpgp_cli_test";
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~CliFixture() { fs::remove_all(root); }

  std::string dir(const std::string& name) const {
    const auto p = root / name;
    fs::create_directories(p);
    return p.string();
  }

  RunResult run(const std::string& args) {
    const std::string capture = (root / ("out_" + std::to_string(run_id++) + ".txt")).string();
    const std::string cmd =
        std::string("\"") + FPGP_CLI_PATH + "\" " + args + " > \"" + capture + "\" 2>&1";
    const int raw = std::system(cmd.c_str());
    RunResult res;
    res.exit_code = (raw == -1) ? -1 : WEXITSTATUS(raw);
    res.output = io::read_text_file(capture);
    return res;
  }

  std::string write_config(const std::string& name, const std::string& text) {
    const std::string path = (root / name).string();
    io::write_text_file(path, text);
    return path;
  }
};

size_t count_lines(const std::string& path) {
  const std::string text = io::read_text_file(path);
  size_t n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

const std::string kTinyPitchforkSim = R"({
  "seed": 5,
  "pitchfork": {"r": 1.5, "n_trials": 4, "n_steps": 10}
})";

const std::string kTinyFit = R"("fit": {
    "m_inducing": 4, "p_fixed_points": 1, "max_iterations": 30, "restarts": 1
  })";

}  // namespace

TEST_CASE("simulate writes the dataset with its metadata and resolved config") {
  CliFixture fx;
  const auto cfg = fx.write_config("sim.json", kTinyPitchforkSim);
  const auto out = fx.dir("sim_out");
  const auto res = fx.run("simulate --config \"" + cfg + "\" --out \"" + out + "\"");
  CHECK(res.exit_code == 0);
  CHECK(res.output.find("4 trials x 10 steps x 1 channels") != std::string::npos);
  CHECK(count_lines(out + "/dataset.csv") == 41);  // header + 4 trials x 10 rows
  CHECK(fs::exists(out + "/dataset.json"));
  CHECK(fs::exists(out + "/resolved_config.json"));
  const auto meta = io::read_dataset_meta(out + "/dataset.json");
  CHECK(meta.kind == "pitchfork");
  REQUIRE(meta.pitchfork.has_value());
  CHECK(meta.pitchfork->seed == 5);

  const auto mcfg = fx.write_config("msim.json", R"({
    "seed": 9,
    "mutual_inhibition": {"e_ext": 1.4, "n_trials": 5, "n_steps": 6}
  })");
  const auto mout = fx.dir("msim_out");
  const auto mres = fx.run("simulate --config \"" + mcfg + "\" --out \"" + mout + "\"");
  CHECK(mres.exit_code == 0);
  CHECK(mres.output.find("5 trials x 6 steps x 2 channels") != std::string::npos);
  CHECK(count_lines(mout + "/dataset.csv") == 31);
}

TEST_CASE("the same seed reproduces the dataset byte for byte") {
  CliFixture fx;
  const auto cfg = fx.write_config("sim.json", kTinyPitchforkSim);
  const auto a = fx.dir("a");
  const auto b = fx.dir("b");
  REQUIRE(fx.run("simulate --config \"" + cfg + "\" --out \"" + a + "\"").exit_code == 0);
  REQUIRE(fx.run("simulate --config \"" + cfg + "\" --out \"" + b + "\"").exit_code == 0);
  CHECK(io::read_text_file(a + "/dataset.csv") == io::read_text_file(b + "/dataset.csv"));

  const auto c = fx.dir("c");
  REQUIRE(fx.run("simulate --config \"" + cfg + "\" --seed 6 --out \"" + c + "\"").exit_code ==
          0);
  CHECK(io::read_text_file(a + "/dataset.csv") != io::read_text_file(c + "/dataset.csv"));
}

TEST_CASE("fit produces a loadable model archive tied to its config") {
  CliFixture fx;
  const auto sim_cfg = fx.write_config("sim.json", kTinyPitchforkSim);
  const auto data_dir = fx.dir("data");
  REQUIRE(fx.run("simulate --config \"" + sim_cfg + "\" --out \"" + data_dir + "\"").exit_code ==
          0);

  const auto fit_cfg = fx.write_config("fit.json", R"({
  "seed": 21,
  "dataset": ")" + data_dir + R"(/dataset.csv",
  )" + kTinyFit + "\n}");
  const auto fit_dir = fx.dir("fit_out");
  const auto res = fx.run("fit --config \"" + fit_cfg + "\" --out \"" + fit_dir + "\"");
  CHECK(res.exit_code == 0);
  CHECK(res.output.find("fit status=") != std::string::npos);
  CHECK(fs::exists(fit_dir + "/fit_log.txt"));

  const auto archive = io::load_model(fit_dir + "/model.json");
  CHECK(archive.seed == 21);
  CHECK(archive.model.transition.inducing.Z.rows() == 4);
  CHECK(archive.model.transition.fixed_points.S.rows() == 1);
  const auto resolved = io::read_text_file(fit_dir + "/resolved_config.json");
  CHECK(archive.config_hash == io::config_hash(resolved));
}

TEST_CASE("sweep then report emit the plot-ready tables") {
  CliFixture fx;
  const auto cfg = fx.write_config("sweep.json", R"({
  "seed": 33,
  "pitchfork": {"n_trials": 5, "n_steps": 10},
  )" + kTinyFit + R"(,
  "sweep": {"grid": [0.5, 1.5]}
})");
  const auto out = fx.dir("sweep_out");
  const auto res = fx.run("sweep --config \"" + cfg + "\" --out \"" + out + "\"");
  CHECK(res.exit_code == 0);
  CHECK(res.output.find("control=0.5") != std::string::npos);
  CHECK(res.output.find("control=1.5") != std::string::npos);
  REQUIRE(fs::exists(out + "/diagram.csv"));
  REQUIRE(fs::exists(out + "/diagram.json"));

  const auto rep = fx.dir("report_out");
  const auto rres =
      fx.run("report \"" + out + "/diagram.json\" --out \"" + rep + "\"");
  CHECK(rres.exit_code == 0);
  CHECK(fs::exists(rep + "/locations.csv"));
  CHECK(fs::exists(rep + "/eigenvectors.csv"));
  REQUIRE(fs::exists(rep + "/eigentrace.csv"));
  CHECK(count_lines(rep + "/eigentrace.csv") == 3);  // header + one row per grid value

  // A bare table (no JSON sibling) still yields locations and the trace, but
  // no eigenvector directions.
  const auto bare = fx.dir("bare");
  fs::copy_file(out + "/diagram.csv", bare + "/diagram.csv");
  const auto brep = fx.dir("bare_report");
  const auto bres = fx.run("report \"" + bare + "/diagram.csv\" --out \"" + brep + "\"");
  CHECK(bres.exit_code == 0);
  CHECK(bres.output.find("eigenvectors unavailable") != std::string::npos);
  CHECK(fs::exists(brep + "/locations.csv"));
  CHECK_FALSE(fs::exists(brep + "/eigenvectors.csv"));
}

TEST_CASE("configuration mistakes exit with code 1 and a pointed message") {
  CliFixture fx;
  const auto out = fx.dir("err_out");

  const auto bad_key = fx.write_config("bad_key.json", R"({"sed": 1})");
  auto res = fx.run("simulate --config \"" + bad_key + "\" --out \"" + out + "\"");
  CHECK(res.exit_code == 1);
  CHECK(res.output.find("unknown key 'sed'") != std::string::npos);

  const auto no_system = fx.write_config("no_system.json", R"({"seed": 1})");
  res = fx.run("simulate --config \"" + no_system + "\" --out \"" + out + "\"");
  CHECK(res.exit_code == 1);
  CHECK(res.output.find("exactly one of 'pitchfork' or 'mutual_inhibition'") !=
        std::string::npos);

  res = fx.run("fit --config \"" + no_system + "\" --out \"" + out + "\"");
  CHECK(res.exit_code == 1);
  CHECK(res.output.find("fit requires 'dataset'") != std::string::npos);

  res = fx.run("sweep --config \"" + no_system + "\" --out \"" + out + "\"");
  CHECK(res.exit_code == 1);
  CHECK(res.output.find("sweep requires a 'sweep' section") != std::string::npos);

  res = fx.run("report --config \"" + no_system + "\" --out \"" + out + "\"");
  CHECK(res.exit_code == 1);
  CHECK(res.output.find("report requires 'diagram'") != std::string::npos);

  // Missing --config on commands that need one is a usage error.
  res = fx.run("simulate");
  CHECK(res.exit_code == 1);
}

TEST_CASE("report refuses an empty diagram") {
  CliFixture fx;
  const std::string empty = fx.dir("empty") + "/diagram.csv";
  io::write_text_file(empty,
                      "control_value,slot_id,active,x_1,sigma_s,belief,class,"
                      "eig_real_1,eig_imag_1,merged_from\n");
  const auto res = fx.run("report \"" + empty + "\" --out \"" + fx.dir("empty_rep") + "\"");
  CHECK(res.exit_code == 1);
  CHECK(res.output.find("empty diagram") != std::string::npos);

  const std::string one = fx.dir("one") + "/diagram.csv";
  io::write_text_file(one,
                      "control_value,slot_id,active,x_1,sigma_s,belief,class,"
                      "eig_real_1,eig_imag_1,merged_from\n"
                      "0.5,0,1,0.1,0.1,0.9,stable,0.5,0,\n");
  const auto ref_res = fx.run("report \"" + one + "\" --ref 0.5,x --out \"" +
                              fx.dir("one_rep") + "\"");
  CHECK(ref_res.exit_code == 1);
  CHECK(ref_res.output.find("bad --ref component 'x'") != std::string::npos);
}

TEST_CASE("help lists the four commands") {
  CliFixture fx;
  const auto res = fx.run("--help");
  CHECK(res.exit_code == 0);
  for (const char* cmd : {"simulate", "fit", "sweep", "report"})
    CHECK(res.output.find(cmd) != std::string::npos);
}
