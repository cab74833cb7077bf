#include <fpgp/io.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <fpgp/rng.hpp>

namespace fpgp::io {

using nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out << text;
  if (!out) throw ConfigError("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

void atomic_write(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  write_text_file(tmp, text);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw ConfigError("rename failed for " + path + ": " + ec.message());
}

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_double(const std::string& s, const std::string& where) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0')
    throw ConfigError(where + ": not a number: '" + s + "'");
  return v;
}

long parse_long(const std::string& s, const std::string& where) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const long v = std::strtol(begin, &end, 10);
  if (end == begin || *end != '\0')
    throw ConfigError(where + ": not an integer: '" + s + "'");
  return v;
}

std::string row_label(const std::string& path, size_t row) {
  return path + " row " + std::to_string(row);
}

// JSON plumbing. Objects are checked against an allowed key list so typos
// fail loudly instead of silently applying defaults.

void check_object(const json& j, const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + ": expected an object");
}

void check_keys(const json& j, const std::string& context,
                std::initializer_list<const char*> allowed) {
  check_object(j, context);
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError(context + ": unknown key '" + it.key() + "'");
  }
}

double get_double(const json& j, const std::string& context) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!j.is_number()) throw ConfigError(context + ": expected a number");
  return j.get<double>();
}

int get_int(const json& j, const std::string& context) {
  if (!j.is_number_integer()) throw ConfigError(context + ": expected an integer");
  return j.get<int>();
}

uint64_t get_uint64(const json& j, const std::string& context) {
  if (!j.is_number_unsigned() && !j.is_number_integer())
    throw ConfigError(context + ": expected a nonnegative integer");
  if (j.is_number_integer() && j.get<int64_t>() < 0)
    throw ConfigError(context + ": expected a nonnegative integer");
  return j.get<uint64_t>();
}

bool get_bool(const json& j, const std::string& context) {
  if (!j.is_boolean()) throw ConfigError(context + ": expected a boolean");
  return j.get<bool>();
}

std::string get_string(const json& j, const std::string& context) {
  if (!j.is_string()) throw ConfigError(context + ": expected a string");
  return j.get<std::string>();
}

json vec_to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Vec vec_from_json(const json& j, const std::string& context) {
  if (!j.is_array()) throw ConfigError(context + ": expected an array");
  Vec v(j.size());
  for (size_t i = 0; i < j.size(); ++i)
    v(static_cast<Eigen::Index>(i)) = get_double(j[i], context);
  return v;
}

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat mat_from_json(const json& j, const std::string& context) {
  if (!j.is_array()) throw ConfigError(context + ": expected an array of rows");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  Eigen::Index cols = -1;
  Mat m;
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (!j[r].is_array()) throw ConfigError(context + ": expected an array of rows");
    if (cols < 0) {
      cols = static_cast<Eigen::Index>(j[r].size());
      m.resize(rows, cols);
    }
    if (static_cast<Eigen::Index>(j[r].size()) != cols)
      throw ConfigError(context + ": ragged rows");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = get_double(j[r][c], context);
  }
  if (rows == 0) m.resize(0, 0);
  return m;
}

// Enum spellings used across config, sidecars, archives and tables.

std::string kernel_to_string(kernels::KernelType t) {
  return t == kernels::KernelType::ExponentiatedQuadratic ? "eq" : "linear";
}

kernels::KernelType kernel_from_string(const std::string& s, const std::string& context) {
  if (s == "eq") return kernels::KernelType::ExponentiatedQuadratic;
  if (s == "linear") return kernels::KernelType::Linear;
  throw ConfigError(context + ": unknown kernel '" + s + "'");
}

std::string gradient_to_string(learn::GradientMethod m) {
  return m == learn::GradientMethod::Adjoint ? "adjoint" : "central_difference";
}

learn::GradientMethod gradient_from_string(const std::string& s, const std::string& context) {
  if (s == "adjoint") return learn::GradientMethod::Adjoint;
  if (s == "central_difference") return learn::GradientMethod::CentralDifference;
  throw ConfigError(context + ": unknown gradient method '" + s + "'");
}

std::string status_to_string(learn::FitStatus s) {
  switch (s) {
    case learn::FitStatus::Converged: return "converged";
    case learn::FitStatus::MaxIterations: return "max_iterations";
    default: return "failed";
  }
}

learn::FitStatus status_from_string(const std::string& s, const std::string& context) {
  if (s == "converged") return learn::FitStatus::Converged;
  if (s == "max_iterations") return learn::FitStatus::MaxIterations;
  if (s == "failed") return learn::FitStatus::Failed;
  throw ConfigError(context + ": unknown fit status '" + s + "'");
}

Stability stability_from_string(const std::string& s, const std::string& context) {
  if (s == "stable") return Stability::Stable;
  if (s == "unstable") return Stability::Unstable;
  if (s == "saddle") return Stability::Saddle;
  throw ConfigError(context + ": unknown stability class '" + s + "'");
}

}  // namespace

void write_dataset(const std::string& csv_path, const TrajectoryDataset& data) {
  data.validate();
  std::ostringstream out;
  out << "trial,t";
  for (int d = 1; d <= data.dy(); ++d) out << ",y_" << d;
  out << "\n";
  for (int n = 0; n < data.n(); ++n) {
    const Mat& y = data.trials[n];
    for (Eigen::Index t = 0; t < y.rows(); ++t) {
      out << n << "," << (t + 1);
      for (Eigen::Index d = 0; d < y.cols(); ++d) out << "," << format_double(y(t, d));
      out << "\n";
    }
  }
  write_text_file(csv_path, out.str());
}

TrajectoryDataset read_dataset(const std::string& csv_path) {
  std::istringstream in(read_text_file(csv_path));
  std::string line;
  size_t row = 0;
  if (!std::getline(in, line))
    throw ConfigError(row_label(csv_path, 1) + ": missing header");
  ++row;
  const auto header = split_csv_row(line);
  if (header.size() < 3 || header[0] != "trial" || header[1] != "t")
    throw ConfigError(row_label(csv_path, row) + ": expected header trial,t,y_1..");
  const int dy = static_cast<int>(header.size()) - 2;
  for (int d = 0; d < dy; ++d)
    if (header[2 + d] != "y_" + std::to_string(d + 1))
      throw ConfigError(row_label(csv_path, row) + ": expected column y_" +
                        std::to_string(d + 1));

  TrajectoryDataset data;
  std::vector<std::vector<Vec>> trials;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = split_csv_row(line);
    const std::string where = row_label(csv_path, row);
    if (static_cast<int>(fields.size()) != dy + 2)
      throw ConfigError(where + ": expected " + std::to_string(dy + 2) +
                        " fields, got " + std::to_string(fields.size()));
    const long trial = parse_long(fields[0], where);
    const long t = parse_long(fields[1], where);
    if (trial < 0) throw ConfigError(where + ": negative trial index");
    if (static_cast<size_t>(trial) >= trials.size()) {
      if (static_cast<size_t>(trial) != trials.size())
        throw ConfigError(where + ": trial indices must be contiguous from 0");
      trials.emplace_back();
    }
    auto& steps = trials[static_cast<size_t>(trial)];
    if (t != static_cast<long>(steps.size()) + 1)
      throw ConfigError(where + ": expected t=" + std::to_string(steps.size() + 1));
    Vec y(dy);
    for (int d = 0; d < dy; ++d) {
      y(d) = parse_double(fields[2 + d], where);
      if (!std::isfinite(y(d))) throw ConfigError(where + ": non-finite observation");
    }
    steps.push_back(std::move(y));
  }
  for (size_t n = 0; n < trials.size(); ++n) {
    Mat y(trials[n].size(), dy);
    for (size_t t = 0; t < trials[n].size(); ++t) y.row(t) = trials[n][t].transpose();
    data.trials.push_back(std::move(y));
  }
  data.validate();
  return data;
}

namespace {

json pitchfork_to_json(const sim::PitchforkParams& p) {
  json j;
  j["r"] = p.r;
  j["noise_std"] = p.noise_std;
  j["n_steps"] = p.n_steps;
  j["n_trials"] = p.n_trials;
  j["init_mean"] = p.init_mean;
  j["init_std"] = p.init_std;
  return j;
}

sim::PitchforkParams pitchfork_from_json(const json& j, const std::string& context) {
  check_keys(j, context,
             {"r", "noise_std", "n_steps", "n_trials", "init_mean", "init_std"});
  sim::PitchforkParams p;
  if (j.contains("r")) p.r = get_double(j["r"], context + ".r");
  if (j.contains("noise_std")) p.noise_std = get_double(j["noise_std"], context + ".noise_std");
  if (j.contains("n_steps")) p.n_steps = get_int(j["n_steps"], context + ".n_steps");
  if (j.contains("n_trials")) p.n_trials = get_int(j["n_trials"], context + ".n_trials");
  if (j.contains("init_mean")) p.init_mean = get_double(j["init_mean"], context + ".init_mean");
  if (j.contains("init_std")) p.init_std = get_double(j["init_std"], context + ".init_std");
  return p;
}

json mutual_to_json(const sim::MutualInhibitionParams& p) {
  json j;
  j["e_ext"] = p.e_ext;
  j["omega_i"] = p.omega_i;
  j["leak"] = p.leak;
  j["noise_std"] = p.noise_std;
  j["gain"] = p.gain;
  j["threshold"] = p.threshold;
  j["amplitude"] = p.amplitude;
  j["baseline"] = p.baseline;
  j["n_steps"] = p.n_steps;
  j["n_trials"] = p.n_trials;
  j["init_mean"] = vec_to_json(p.init_mean);
  j["init_std"] = p.init_std;
  return j;
}

sim::MutualInhibitionParams mutual_from_json(const json& j, const std::string& context) {
  check_keys(j, context,
             {"e_ext", "omega_i", "leak", "noise_std", "gain", "threshold", "amplitude",
              "baseline", "n_steps", "n_trials", "init_mean", "init_std"});
  sim::MutualInhibitionParams p;
  if (j.contains("e_ext")) p.e_ext = get_double(j["e_ext"], context + ".e_ext");
  if (j.contains("omega_i")) p.omega_i = get_double(j["omega_i"], context + ".omega_i");
  if (j.contains("leak")) p.leak = get_double(j["leak"], context + ".leak");
  if (j.contains("noise_std")) p.noise_std = get_double(j["noise_std"], context + ".noise_std");
  if (j.contains("gain")) p.gain = get_double(j["gain"], context + ".gain");
  if (j.contains("threshold")) p.threshold = get_double(j["threshold"], context + ".threshold");
  if (j.contains("amplitude")) p.amplitude = get_double(j["amplitude"], context + ".amplitude");
  if (j.contains("baseline")) p.baseline = get_double(j["baseline"], context + ".baseline");
  if (j.contains("n_steps")) p.n_steps = get_int(j["n_steps"], context + ".n_steps");
  if (j.contains("n_trials")) p.n_trials = get_int(j["n_trials"], context + ".n_trials");
  if (j.contains("init_mean")) p.init_mean = vec_from_json(j["init_mean"], context + ".init_mean");
  if (j.contains("init_std")) p.init_std = get_double(j["init_std"], context + ".init_std");
  return p;
}

}  // namespace

void write_dataset_meta(const std::string& json_path, const DatasetMeta& meta) {
  json j;
  j["kind"] = meta.kind;
  if (meta.pitchfork.has_value()) {
    j["params"] = pitchfork_to_json(*meta.pitchfork);
    j["seed"] = meta.pitchfork->seed;
  } else if (meta.mutual.has_value()) {
    j["params"] = mutual_to_json(*meta.mutual);
    j["seed"] = meta.mutual->seed;
  } else {
    throw ConfigError("dataset meta: no parameters to record");
  }
  write_text_file(json_path, j.dump(2) + "\n");
}

DatasetMeta read_dataset_meta(const std::string& json_path) {
  json j;
  try {
    j = json::parse(read_text_file(json_path));
  } catch (const json::parse_error& e) {
    throw ConfigError(json_path + ": " + e.what());
  }
  check_keys(j, json_path, {"kind", "params", "seed"});
  DatasetMeta meta;
  meta.kind = get_string(j.at("kind"), json_path + ".kind");
  const uint64_t seed = j.contains("seed") ? get_uint64(j["seed"], json_path + ".seed") : 0;
  if (meta.kind == "pitchfork") {
    auto p = pitchfork_from_json(j.at("params"), json_path + ".params");
    p.seed = seed;
    meta.pitchfork = p;
  } else if (meta.kind == "mutual_inhibition") {
    auto p = mutual_from_json(j.at("params"), json_path + ".params");
    p.seed = seed;
    meta.mutual = p;
  } else {
    throw ConfigError(json_path + ": unknown dataset kind '" + meta.kind + "'");
  }
  return meta;
}

namespace {

json kernel_to_json(const kernels::KernelHyperparams& k) {
  json j;
  j["type"] = kernel_to_string(k.type);
  if (k.type == kernels::KernelType::ExponentiatedQuadratic) {
    j["signal_variance"] = k.signal_variance;
    j["lengthscales"] = vec_to_json(k.lengthscales);
  } else {
    j["weight_variances"] = vec_to_json(k.weight_variances);
  }
  return j;
}

kernels::KernelHyperparams kernel_from_json(const json& j, const std::string& context) {
  check_keys(j, context, {"type", "signal_variance", "lengthscales", "weight_variances"});
  kernels::KernelHyperparams k;
  k.type = kernel_from_string(get_string(j.at("type"), context + ".type"), context);
  if (k.type == kernels::KernelType::ExponentiatedQuadratic) {
    k.signal_variance = get_double(j.at("signal_variance"), context + ".signal_variance");
    k.lengthscales = vec_from_json(j.at("lengthscales"), context + ".lengthscales");
  } else {
    k.weight_variances = vec_from_json(j.at("weight_variances"), context + ".weight_variances");
  }
  return k;
}

}  // namespace

void save_model(const std::string& path, const ModelArchive& archive) {
  validate(archive.model);
  json j;
  j["format_version"] = archive.format_version;
  j["kernel"] = kernel_to_json(archive.model.transition.kernel);
  json inducing;
  inducing["Z"] = mat_to_json(archive.model.transition.inducing.Z);
  inducing["U"] = mat_to_json(archive.model.transition.inducing.U);
  inducing["sigma_u"] = vec_to_json(archive.model.transition.inducing.sigma_u);
  j["inducing"] = std::move(inducing);
  json fixed;
  fixed["S"] = mat_to_json(archive.model.transition.fixed_points.S);
  fixed["sigma_s"] = vec_to_json(archive.model.transition.fixed_points.sigma_s);
  json jacs = json::array();
  for (const auto& jac : archive.model.transition.fixed_points.J)
    jacs.push_back(mat_to_json(jac));
  fixed["J"] = std::move(jacs);
  j["fixed_points"] = std::move(fixed);
  j["sigma_eps"] = vec_to_json(archive.model.transition.sigma_eps);
  j["jacobian_noise_follows_sigma_s"] =
      archive.model.transition.jacobian_noise_follows_sigma_s;
  json obs;
  obs["C"] = mat_to_json(archive.model.observation.C);
  obs["sigma_eta"] = vec_to_json(archive.model.observation.sigma_eta);
  j["observation"] = std::move(obs);
  json init;
  init["mu0"] = vec_to_json(archive.model.init.mu0);
  init["sigma0"] = vec_to_json(archive.model.init.sigma0);
  j["init"] = std::move(init);
  json prov;
  prov["config_hash"] = archive.config_hash;
  prov["seed"] = archive.seed;
  j["provenance"] = std::move(prov);
  atomic_write(path, j.dump(2) + "\n");
}

ModelArchive load_model(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  check_keys(j, path,
             {"format_version", "kernel", "inducing", "fixed_points", "sigma_eps",
              "jacobian_noise_follows_sigma_s", "observation", "init", "provenance"});
  ModelArchive archive;
  archive.format_version = get_int(j.at("format_version"), path + ".format_version");
  if (archive.format_version != 1)
    throw ConfigError(path + ": unsupported format_version " +
                      std::to_string(archive.format_version));
  archive.model.transition.kernel = kernel_from_json(j.at("kernel"), path + ".kernel");
  const json& jind = j.at("inducing");
  check_keys(jind, path + ".inducing", {"Z", "U", "sigma_u"});
  archive.model.transition.inducing.Z = mat_from_json(jind.at("Z"), path + ".inducing.Z");
  archive.model.transition.inducing.U = mat_from_json(jind.at("U"), path + ".inducing.U");
  archive.model.transition.inducing.sigma_u =
      vec_from_json(jind.at("sigma_u"), path + ".inducing.sigma_u");
  const json& jfix = j.at("fixed_points");
  check_keys(jfix, path + ".fixed_points", {"S", "sigma_s", "J"});
  archive.model.transition.fixed_points.S =
      mat_from_json(jfix.at("S"), path + ".fixed_points.S");
  archive.model.transition.fixed_points.sigma_s =
      vec_from_json(jfix.at("sigma_s"), path + ".fixed_points.sigma_s");
  if (!jfix.at("J").is_array()) throw ConfigError(path + ".fixed_points.J: expected array");
  for (const auto& jac : jfix.at("J"))
    archive.model.transition.fixed_points.J.push_back(
        mat_from_json(jac, path + ".fixed_points.J"));
  // An empty slot set still needs the latent dimension on S.
  if (archive.model.transition.fixed_points.p() == 0)
    archive.model.transition.fixed_points.S.resize(0, archive.model.transition.inducing.Z.cols());
  archive.model.transition.sigma_eps = vec_from_json(j.at("sigma_eps"), path + ".sigma_eps");
  archive.model.transition.jacobian_noise_follows_sigma_s =
      get_bool(j.at("jacobian_noise_follows_sigma_s"), path + ".jacobian_noise_follows_sigma_s");
  const json& jobs = j.at("observation");
  check_keys(jobs, path + ".observation", {"C", "sigma_eta"});
  archive.model.observation.C = mat_from_json(jobs.at("C"), path + ".observation.C");
  archive.model.observation.sigma_eta =
      vec_from_json(jobs.at("sigma_eta"), path + ".observation.sigma_eta");
  const json& jinit = j.at("init");
  check_keys(jinit, path + ".init", {"mu0", "sigma0"});
  archive.model.init.mu0 = vec_from_json(jinit.at("mu0"), path + ".init.mu0");
  archive.model.init.sigma0 = vec_from_json(jinit.at("sigma0"), path + ".init.sigma0");
  const json& jprov = j.at("provenance");
  check_keys(jprov, path + ".provenance", {"config_hash", "seed"});
  archive.config_hash = get_string(jprov.at("config_hash"), path + ".provenance.config_hash");
  archive.seed = get_uint64(jprov.at("seed"), path + ".provenance.seed");
  validate(archive.model);
  return archive;
}

void write_diagram(const std::string& csv_path,
                   const bifurcation::BifurcationDiagram& diagram) {
  bifurcation::validate(diagram);
  int d = 0;
  for (const auto& point : diagram.points)
    for (const auto& est : point.estimates) {
      if (d == 0) d = static_cast<int>(est.location.size());
      if (static_cast<int>(est.location.size()) != d)
        throw ShapeError("diagram: estimates disagree on state dimension");
    }
  if (d == 0) d = 1;  // header needs some dimension even with no estimates

  std::ostringstream out;
  out << "control_value,slot_id,active";
  for (int i = 1; i <= d; ++i) out << ",x_" << i;
  out << ",sigma_s,belief,class";
  for (int i = 1; i <= d; ++i) out << ",eig_real_" << i;
  for (int i = 1; i <= d; ++i) out << ",eig_imag_" << i;
  out << ",merged_from\n";
  for (const auto& point : diagram.points) {
    for (const auto& est : point.estimates) {
      out << format_double(point.control) << "," << est.slot << ","
          << (est.active ? 1 : 0);
      for (int i = 0; i < d; ++i) out << "," << format_double(est.location(i));
      out << "," << format_double(est.sigma_s) << ","
          << format_double(est.belief_strength) << "," << to_string(est.cls);
      for (int i = 0; i < d; ++i)
        out << "," << format_double(i < static_cast<int>(est.eigenvalues.size())
                                        ? est.eigenvalues[i].real()
                                        : 0.0);
      for (int i = 0; i < d; ++i)
        out << "," << format_double(i < static_cast<int>(est.eigenvalues.size())
                                        ? est.eigenvalues[i].imag()
                                        : 0.0);
      out << ",";
      for (size_t i = 0; i < est.merged_from.size(); ++i) {
        if (i > 0) out << ";";
        out << est.merged_from[i];
      }
      out << "\n";
    }
  }
  write_text_file(csv_path, out.str());
}

bifurcation::BifurcationDiagram read_diagram(const std::string& csv_path) {
  std::istringstream in(read_text_file(csv_path));
  std::string line;
  size_t row = 0;
  if (!std::getline(in, line))
    throw ConfigError(row_label(csv_path, 1) + ": missing header");
  ++row;
  const auto header = split_csv_row(line);
  int d = 0;
  while (3 + d < static_cast<int>(header.size()) &&
         header[3 + d] == "x_" + std::to_string(d + 1))
    ++d;
  const size_t expected = 3 + d + 3 + 2 * d + 1;
  if (d == 0 || header.size() != expected || header[0] != "control_value")
    throw ConfigError(row_label(csv_path, row) + ": malformed diagram header");

  bifurcation::BifurcationDiagram diagram;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const std::string where = row_label(csv_path, row);
    const auto fields = split_csv_row(line);
    if (fields.size() != expected)
      throw ConfigError(where + ": expected " + std::to_string(expected) +
                        " fields, got " + std::to_string(fields.size()));
    const double control = parse_double(fields[0], where);
    if (diagram.points.empty() || diagram.points.back().control != control) {
      bifurcation::DiagramPoint point;
      point.control = control;
      diagram.points.push_back(std::move(point));
    }
    bifurcation::FixedPointEstimate est;
    est.slot = static_cast<int>(parse_long(fields[1], where));
    est.active = parse_long(fields[2], where) != 0;
    est.location = Vec(d);
    for (int i = 0; i < d; ++i) est.location(i) = parse_double(fields[3 + i], where);
    est.sigma_s = parse_double(fields[3 + d], where);
    est.belief_strength = parse_double(fields[4 + d], where);
    est.cls = stability_from_string(fields[5 + d], where);
    for (int i = 0; i < d; ++i)
      est.eigenvalues.emplace_back(parse_double(fields[6 + d + i], where),
                                   parse_double(fields[6 + 2 * d + i], where));
    est.max_abs_eig = classify_eigenvalues(est.eigenvalues).max_abs_eig;
    const std::string& merged = fields[expected - 1];
    std::string cur;
    for (char c : merged + ";") {
      if (c == ';') {
        if (!cur.empty()) est.merged_from.push_back(static_cast<int>(parse_long(cur, where)));
        cur.clear();
      } else {
        cur += c;
      }
    }
    diagram.points.back().estimates.push_back(std::move(est));
  }
  bifurcation::validate(diagram);
  return diagram;
}

void write_diagram_summary(const std::string& json_path,
                           const bifurcation::BifurcationDiagram& diagram) {
  bifurcation::validate(diagram);
  json points = json::array();
  for (const auto& point : diagram.points) {
    json jp;
    jp["control"] = point.control;
    jp["data_scale"] = point.data_scale;
    json fit;
    fit["objective"] = std::isfinite(point.fit.objective)
                           ? json(point.fit.objective)
                           : json(nullptr);
    fit["iterations"] = point.fit.iterations;
    fit["restarts"] = point.fit.restarts;
    fit["status"] = status_to_string(point.fit.status);
    fit["message"] = point.fit.message;
    jp["fit"] = std::move(fit);
    int n_stable = 0, n_unstable = 0, n_saddle = 0;
    json ests = json::array();
    for (const auto& est : point.estimates) {
      if (est.active) {
        if (est.cls == Stability::Stable) ++n_stable;
        if (est.cls == Stability::Unstable) ++n_unstable;
        if (est.cls == Stability::Saddle) ++n_saddle;
      }
      json je;
      je["slot"] = est.slot;
      je["location"] = vec_to_json(est.location);
      je["jacobian"] = mat_to_json(est.jacobian);
      je["sigma_s"] = est.sigma_s;
      je["belief"] = est.belief_strength;
      je["active"] = est.active;
      je["class"] = to_string(est.cls);
      je["marginal"] = est.marginal;
      json eigs = json::array();
      for (const auto& l : est.eigenvalues) {
        json e;
        e["re"] = l.real();
        e["im"] = l.imag();
        eigs.push_back(std::move(e));
      }
      je["eigenvalues"] = std::move(eigs);
      json merged = json::array();
      for (int s : est.merged_from) merged.push_back(s);
      je["merged_from"] = std::move(merged);
      ests.push_back(std::move(je));
    }
    json counts;
    counts["stable"] = n_stable;
    counts["unstable"] = n_unstable;
    counts["saddle"] = n_saddle;
    jp["counts"] = std::move(counts);
    jp["estimates"] = std::move(ests);
    points.push_back(std::move(jp));
  }
  json j;
  j["points"] = std::move(points);
  write_text_file(json_path, j.dump(2) + "\n");
}

bifurcation::BifurcationDiagram read_diagram_summary(const std::string& json_path) {
  json j;
  try {
    j = json::parse(read_text_file(json_path));
  } catch (const json::parse_error& e) {
    throw ConfigError(json_path + ": " + e.what());
  }
  check_keys(j, json_path, {"points"});
  if (!j.at("points").is_array()) throw ConfigError(json_path + ": points must be an array");
  bifurcation::BifurcationDiagram diagram;
  for (const auto& jp : j.at("points")) {
    check_keys(jp, json_path + ".points[]",
               {"control", "data_scale", "fit", "counts", "estimates"});
    bifurcation::DiagramPoint point;
    point.control = get_double(jp.at("control"), json_path + ".control");
    // Non-finite doubles are written as null; read them back as NaN so a
    // diagram with failed grid points still loads.
    const auto double_or_nan = [&](const json& v, const std::string& ctx) {
      return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : get_double(v, ctx);
    };
    point.data_scale = double_or_nan(jp.at("data_scale"), json_path + ".data_scale");
    const json& fit = jp.at("fit");
    check_keys(fit, json_path + ".fit",
               {"objective", "iterations", "restarts", "status", "message"});
    point.fit.objective = double_or_nan(fit.at("objective"), json_path + ".fit.objective");
    point.fit.iterations = get_int(fit.at("iterations"), json_path + ".fit.iterations");
    point.fit.restarts = get_int(fit.at("restarts"), json_path + ".fit.restarts");
    point.fit.status = status_from_string(get_string(fit.at("status"), json_path), json_path);
    point.fit.message = get_string(fit.at("message"), json_path + ".fit.message");
    for (const auto& je : jp.at("estimates")) {
      check_keys(je, json_path + ".estimates[]",
                 {"slot", "location", "jacobian", "sigma_s", "belief", "active", "class",
                  "marginal", "eigenvalues", "merged_from"});
      bifurcation::FixedPointEstimate est;
      est.slot = get_int(je.at("slot"), json_path + ".slot");
      est.location = vec_from_json(je.at("location"), json_path + ".location");
      est.jacobian = mat_from_json(je.at("jacobian"), json_path + ".jacobian");
      est.sigma_s = get_double(je.at("sigma_s"), json_path + ".sigma_s");
      est.belief_strength = get_double(je.at("belief"), json_path + ".belief");
      est.active = get_bool(je.at("active"), json_path + ".active");
      est.cls = stability_from_string(get_string(je.at("class"), json_path), json_path);
      est.marginal = get_bool(je.at("marginal"), json_path + ".marginal");
      for (int s : je.at("merged_from")) est.merged_from.push_back(s);
      if (est.jacobian.rows() > 0) {
        // Eigenstructure is recomputed from the stored Jacobian so the
        // eigenvalue order and the eigenvectors stay mutually consistent.
        Eigen::EigenSolver<Mat> es(est.jacobian);
        if (es.info() != Eigen::Success)
          throw NumericDomainError(json_path + ": eigensolver failed on a stored Jacobian");
        for (int k = 0; k < es.eigenvalues().size(); ++k)
          est.eigenvalues.push_back(es.eigenvalues()(k));
        est.eigenvectors = es.eigenvectors();
        est.max_abs_eig = classify_eigenvalues(est.eigenvalues).max_abs_eig;
      } else {
        for (const auto& e : je.at("eigenvalues")) {
          check_keys(e, json_path + ".eigenvalues[]", {"re", "im"});
          est.eigenvalues.emplace_back(get_double(e.at("re"), json_path),
                                       get_double(e.at("im"), json_path));
        }
        est.max_abs_eig = classify_eigenvalues(est.eigenvalues).max_abs_eig;
      }
      point.estimates.push_back(std::move(est));
    }
    diagram.points.push_back(std::move(point));
  }
  bifurcation::validate(diagram);
  return diagram;
}

namespace {

json fit_to_json(const learn::FitConfig& f) {
  json j;
  j["m_inducing"] = f.m_inducing;
  j["p_fixed_points"] = f.p_fixed_points;
  j["kernel"] = kernel_to_string(f.kernel_type);
  j["gradient"] = gradient_to_string(f.gradient_method);
  j["max_iterations"] = f.max_iterations;
  j["tolerance"] = f.tolerance;
  j["step_size"] = f.step_size;
  j["restarts"] = f.restarts;
  json freeze = json::array();
  for (const auto& name : f.freeze) freeze.push_back(name);
  j["freeze"] = std::move(freeze);
  j["jacobian_noise_follows_sigma_s"] = f.jacobian_noise_follows_sigma_s;
  j["log_every"] = f.log_every;
  return j;
}

learn::FitConfig fit_from_json(const json& j, const std::string& context) {
  check_keys(j, context,
             {"m_inducing", "p_fixed_points", "kernel", "gradient", "max_iterations",
              "tolerance", "step_size", "restarts", "freeze",
              "jacobian_noise_follows_sigma_s", "log_every"});
  learn::FitConfig f;
  if (j.contains("m_inducing")) f.m_inducing = get_int(j["m_inducing"], context + ".m_inducing");
  if (j.contains("p_fixed_points"))
    f.p_fixed_points = get_int(j["p_fixed_points"], context + ".p_fixed_points");
  if (j.contains("kernel"))
    f.kernel_type = kernel_from_string(get_string(j["kernel"], context + ".kernel"), context);
  if (j.contains("gradient"))
    f.gradient_method =
        gradient_from_string(get_string(j["gradient"], context + ".gradient"), context);
  if (j.contains("max_iterations"))
    f.max_iterations = get_int(j["max_iterations"], context + ".max_iterations");
  if (j.contains("tolerance")) f.tolerance = get_double(j["tolerance"], context + ".tolerance");
  if (j.contains("step_size")) f.step_size = get_double(j["step_size"], context + ".step_size");
  if (j.contains("restarts")) f.restarts = get_int(j["restarts"], context + ".restarts");
  if (j.contains("freeze")) {
    if (!j["freeze"].is_array()) throw ConfigError(context + ".freeze: expected an array");
    for (const auto& name : j["freeze"])
      f.freeze.push_back(get_string(name, context + ".freeze[]"));
  }
  if (j.contains("jacobian_noise_follows_sigma_s"))
    f.jacobian_noise_follows_sigma_s =
        get_bool(j["jacobian_noise_follows_sigma_s"], context + ".jacobian_noise_follows_sigma_s");
  if (j.contains("log_every")) f.log_every = get_int(j["log_every"], context + ".log_every");
  return f;
}

json sweep_to_json(const SweepSection& s) {
  json j;
  j["system"] = s.system;
  j["grid"] = vec_to_json(s.grid);
  j["belief_threshold"] = s.belief_threshold;
  j["dedupe_radius_scale"] = s.dedupe_radius_scale;
  j["warm_start"] = s.warm_start;
  return j;
}

SweepSection sweep_from_json(const json& j, const std::string& context) {
  check_keys(j, context,
             {"system", "grid", "belief_threshold", "dedupe_radius_scale", "warm_start"});
  SweepSection s;
  if (j.contains("system")) s.system = get_string(j["system"], context + ".system");
  if (s.system != "pitchfork" && s.system != "mutual_inhibition")
    throw ConfigError(context + ".system: unknown system '" + s.system + "'");
  if (j.contains("grid")) s.grid = vec_from_json(j["grid"], context + ".grid");
  if (j.contains("belief_threshold"))
    s.belief_threshold = get_double(j["belief_threshold"], context + ".belief_threshold");
  if (j.contains("dedupe_radius_scale"))
    s.dedupe_radius_scale =
        get_double(j["dedupe_radius_scale"], context + ".dedupe_radius_scale");
  if (j.contains("warm_start")) s.warm_start = get_bool(j["warm_start"], context + ".warm_start");
  return s;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  check_keys(j, "config",
             {"seed", "out", "dataset", "diagram", "pitchfork", "mutual_inhibition",
              "fit", "sweep"});
  RunConfig cfg;
  if (j.contains("seed")) cfg.seed = get_uint64(j["seed"], "config.seed");
  if (j.contains("out")) cfg.out_dir = get_string(j["out"], "config.out");
  if (j.contains("dataset")) cfg.dataset_path = get_string(j["dataset"], "config.dataset");
  if (j.contains("diagram")) cfg.diagram_path = get_string(j["diagram"], "config.diagram");
  if (j.contains("pitchfork"))
    cfg.pitchfork = pitchfork_from_json(j["pitchfork"], "config.pitchfork");
  if (j.contains("mutual_inhibition"))
    cfg.mutual = mutual_from_json(j["mutual_inhibition"], "config.mutual_inhibition");
  if (j.contains("fit")) cfg.fit = fit_from_json(j["fit"], "config.fit");
  if (j.contains("sweep")) cfg.sweep = sweep_from_json(j["sweep"], "config.sweep");
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_text_file(path));
}

std::string resolved_config_text(const RunConfig& config) {
  json j;
  j["seed"] = config.seed;
  j["out"] = config.out_dir;
  if (!config.dataset_path.empty()) j["dataset"] = config.dataset_path;
  if (!config.diagram_path.empty()) j["diagram"] = config.diagram_path;
  if (config.pitchfork.has_value()) j["pitchfork"] = pitchfork_to_json(*config.pitchfork);
  if (config.mutual.has_value()) j["mutual_inhibition"] = mutual_to_json(*config.mutual);
  j["fit"] = fit_to_json(config.fit);
  if (config.sweep.has_value()) j["sweep"] = sweep_to_json(*config.sweep);
  return j.dump(2) + "\n";
}

std::string config_hash(const std::string& resolved_text) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(rng::hash_name(resolved_text)));
  return buf;
}

}  // namespace fpgp::io
