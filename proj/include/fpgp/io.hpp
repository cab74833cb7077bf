#pragma once
// Text serialization: dataset tables with a JSON metadata sidecar, versioned
// model archives, bifurcation diagram tables with a JSON summary, and run
// configuration parsing that rejects unknown keys.

#include <cstdint>
#include <optional>
#include <string>

#include <fpgp/adf.hpp>
#include <fpgp/bifurcation.hpp>
#include <fpgp/sim.hpp>

namespace fpgp::io {

// Shortest exact decimal round trip is not needed; 17 significant digits
// reproduce every double bit for bit on read.
std::string format_double(double v);

// Dataset tables: header trial,t,y_1..y_Dy with rows t = 1..T per trial.
void write_dataset(const std::string& csv_path, const TrajectoryDataset& data);

// Errors name the offending row (1-based, counting the header).
TrajectoryDataset read_dataset(const std::string& csv_path);

// Simulation metadata written next to a dataset.
struct DatasetMeta {
  std::string kind;  // "pitchfork" or "mutual_inhibition"
  std::optional<sim::PitchforkParams> pitchfork;
  std::optional<sim::MutualInhibitionParams> mutual;
};

void write_dataset_meta(const std::string& json_path, const DatasetMeta& meta);
DatasetMeta read_dataset_meta(const std::string& json_path);

// Versioned model archive. Retains enough provenance to reproduce the run.
struct ModelArchive {
  SystemModel model;
  int format_version = 1;
  uint64_t seed = 0;
  std::string config_hash;
};

// Written atomically: a temp file in the target directory is renamed over
// the destination.
void save_model(const std::string& path, const ModelArchive& archive);
ModelArchive load_model(const std::string& path);

// Diagram table: one row per estimate with columns control_value, slot_id,
// active, x_1..x_D, sigma_s, belief, class, eig_real_i, eig_imag_i (i = 1..D)
// and merged_from (semicolon-joined slot ids).
void write_diagram(const std::string& csv_path,
                   const bifurcation::BifurcationDiagram& diagram);

// Rebuilds estimates from the table alone; Jacobians and eigenvectors are
// not part of the table, so entries carry eigenvalues only. Grid points
// without any estimate rows are absent.
bifurcation::BifurcationDiagram read_diagram(const std::string& csv_path);

// Full-fidelity JSON summary (fit diagnostics, per-class counts, Jacobians).
void write_diagram_summary(const std::string& json_path,
                           const bifurcation::BifurcationDiagram& diagram);
bifurcation::BifurcationDiagram read_diagram_summary(const std::string& json_path);

// Run configuration. Sections are optional; a command requiring an absent
// section fails with a message naming it. Unknown keys are rejected.
struct SweepSection {
  std::string system = "pitchfork";  // or "mutual_inhibition"
  Vec grid;
  double belief_threshold = 0.5;
  double dedupe_radius_scale = 0.25;
  bool warm_start = false;
};

struct RunConfig {
  uint64_t seed = 0;
  std::string out_dir = ".";
  std::string dataset_path;
  std::string diagram_path;
  std::optional<sim::PitchforkParams> pitchfork;
  std::optional<sim::MutualInhibitionParams> mutual;
  learn::FitConfig fit;
  std::optional<SweepSection> sweep;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// All defaults materialized; deterministic key order and formatting.
std::string resolved_config_text(const RunConfig& config);

// FNV-based hex digest of the resolved configuration text.
std::string config_hash(const std::string& resolved_text);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace fpgp::io
