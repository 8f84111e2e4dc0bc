#pragma once
// Staged pipeline geometry -> diagonalization -> evolution -> states ->
// scattering -> propagators, the diagnostics bundle it produces, and the
// CSV / JSON / gnuplot artifacts written from it.

#include "kgd/config.hpp"
#include "kgd/propagators.hpp"

#include <iosfwd>

namespace kgd {

/// One numeric claim. Relations: "<=", ">=", "==" and "within"
/// (|value - target| <= tolerance * |target|).
struct Check {
  std::string invariant;    ///< dotted name of the module invariant
  std::string description;
  double value = 0.0;
  std::string relation = "<=";
  double tolerance = 0.0;
  double target = 0.0;      ///< reference value of "within" checks
  bool pass = false;
};

struct StageResult {
  std::string name;
  std::vector<Check> checks;
  std::map<std::string, std::string> facts;  ///< non-numeric findings (selected conventions, labels)
  std::string error;                         ///< hard failure that stopped the pipeline
  bool skipped = false;
  double seconds = 0.0;
  bool pass() const;
};

/// Plot-ready sampled curve, written as one CSV file.
struct Series {
  std::string name;
  std::string x_label, y_label;  ///< column headers including units
  std::vector<double> x, y;
  bool log_scale = false;
};

struct DiagnosticsBundle {
  static constexpr int kSchemaVersion = 1;
  int schema_version = kSchemaVersion;
  std::string artifact_version;
  std::string scenario;
  std::string config_toml;   ///< config echo
  std::string config_hash;
  std::vector<StageResult> stages;
  std::vector<Series> series;
  std::vector<std::string> files;    ///< artifacts written, relative to the output directory
  std::vector<std::string> run_log;  ///< cache events (run information, like timings)
  double total_seconds = 0.0;

  bool pass() const;
  /// Check by stage and invariant name (nullptr if absent).
  const Check* find(const std::string& stage, const std::string& invariant) const;
  const StageResult* stage(const std::string& name) const;
};

struct PipelineOptions {
  bool write_outputs = true;
  std::ostream* log = nullptr;  ///< progress and cache messages
};

/// Runs every stage that applies to the scenario; a thrown error ends the
/// run and is recorded with the stage name, later stages are marked skipped.
DiagnosticsBundle run_pipeline(const RunConfig& cfg, const PipelineOptions& opts = {});

/// JSON text of the bundle; without run information (timings, cache events)
/// identical configs give identical text.
std::string bundle_to_json(const DiagnosticsBundle& b, bool include_run_info = true);
DiagnosticsBundle bundle_from_json(const std::string& text);
DiagnosticsBundle load_bundle(const std::string& path);

/// Human-readable table of stages and checks.
std::string bundle_summary(const DiagnosticsBundle& b);

/// Kernel samples as CSV rows (t, s, i, j, x_i, x_j, re, im) over all spatial pairs.
void write_kernel_csv(const std::string& path, const SpatialGrid& grid, const std::vector<double>& t_list,
                      const std::vector<double>& s_list, const std::vector<Mat>& blocks);

std::string artifact_version();

}  // namespace kgd
