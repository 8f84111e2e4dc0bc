#pragma once
// Run configuration: a TOML-compatible key-value file with documented
// defaults, validated against the rules of the numerical modules.

#include "kgd/geometry.hpp"

#include <cstdint>

namespace kgd {

/// Configuration problem; `violations` lists every broken rule.
class ConfigError : public KgdError {
 public:
  explicit ConfigError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

/// Tolerance names and their defaults (overridable in [tolerances]).
std::map<std::string, double> default_tolerances();

/// Bound on max|d_t h| * dt (relative change of the metric per time step).
inline constexpr double kGeneratorResolution = 1e-2;

/// Sampling of the frequency proxy: 512 samples spaced by this step (rounded to the grid).
inline constexpr double kProxyStep = 0.1;
inline constexpr int kProxySamples = 512;

struct RunConfig {
  std::string scenario = "static";
  std::map<std::string, double> params;  ///< preset parameter overrides
  int n_points = 64;                     ///< N
  double length = 8 * M_PI;              ///< L
  double horizon = 20.0;                 ///< T: time grid [-T, T]
  double dt = 0.05;
  int riccati_order = 3;                 ///< p
  double gap_floor = 0.5;
  std::vector<double> horizons = {10, 20, 40};  ///< doubling large-time schedule (clipped to T)
  std::map<std::string, double> tolerances = default_tolerances();
  std::string output_dir = "kgd_out";
  std::string cache_policy = "readwrite";  ///< off | read | readwrite
  std::string cache_dir;                   ///< empty: <output_dir>/cache
  std::uint64_t seed = 0;

  double tol(const std::string& name) const;
  /// Horizon schedule restricted to the time grid.
  std::vector<double> schedule() const;
  /// Step of the frequency-proxy samples (a multiple of dt).
  double proxy_step() const;
  /// Canonical TOML text of every field (config echo).
  std::string to_toml() const;
  /// CRC-64 of the canonical text of the fields that determine the numerics.
  std::uint64_t hash() const;
};

std::string hash_hex(std::uint64_t h);

/// Parses and validates; throws ConfigError with line/column for syntax
/// errors and with every violated rule otherwise.
RunConfig parse_config(const std::string& text, const std::string& origin = "<string>");
RunConfig load_config(const std::string& path);

/// Violated rules of an assembled config (empty when valid).
std::vector<std::string> validate_config(const RunConfig& cfg);

}  // namespace kgd
