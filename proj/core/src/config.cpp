#include "kgd/config.hpp"

#include <toml.hpp>

#include <boost/crc.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace kgd {

namespace {

std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

std::string num(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);  // shortest round-trip form
  std::string s(buf, res.ptr);
  // Keep floats recognizable as TOML floats.
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

std::string where(const toml::node& n) {
  const auto& b = n.source().begin;
  return " (line " + std::to_string(b.line) + ", column " + std::to_string(b.column) + ")";
}

/// Reads typed values out of a parsed table, collecting every problem.
class Reader {
 public:
  std::vector<std::string> problems;

  void number(const toml::node& n, const std::string& key, double& out) {
    if (auto v = n.value<double>()) out = *v;
    else problems.push_back("'" + key + "' must be a number" + where(n));
  }
  void integer(const toml::node& n, const std::string& key, int& out) {
    if (auto v = n.as_integer()) out = static_cast<int>(v->get());
    else problems.push_back("'" + key + "' must be an integer" + where(n));
  }
  void string(const toml::node& n, const std::string& key, std::string& out) {
    if (auto v = n.as_string()) out = v->get();
    else problems.push_back("'" + key + "' must be a string" + where(n));
  }
  void unknown(const toml::node& n, const std::string& key) {
    problems.push_back("unknown key '" + key + "'" + where(n));
  }
  const toml::table* table(const toml::node& n, const std::string& key) {
    if (auto t = n.as_table()) return t;
    problems.push_back("'" + key + "' must be a table" + where(n));
    return nullptr;
  }
};

double max_dh_dt(const MetricScenario& s, const SpatialGrid& grid, const TimeGrid& tg) {
  double m = 0.0;
  for (int k = 0; k < tg.count; ++k) {
    const double t = tg.at(k);
    for (int j = 0; j < grid.n_points; ++j) {
      const double x = grid.points(j);
      double d;
      if (s.dh_dt) {
        d = s.dh_dt(t, x);
      } else {
        const double e = 1e-5;
        d = (s.h(t + e, x) - s.h(t - e, x)) / (2 * e);
      }
      m = std::max(m, std::abs(d));
    }
  }
  return m;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> violations)
    : KgdError("invalid configuration:\n  - " + join(violations, "\n  - ")), violations_(std::move(violations)) {}

std::map<std::string, double> default_tolerances() {
  return {
      {"riccati.residual", 1e-10},          // static Riccati residual
      {"decay.band", 0.3},                  // relative band of decay-exponent fits
      {"transfer.inverse", 1e-8},
      {"transfer.symplectic", 1e-8},        // T^dagger q T = q^ad
      {"generator.selfadjoint", 1e-8},
      {"evolution.symplectic", 1e-8},
      {"evolution.cross_validation", 1e-7}, // U vs T U^ad T^{-1}
      {"covariance.complement", 1e-8},
      {"covariance.idempotency", 1e-6},
      {"covariance.positivity", 1e-8},
      {"covariance.vacuum", 1e-8},          // static reference = vacuum projections
      {"two_point.causal", 1e-8},           // Lambda+ - Lambda- = i G
      {"two_point.residual", 1e-6},         // P Lambda at interior nodes
      {"two_point.positivity", 1e-8},
      {"hadamard.fraction", 0.99},
      {"moller.identity", 1e-8},            // static Moller operators
      {"moller.inverse", 1e-7},
      {"moller.chain", 1e-7},
      {"compactness.orders", 4.0},
      {"compactness.rank_fraction", 0.25},  // effective rank <= fraction * N
      {"weight.factor", 5.0},
      {"propagator.inverse", 1e-6},         // P G+- f = f (scalar)
      {"propagator.block_inverse", 1e-7},   // P^ad G^ad+- f = f
      {"propagator.support", 1e-8},
      {"propagator.adjoint", 1e-7},
      {"feynman.mode_function", 1e-7},      // static scalar kernel
      {"feynman.jump", 1e-10},
      {"feynman.boundary", 1e-6},
      {"feynman.positivity", 1e-8},
      {"feynman.fourier_tail", 1e-6},
      {"feynman.gauge_decay", 0.1},         // normalized gauge ratio between orders 0 and 2
      {"feynman.state_difference", 1e-7},   // static G_F vs state-based kernel
      {"flow.identity", 1e-12},
  };
}

double RunConfig::tol(const std::string& name) const {
  auto it = tolerances.find(name);
  if (it == tolerances.end()) throw KgdError("no tolerance named '" + name + "'");
  return it->second;
}

std::vector<double> RunConfig::schedule() const {
  std::vector<double> s;
  for (double h : horizons)
    if (h <= horizon + 1e-12) s.push_back(h);
  return s;
}

double RunConfig::proxy_step() const { return dt * std::max(1.0, std::round(kProxyStep / dt)); }

std::string RunConfig::to_toml() const {
  std::ostringstream os;
  os << "scenario = " << quoted(scenario) << "\n";
  os << "seed = " << seed << "\n\n[params]\n";
  for (const auto& [k, v] : params) os << k << " = " << num(v) << "\n";
  os << "\n[grid]\nN = " << n_points << "\nL = " << num(length) << "\n";
  os << "\n[time]\nT = " << num(horizon) << "\ndt = " << num(dt) << "\n";
  os << "\n[riccati]\norder = " << riccati_order << "\ngap_floor = " << num(gap_floor) << "\n";
  os << "\n[scattering]\nhorizons = [";
  for (size_t i = 0; i < horizons.size(); ++i) os << (i ? ", " : "") << num(horizons[i]);
  os << "]\n\n[tolerances]\n";
  for (const auto& [k, v] : tolerances) os << quoted(k) << " = " << num(v) << "\n";
  os << "\n[output]\ndir = " << quoted(output_dir) << "\n";
  os << "\n[cache]\npolicy = " << quoted(cache_policy) << "\ndir = " << quoted(cache_dir) << "\n";
  return os.str();
}

std::uint64_t RunConfig::hash() const {
  // Preset defaults are merged so that spelling out a default does not change the hash.
  std::map<std::string, double> p;
  try {
    p = preset_defaults(scenario);
  } catch (const KgdError&) {
  }
  for (const auto& [k, v] : params) p[k] = v;
  std::ostringstream os;
  os << "scenario=" << scenario << ";";
  for (const auto& [k, v] : p) os << k << "=" << num(v) << ";";
  os << "N=" << n_points << ";L=" << num(length) << ";T=" << num(horizon) << ";dt=" << num(dt)
     << ";p=" << riccati_order << ";gap_floor=" << num(gap_floor) << ";";
  const std::string text = os.str();
  boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL, ~0ULL, ~0ULL, true, true> crc;
  crc.process_bytes(text.data(), text.size());
  return crc.checksum();
}

std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::string> validate_config(const RunConfig& c) {
  std::vector<std::string> v;
  std::optional<MetricScenario> scenario;
  try {
    const auto defaults = preset_defaults(c.scenario);
    bool params_ok = true;
    for (const auto& [k, val] : c.params)
      if (!defaults.count(k)) {
        std::vector<std::string> names;
        for (const auto& [n, d] : defaults) names.push_back(n);
        v.push_back("rule params: preset '" + c.scenario + "' has no parameter '" + k + "' (parameters: " +
                    join(names, ", ") + ")");
        params_ok = false;
      }
    if (params_ok) scenario = make_preset(c.scenario, c.params, c.length > 0 ? c.length : 1.0);
  } catch (const KgdError& e) {
    v.push_back(std::string("rule scenario: ") + e.what());
  }
  if (c.n_points < 8 || c.n_points > 1024 || c.n_points % 2)
    v.push_back("rule grid.N: N must be even and in [8, 1024], got " + std::to_string(c.n_points));
  if (!(c.length > 0)) v.push_back("rule grid.L: L must be positive, got " + num(c.length));
  if (!(c.horizon > 0)) v.push_back("rule time.T: T must be positive, got " + num(c.horizon));
  if (!(c.dt > 0)) {
    v.push_back("rule time.dt: dt must be positive, got " + num(c.dt));
  } else if (c.horizon > 0) {
    const double steps = c.horizon / c.dt;
    if (std::abs(steps - std::round(steps)) > 1e-9 * steps)
      v.push_back("rule time.dt: T / dt must be an integer, got " + num(steps));
  }
  if (c.riccati_order < 1 || c.riccati_order > 12)
    v.push_back("rule riccati.order: p must be in [1, 12], got " + std::to_string(c.riccati_order));
  if (!(c.gap_floor > 0 && c.gap_floor < 1))
    v.push_back("rule riccati.gap_floor: must lie in (0, 1), got " + num(c.gap_floor));
  if (c.horizons.empty()) v.push_back("rule scattering.horizons: schedule is empty");
  for (size_t i = 0; i < c.horizons.size(); ++i)
    if (!(c.horizons[i] > 0) || (i > 0 && !(c.horizons[i] > c.horizons[i - 1])))
      v.push_back("rule scattering.horizons: schedule must be positive and strictly increasing");
  if (c.horizon > 0 && !c.horizons.empty() && c.schedule().size() < 2)
    v.push_back("rule scattering.horizons: at least two horizons must lie within T = " + num(c.horizon));
  const auto known = default_tolerances();
  for (const auto& [k, val] : c.tolerances) {
    if (!known.count(k)) v.push_back("rule tolerances: unknown tolerance '" + k + "'");
    else if (!(val > 0)) v.push_back("rule tolerances: '" + k + "' must be positive");
  }
  for (const auto& [k, val] : known)
    if (!c.tolerances.count(k)) v.push_back("rule tolerances: missing tolerance '" + k + "'");
  if (c.cache_policy != "off" && c.cache_policy != "read" && c.cache_policy != "readwrite")
    v.push_back("rule cache.policy: must be off, read or readwrite, got '" + c.cache_policy + "'");
  if (c.output_dir.empty()) v.push_back("rule output.dir: must not be empty");

  if (scenario && v.empty()) {
    const SpatialGrid grid = build_grid(c.n_points, c.length);
    const TimeGrid tg = TimeGrid::symmetric(c.horizon, c.dt);
    const double dh = max_dh_dt(*scenario, grid, tg);
    if (dh * c.dt > kGeneratorResolution) {
      std::ostringstream os;
      os << "rule time.dt: max|d_t h| * dt = " << dh * c.dt << " exceeds " << kGeneratorResolution
         << " (max|d_t h| = " << dh << "); use dt <= " << kGeneratorResolution / dh;
      v.push_back(os.str());
    }
    if (scenario->hypothesis != "static") {
      if (c.schedule().size() < 3)
        v.push_back("rule scattering.horizons: the decay fit of a time-dependent scenario needs at least three "
                    "horizons within T = " + num(c.horizon));
      const double window = kProxySamples * c.proxy_step();
      const double needed_T = 0.5 * window;
      const double needed_window = 8.0 * 2 * M_PI / scenario->mass_floor;
      if (c.horizon < needed_T - 1e-9) {
        std::ostringstream os;
        os << "rule time.T: the frequency proxy samples " << kProxySamples << " nodes spaced by "
           << c.proxy_step() << ", which needs T >= " << needed_T << " for scenario '" << c.scenario
           << "' (hypothesis " << scenario->hypothesis << "), got T = " << c.horizon;
        v.push_back(os.str());
      }
      if (window < needed_window) {
        std::ostringstream os;
        os << "rule time.dt: the frequency-proxy window " << window << " is shorter than 8 periods at the mass floor ("
           << needed_window << ")";
        v.push_back(os.str());
      }
    }
  }
  return v;
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
  toml::table root;
  try {
    root = toml::parse(text, origin);
  } catch (const toml::parse_error& e) {
    const auto& b = e.source().begin;
    throw ConfigError({"parse error in " + origin + " at line " + std::to_string(b.line) + ", column " +
                       std::to_string(b.column) + ": " + std::string(e.description())});
  }
  RunConfig c;
  Reader r;
  for (const auto& [key, node] : root) {
    const std::string k(key.str());
    if (k == "scenario") {
      r.string(node, k, c.scenario);
    } else if (k == "seed") {
      int s = 0;
      r.integer(node, k, s);
      if (s < 0) r.problems.push_back("'seed' must be non-negative" + where(node));
      c.seed = static_cast<std::uint64_t>(std::max(s, 0));
    } else if (k == "params") {
      if (auto t = r.table(node, k))
        for (const auto& [pk, pn] : *t) r.number(pn, "params." + std::string(pk.str()), c.params[std::string(pk.str())]);
    } else if (k == "tolerances") {
      // Dotted names may be quoted ("a.b" = x) or written as nested keys (a.b = x).
      std::function<void(const toml::table&, const std::string&)> read = [&](const toml::table& t,
                                                                             const std::string& prefix) {
        for (const auto& [tk, tn] : t) {
          const std::string name = prefix + std::string(tk.str());
          if (auto sub = tn.as_table()) read(*sub, name + ".");
          else if (!c.tolerances.count(name)) r.unknown(tn, "tolerances." + name);
          else r.number(tn, "tolerances." + name, c.tolerances[name]);
        }
      };
      if (auto t = r.table(node, k)) read(*t, "");
    } else if (k == "grid" || k == "time" || k == "riccati" || k == "scattering" || k == "output" || k == "cache") {
      const toml::table* t = r.table(node, k);
      if (!t) continue;
      for (const auto& [sk, sn] : *t) {
        const std::string s(sk.str()), full = k + "." + s;
        if (full == "grid.N") r.integer(sn, full, c.n_points);
        else if (full == "grid.L") r.number(sn, full, c.length);
        else if (full == "time.T") r.number(sn, full, c.horizon);
        else if (full == "time.dt") r.number(sn, full, c.dt);
        else if (full == "riccati.order") r.integer(sn, full, c.riccati_order);
        else if (full == "riccati.gap_floor") r.number(sn, full, c.gap_floor);
        else if (full == "output.dir") r.string(sn, full, c.output_dir);
        else if (full == "cache.policy") r.string(sn, full, c.cache_policy);
        else if (full == "cache.dir") r.string(sn, full, c.cache_dir);
        else if (full == "scattering.horizons") {
          c.horizons.clear();
          if (auto arr = sn.as_array()) {
            for (const auto& e : *arr) {
              double h = 0;
              r.number(e, full, h);
              c.horizons.push_back(h);
            }
          } else {
            r.problems.push_back("'" + full + "' must be an array of numbers" + where(sn));
          }
        } else {
          r.unknown(sn, full);
        }
      }
    } else {
      r.unknown(node, k);
    }
  }
  std::vector<std::string> problems = r.problems;
  if (problems.empty()) problems = validate_config(c);
  if (!problems.empty()) throw ConfigError(problems);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open config file '" + path + "'"});
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

}  // namespace kgd
