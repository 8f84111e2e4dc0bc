#include "kgd/pipeline.hpp"

#include "kgd/cache.hpp"
#include "kgd/scattering.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#ifndef KGD_VERSION
#define KGD_VERSION "0.0.0"
#endif

namespace kgd {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string artifact_version() { return KGD_VERSION; }

bool StageResult::pass() const {
  if (!error.empty() || skipped) return false;
  for (const Check& c : checks)
    if (!c.pass) return false;
  return true;
}

bool DiagnosticsBundle::pass() const {
  for (const StageResult& s : stages)
    if (!s.pass()) return false;
  return !stages.empty();
}

const StageResult* DiagnosticsBundle::stage(const std::string& name) const {
  for (const StageResult& s : stages)
    if (s.name == name) return &s;
  return nullptr;
}

const Check* DiagnosticsBundle::find(const std::string& stage_name, const std::string& invariant) const {
  const StageResult* s = stage(stage_name);
  if (!s) return nullptr;
  for (const Check& c : s->checks)
    if (c.invariant == invariant) return &c;
  return nullptr;
}

namespace {

// ---------------------------------------------------------------- checks

Check make_check(std::string inv, std::string desc, double value, std::string rel, double tol, double target = 0.0) {
  Check c{std::move(inv), std::move(desc), value, std::move(rel), tol, target, false};
  if (std::isfinite(value)) {
    if (c.relation == "<=") c.pass = value <= tol;
    else if (c.relation == ">=") c.pass = value >= tol;
    else if (c.relation == "==") c.pass = value == tol;
    else if (c.relation == "within") c.pass = std::abs(value - target) <= tol * std::abs(target);
  }
  return c;
}
Check le(std::string inv, std::string desc, double v, double tol) { return make_check(inv, desc, v, "<=", tol); }
Check ge(std::string inv, std::string desc, double v, double tol) { return make_check(inv, desc, v, ">=", tol); }
Check eq(std::string inv, std::string desc, double v, double expected) { return make_check(inv, desc, v, "==", expected); }
Check within(std::string inv, std::string desc, double v, double target, double band) {
  return make_check(inv, desc, v, "within", band, target);
}

std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(6) << x;
  return os.str();
}

// ---------------------------------------------------------------- context

struct Context {
  const RunConfig& cfg;
  const PipelineOptions& opts;
  DiagnosticsBundle& bundle;
  std::string out_dir;
  std::uint64_t hash = 0;

  TimeGrid times;
  std::shared_ptr<SpatialGrid> grid;
  MetricScenario original, reduced;
  std::shared_ptr<ModelOperatorData> model;
  std::shared_ptr<RiccatiSolution> sol;
  std::shared_ptr<DiagonalizationPack> pack;
  std::shared_ptr<PropagationTable> U, Uad, Ud;
  std::optional<CovariancePair> ref;

  bool is_static() const { return model->hypothesis == "static"; }
  bool is_std() const { return model->hypothesis == "std"; }
  int n() const { return grid->n_points; }
  double T() const { return cfg.horizon; }
  double snap(double t) const { return times.at(times.nearest(t)); }
  int node(double t) const { return times.nearest(t); }

  void log(const std::string& line) const {
    if (opts.log) *opts.log << line << std::endl;
  }
  void note(const std::string& line) {
    bundle.run_log.push_back(line);
    log(line);
  }
  void add_series(Series s) { bundle.series.push_back(std::move(s)); }
};

/// Node samples t_0 < ... < t_{count-1} spread over [a, b].
std::vector<double> samples(const Context& c, double a, double b, int count) {
  std::vector<double> out;
  for (int i = 0; i < count; ++i) {
    const double t = c.snap(a + (b - a) * i / (count - 1));
    if (out.empty() || t > out.back()) out.push_back(t);
  }
  return out;
}

/// Log-spaced nodes in [a, b].
std::vector<double> log_samples(const Context& c, double a, double b, int count) {
  std::vector<double> out;
  for (int i = 0; i < count; ++i) {
    const double t = c.snap(a * std::pow(b / a, static_cast<double>(i) / (count - 1)));
    if (out.empty() || t > out.back()) out.push_back(t);
  }
  return out;
}

double bump(double t, double c, double w) { return std::exp(-0.5 * (t - c) * (t - c) / (w * w)); }

/// Smooth source bump(t - centre) (1 + cos(2 pi x / L) / 2) of width min(1, T / 10), so that it vanishes to
/// machine precision at the ends of the time grid.
GridField scalar_source(const TimeGrid& tg, int n, double centre) {
  const double w = std::min(1.0, 0.1 * tg.t_end());
  GridField f(tg.count);
  for (int k = 0; k < tg.count; ++k) {
    CVec v(n);
    for (int j = 0; j < n; ++j) v[j] = bump(tg.at(k), centre, w) * (1.0 + 0.5 * std::cos(2 * M_PI * j / n));
    f[k] = v;
  }
  return f;
}

GridField block_source(const GridField& f) {
  GridField b(f.size());
  for (size_t k = 0; k < f.size(); ++k) {
    CVec w(2 * f[k].size());
    w << f[k], 0.3 * f[k];
    b[k] = w;
  }
  return b;
}

/// Decay exponent fit of norms sampled at |t| on the out (t > 0) or in (t < 0) side against <t>.
double decay_slope(const std::vector<double>& ts, const std::vector<double>& values) {
  std::vector<double> x;
  for (double t : ts) x.push_back(japanese(t));
  return loglog_slope(x, values);
}

// ---------------------------------------------------------------- cache

std::shared_ptr<PropagationTable> make_table(Context& c, const BlockOperatorFamily& gen) {
  if (gen.time_independent || c.cfg.cache_policy == "off") return std::make_shared<PropagationTable>(gen);
  const std::string dir =
      cache_directory(c.cfg.cache_dir.empty() ? (fs::path(c.out_dir) / "cache").string() : c.cfg.cache_dir);
  const std::string key = cache_key(gen.id, c.times.t0, c.times.t_end());
  const std::string path = (fs::path(dir) / cache_file_name(key)).string();
  if (fs::exists(path)) {
    try {
      auto blocks = cache_load(path, key, c.hash);
      auto table = std::make_shared<PropagationTable>(gen.id, c.times, c.times.nearest(0.0), std::move(blocks));
      c.note("cache hit: " + key);
      return table;
    } catch (const CacheError& e) {
      c.note(e.what());
    }
  }
  auto table = std::make_shared<PropagationTable>(gen);
  if (c.cfg.cache_policy == "readwrite") {
    try {
      cache_store(path, key, c.hash, table->forward_blocks());
      c.note("cache store: " + key);
    } catch (const std::exception& e) {
      c.note(std::string("cache store failed: ") + e.what());
    }
  } else {
    c.note("cache miss: " + key);
  }
  return table;
}

// ---------------------------------------------------------------- stages

void stage_geometry(Context& c, StageResult& r) {
  const RunConfig& cfg = c.cfg;
  c.times = TimeGrid::symmetric(cfg.horizon, cfg.dt);
  c.grid = std::make_shared<SpatialGrid>(build_grid(cfg.n_points, cfg.length));
  c.original = make_preset(cfg.scenario, cfg.params, cfg.length);
  MetricScenario s = c.original;

  const Box box{-cfg.horizon, cfg.horizon, 0.0, cfg.length};
  const NontrappingReport nt = nontrapping_check(s.c, s.h, box, 16);
  r.checks.push_back(eq("geometry.nontrapping", "trapped null rays in the (t, x) window", nt.n_trapped, 0));

  const PositivityReport pos = positivity_check(s, c.grid->points);
  Check pc = ge("geometry.positivity", "(pos) minimum of the asymptotic mass term", pos.min_value, 0.0);
  pc.pass = pc.pass && pos.pass;
  r.checks.push_back(pc);

  if (s.shift_is_zero) {
    auto [out, rec] = flow_straighten(s, *c.grid, TimeGrid::symmetric(cfg.horizon, 0.25));
    double d = std::max((rec.y_out - c.grid->points).cwiseAbs().maxCoeff(),
                        (rec.y_in - c.grid->points).cwiseAbs().maxCoeff());
    for (int k = 0; k < rec.y.rows(); ++k)
      for (int j = 0; j < rec.y.cols(); ++j)
        d = std::max({d, std::abs(rec.y(k, j) - c.grid->points(j)), std::abs(rec.y_x(k, j) - 1.0)});
    r.checks.push_back(le("flow.identity", "flow of b = 0 is the identity map", d, cfg.tol("flow.identity")));
  } else {
    auto [out, rec] = flow_straighten(s, *c.grid, c.times);
    r.facts["flow.out_rate"] = fmt(rec.out_rate);
    r.facts["flow.expected_rate"] = fmt(1.0 - s.mu_prime);
    s = out;
  }
  if (!s.lapse_is_one) {
    s = conformal_reduce(s, *c.grid).first;
    r.facts["conformal_reduction"] = "applied (lapse not identically 1)";
  }
  c.reduced = s;
  c.model = std::make_shared<ModelOperatorData>(assemble_model(s, *c.grid, c.times));
  r.facts["hypothesis"] = c.model->hypothesis;
  r.facts["model.symmetrization_defect"] = fmt(c.model->symmetrization_defect);
  r.facts["model.max_dh_dt"] = fmt(c.model->max_dh_dt);
}

void stage_diagonalization(Context& c, StageResult& r) {
  const RunConfig& cfg = c.cfg;
  RiccatiOptions o;
  o.order = cfg.riccati_order;
  o.gap_floor = cfg.gap_floor;
  c.sol = std::make_shared<RiccatiSolution>(riccati_solve(*c.model, o));
  if (c.sol->diverged) throw KgdError("riccati_solve: fixed-point iteration diverged");
  r.checks.push_back(ge("riccati.gap", "achieved gap of Herm(b+ - b-) relative to 2 min eig(eps)", c.sol->achieved_gap,
                        cfg.gap_floor));
  c.pack = build_pack(c.sol, c.model);

  const RiccatiSolution& sol = *c.sol;
  if (c.is_static()) {
    double res = 0.0;
    for (int k = 0; k < sol.residual_plus.size(); ++k)
      res = std::max({res, spectral_norm(sol.residual_plus[k]), spectral_norm(sol.residual_minus[k])});
    r.checks.push_back(le("riccati.residual", "max_t ||i d_t b - b^2 + a + i r b|| for b = b+-", res,
                          cfg.tol("riccati.residual")));
  } else {
    // Decay of the residual and of the coupling H^d - H^ad against the bound <t>^{-(1+delta)}. The bound is
    // an upper bound: the fitted slope must reach (1 - band) times the rate, faster decay is allowed. Whether
    // the rate itself is attained (two-sided band) is reported as a fact.
    const double rate = -(1.0 + c.model->delta), band = cfg.tol("decay.band");
    const std::vector<double> ts = log_samples(c, c.T() / 4, 0.95 * c.T(), 7);
    r.facts["decay.window"] = "[" + fmt(ts.front()) + ", " + fmt(ts.back()) + "]";
    for (int side : {+1, -1}) {
      const std::string dir = side > 0 ? "out" : "in";
      std::vector<double> res, cpl;
      for (double t : ts) {
        const int k = c.node(side * t);
        res.push_back(std::max(spectral_norm(sol.residual_plus[k]), spectral_norm(sol.residual_minus[k])));
        cpl.push_back(spectral_norm(c.pack->V_ad(k)));
      }
      const double sr = decay_slope(ts, res), sc = decay_slope(ts, cpl);
      r.checks.push_back(make_check("riccati.residual_decay." + dir,
                                    "log-log slope of the Riccati residual vs <t> (at least the rate)", sr, "<=",
                                    (1 - band) * rate, rate));
      r.checks.push_back(make_check("coupling.decay." + dir,
                                    "log-log slope of ||H^d - H^ad|| vs <t> (at least the rate)", sc, "<=",
                                    (1 - band) * rate, rate));
      const bool attained = std::abs(sr - rate) <= band * std::abs(rate) && std::abs(sc - rate) <= band * std::abs(rate);
      r.facts["decay.rate_attained." + dir] = attained ? "yes (within the band of the rate)" : "no (faster decay)";
      c.add_series({"riccati_residual_" + dir, "t [time units]", "residual [operator norm]", ts, res, true});
      c.add_series({"coupling_" + dir, "t [time units]", "||H^d - H^ad|| [operator norm]", ts, cpl, true});
    }
  }
  r.checks.push_back(le("transfer.inverse", "max_t ||T T^{-1} - 1||", c.pack->inverse_defect(), cfg.tol("transfer.inverse")));
  r.checks.push_back(le("transfer.symplectic", "max_t ||T^dagger q T - q^ad||", c.pack->symplectic_form_defect(),
                        cfg.tol("transfer.symplectic")));
  r.checks.push_back(le("generator.selfadjoint", "weighted self-adjointness defect of H^d - i r / 2",
                        c.pack->hd_selfadjoint_defect(), cfg.tol("generator.selfadjoint")));
}

void stage_evolution(Context& c, StageResult& r) {
  const RunConfig& cfg = c.cfg;
  c.U = make_table(c, full_generator(c.model));
  c.Uad = make_table(c, ad_generator(c.pack));
  c.Ud = make_table(c, d_generator(c.pack));
  const int n = c.n();
  const double a = std::min(20.0, c.T());
  double sym = 0.0, sym_ad = 0.0, sym_d = 0.0;
  for (auto [t, s] : {std::pair{a, 0.0}, std::pair{-a / 2, a / 2}, std::pair{a / 4, -3 * a / 4}}) {
    const int kt = c.node(t), ks = c.node(s);
    const RVec &dt_ = c.model->dens(kt), &ds = c.model->dens(ks);
    sym = std::max(sym, symplectic_defect(c.U->U(kt, ks), q_form(n), dt_, ds));
    sym_ad = std::max(sym_ad, symplectic_defect(c.Uad->U(kt, ks), q_ad_form(n), dt_, ds));
    sym_d = std::max(sym_d, symplectic_defect(c.Ud->U(kt, ks), q_ad_form(n), dt_, ds));
  }
  const double tol = cfg.tol("evolution.symplectic");
  r.checks.push_back(le("evolution.symplectic", "max ||U^dagger q U - q|| over |t - s| <= 20", sym, tol));
  r.checks.push_back(le("evolution.symplectic_ad", "max ||U^ad^dagger q^ad U^ad - q^ad|| over |t - s| <= 20", sym_ad, tol));
  r.checks.push_back(le("evolution.symplectic_d", "max ||U^d^dagger q^ad U^d - q^ad|| over |t - s| <= 20", sym_d, tol));

  double cross = 0.0;
  const double T = c.T();
  for (auto [t, s] : {std::pair{T / 2, -T / 2}, std::pair{T / 8, 0.0}, std::pair{-T / 5, T / 3}}) {
    const int kt = c.node(t), ks = c.node(s);
    cross = std::max(cross, spectral_norm(c.U->U(kt, ks) - c.pack->T(kt) * c.Uad->U(kt, ks) * c.pack->T_inv(ks)));
  }
  r.checks.push_back(le("evolution.cross_validation", "max ||U(t, s) - T(t) U^ad(t, s) T(s)^{-1}||", cross,
                        cfg.tol("evolution.cross_validation")));

  if (c.is_std()) {
    const double horizon = std::min(20.0, T);
    for (double m : {0.0, 1.0}) {
      const WeightScanReport w = weight_propagation_scan(*c.Uad, *c.grid, m, 1.0, horizon, 20);
      const std::string tag = "m=" + fmt(m) + ",k=1";
      r.checks.push_back(le("evolution.weight_propagation." + tag,
                            "sup_t ||<D>^m <x>^k U^ad(0, t) (<x> + <t>)^{-k} <D>^{-m}|| / value at t = 0", w.ratio,
                            cfg.tol("weight.factor")));
      c.add_series({"weight_scan_" + tag, "t [time units]", "weighted norm [dimensionless]", w.times, w.values, false});
    }
  }
}

/// Covariance-pair invariants with a name prefix.
void covariance_checks(const RunConfig& cfg, StageResult& r, const std::string& prefix, const CovariancePair& p) {
  const CovarianceReport rep = p.report();
  r.checks.push_back(le(prefix + ".complement", "||c+ + c- - 1||", rep.complement_defect, cfg.tol("covariance.complement")));
  r.checks.push_back(le(prefix + ".idempotency", "max ||c c - c||", rep.idempotency_defect, cfg.tol("covariance.idempotency")));
  r.checks.push_back(ge(prefix + ".positivity", "min eigenvalue of lambda+ and lambda-",
                        std::min(rep.min_eig_lambda_plus, rep.min_eig_lambda_minus), -cfg.tol("covariance.positivity")));
}

/// Two-point identities for a pair: causal identity, form positivity, P residual.
void two_point_checks(Context& c, StageResult& r, const std::string& prefix, const CovariancePair& p) {
  const RunConfig& cfg = c.cfg;
  const std::vector<double> ts = samples(c, -c.T() / 2, c.T() / 2, 9);
  const TwoPointKernel kp = two_point_kernel(p, *c.U, ts, ts, +1), km = two_point_kernel(p, *c.U, ts, ts, -1);
  r.checks.push_back(le(prefix + ".causal", "max ||Lambda+ - Lambda- - i G||", causal_identity_defect(kp, km, *c.U),
                        cfg.tol("two_point.causal")));
  const FormSpectrum fp = two_point_form_spectrum(kp, *c.model), fm = two_point_form_spectrum(km, *c.model);
  r.checks.push_back(ge(prefix + ".positivity", "min eigenvalue of the sampled forms of Lambda+ and Lambda-",
                        std::min(fp.min_eig, fm.min_eig), -cfg.tol("two_point.positivity")));
  double res = 0.0;
  for (int sign : {+1, -1})
    res = std::max(res, two_point_residual(p, *c.U, *c.model, {0.0, c.snap(c.T() / 4)}, sign, 40).max_residual);
  r.checks.push_back(le(prefix + ".residual", "max ||P Lambda+-(., s)|| at interior nodes", res, cfg.tol("two_point.residual")));
}

void hadamard_checks(Context& c, StageResult& r, const std::string& prefix, const CovariancePair& p) {
  const double step = c.cfg.proxy_step();
  std::vector<double> ts;
  for (int i = 0; i < kProxySamples; ++i) ts.push_back(c.snap((i - kProxySamples / 2) * step));
  const HadamardReport h = hadamard_frequency_proxy(two_point_kernel(p, *c.U, ts, {0.0}, +1), *c.grid);
  int resolved = 0;
  for (bool b : h.resolved) resolved += b;
  r.checks.push_back(ge(prefix + ".fraction", "min positive-frequency energy fraction over resolved modes of Lambda+",
                        h.min_resolved_fraction, c.cfg.tol("hadamard.fraction")));
  r.facts[prefix + ".resolved_modes"] = std::to_string(resolved) + " of " + std::to_string(h.resolved.size());
  r.facts[prefix + ".aggregate_fraction"] = fmt(h.aggregate_fraction);
}

void stage_states(Context& c, StageResult& r) {
  const RunConfig& cfg = c.cfg;
  c.ref = reference_covariances(*c.pack, 0.0);
  covariance_checks(cfg, r, "covariance.ref", *c.ref);
  for (double t0 : {-c.T() / 2, c.T() / 2})
    covariance_checks(cfg, r, "covariance.ref(t=" + fmt(c.snap(t0)) + ")", reference_covariances(*c.pack, t0));
  two_point_checks(c, r, "two_point.ref", *c.ref);

  if (c.is_static()) {
    double d = 0.0;
    for (Direction dir : {Direction::out, Direction::in}) {
      const CovariancePair vac = vacuum_covariances(*c.model, dir);
      d = std::max({d, spectral_norm(c.ref->c_plus - vac.c_plus), spectral_norm(c.ref->c_minus - vac.c_minus)});
    }
    r.checks.push_back(le("covariance.vacuum", "||c+-_ref - spectral vacuum projections||", d, cfg.tol("covariance.vacuum")));
    return;
  }

  hadamard_checks(c, r, "hadamard.ref", *c.ref);
  for (Direction dir : {Direction::out, Direction::in}) {
    const std::string d = to_string(dir);
    const CovariancePair vac = vacuum_covariances(*c.model, dir);
    const ScatteringCovariances sc =
        scattering_covariances(dir, *c.model, *c.U, vac, cfg.schedule(), 1e-2, c.pack.get());
    r.checks.push_back(within("covariance.limit_decay." + d,
                              "decay exponent of ||c(t_{j+1}) - c(t_j)|| (integrated rate delta)", sc.fitted_exponent,
                              c.model->delta, cfg.tol("decay.band")));
    r.facts["covariance.estimator_gap." + d] = fmt(sc.estimator_gap);
    c.add_series({"covariance_differences_" + d, "t [time units]", "difference [operator norm]", sc.horizons,
                  sc.differences, true});
    covariance_checks(cfg, r, "covariance." + d, sc.frame_limit);
    if (dir == Direction::out) {
      two_point_checks(c, r, "two_point.out", sc.frame_limit);
      hadamard_checks(c, r, "hadamard.out", sc.frame_limit);
    }
  }
}

void spectrum_series(Context& c, const std::string& name, const SingularSpectrum& s) {
  std::vector<double> idx, sv;
  for (int i = 0; i < s.sigma.size(); ++i) {
    idx.push_back(i);
    sv.push_back(s.sigma[i]);
  }
  c.add_series({name, "index [1]", "singular value [operator norm]", idx, sv, true});
}

void compactness_checks(Context& c, StageResult& r, const std::string& prefix, const SingularSpectrum& s) {
  r.checks.push_back(ge(prefix + ".orders", "log10(sigma_max / sigma_min)", s.decay_orders, c.cfg.tol("compactness.orders")));
  r.checks.push_back(le(prefix + ".rank", "effective rank (sigma > 1e-6 * scale)", s.effective_rank,
                        std::floor(c.cfg.tol("compactness.rank_fraction") * c.n())));
}

void stage_scattering(Context& c, StageResult& r) {
  const RunConfig& cfg = c.cfg;
  const std::vector<double> schedule = cfg.schedule();
  const int n2 = 2 * c.n();
  double inv = 0.0, ident = 0.0;
  std::map<Direction, MollerOperator> ad;
  for (Direction dir : {Direction::out, Direction::in}) {
    const std::string d = to_string(dir);
    MollerOperator wa = moller_ad(dir, c.pack, *c.Uad, schedule);
    MollerOperator wf = moller_full(dir, c.model, *c.U, schedule);
    for (const MollerOperator* w : {&wa, &wf}) {
      inv = std::max({inv, w->inverse_defect(), w->adjoint_defect()});
      ident = std::max(ident, spectral_norm(w->w - Mat::Identity(n2, n2)));
      if (!c.is_static()) {
        r.checks.push_back(within("moller.decay." + w->level + "." + d, "decay exponent of the Cook integrand",
                                  w->cook_exponent, c.model->delta, cfg.tol("decay.band")));
        c.add_series({"moller_cook_" + w->level + "_" + d, "t [time units]", "Cook integrand [operator norm]",
                      w->cook_times, w->cook_integrand, true});
      }
    }
    if (!c.is_static()) {
      const ChainReport ch = chain_identity(wf, wa, *c.pack, *c.U, *c.Uad);
      r.checks.push_back(le("moller.chain." + d, "||U(0,t)U_as(t,0) - T(0)U^ad(0,t)T(t)^{-1}U_as(t,0)||",
                            ch.finite_horizon_defect, cfg.tol("moller.chain")));
    }
    r.facts["moller.horizon." + d] = fmt(wa.horizon_used);
    ad.emplace(dir, std::move(wa));
  }
  r.checks.push_back(le("moller.inverse", "max of ||W W^{-1} - 1|| and ||W^{-1} - W^dagger_q||", inv, cfg.tol("moller.inverse")));
  if (c.is_static()) r.checks.push_back(le("moller.identity", "max ||W - 1|| (static)", ident, cfg.tol("moller.identity")));
  else r.facts["moller.distance_to_identity"] = fmt(ident);

  const FredholmReport f = fredholm_scan(ad.at(Direction::out), ad.at(Direction::in));
  r.checks.push_back(eq("fredholm.kernel", "dimension of the numerical kernel", f.kernel_dim, 0));
  r.checks.push_back(eq("fredholm.cokernel", "dimension of the numerical cokernel", f.cokernel_dim, 0));
  r.facts["fredholm.index"] = "(" + std::to_string(f.kernel_dim) + "," + std::to_string(f.cokernel_dim) + ")";
  r.facts["fredholm.spectral_gap"] = fmt(f.spectral_gap);

  if (c.is_std()) {
    for (Direction dir : {Direction::out, Direction::in}) {
      const CompactnessReport cr = commutator_compactness(ad.at(dir), *c.grid);
      compactness_checks(c, r, "compactness.commutator." + to_string(dir), cr.commutator);
      spectrum_series(c, "commutator_singular_values_" + to_string(dir), cr.commutator);
    }
    compactness_checks(c, r, "compactness.wf_defect", f.k2);
    spectrum_series(c, "wf_defect_singular_values", f.k2);
  }
}

void stage_propagators(Context& c, StageResult& r) {
  const RunConfig& cfg = c.cfg;
  const int n = c.n();
  const GridField f = scalar_source(c.times, n, c.snap(c.T() / 8));
  const GridField fb = block_source(f);

  double inv = 0.0, inv_b = 0.0;
  const BlockOperatorFamily had = ad_generator(c.pack);
  for (int sign : {+1, -1}) {
    inv = std::max(inv, scalar_residual(*c.model, retarded_advanced(KernelLevel::scalar, *c.U, f, sign), f).max_residual);
    inv_b = std::max(inv_b, block_residual(had, retarded_advanced(KernelLevel::block, *c.Uad, fb, sign), fb).max_residual);
  }
  r.checks.push_back(le("propagator.inverse", "max ||P G+- f - f|| at interior nodes", inv, cfg.tol("propagator.inverse")));
  r.checks.push_back(le("propagator.block_inverse", "max ||P^ad G^ad+- f - f|| at interior nodes", inv_b,
                        cfg.tol("propagator.block_inverse")));

  const std::vector<double> ts = samples(c, -c.T() / 2.5, c.T() / 2.5, 9);
  const KernelOperator gp = sample_propagator(KernelKind::retarded, KernelLevel::scalar, *c.U, ts, ts);
  const KernelOperator gm = sample_propagator(KernelKind::advanced, KernelLevel::scalar, *c.U, ts, ts);
  double support = 0.0;
  for (size_t a = 0; a < ts.size(); ++a)
    for (size_t b = 0; b < ts.size(); ++b) {
      if (ts[a] < ts[b] - c.times.dt) support = std::max(support, spectral_norm(gp.at(a, b)));
      if (ts[a] > ts[b] + c.times.dt) support = std::max(support, spectral_norm(gm.at(a, b)));
    }
  r.checks.push_back(le("propagator.support", "max ||G+(t, s)|| for t < s and ||G-(t, s)|| for t > s", support,
                        cfg.tol("propagator.support")));
  r.checks.push_back(le("propagator.adjoint", "relative defect of G+^* = G-", adjoint_relation_defect(gp, gm, *c.model),
                        cfg.tol("propagator.adjoint")));

  // Feynman kernel from the auxiliary diagonal evolution.
  const KernelOperator block = feynman_block(*c.Ud, ts, ts);
  r.checks.push_back(le("feynman.jump", "max_t ||G^ad_F(t+, t) - G^ad_F(t-, t) - i||", feynman_jump_defect(*c.Ud, ts),
                        cfg.tol("feynman.jump")));
  const BoundaryReport bd = feynman_boundary_conditions(*c.pack, *c.Ud, fb);
  r.checks.push_back(le("feynman.boundary.out", "||pi- rho_out G^ad_F f|| / max ||G^ad_F f||", bd.out_defect,
                        cfg.tol("feynman.boundary")));
  r.checks.push_back(le("feynman.boundary.in", "||pi+ rho_in G^ad_F f|| / max ||G^ad_F f||", bd.in_defect,
                        cfg.tol("feynman.boundary")));
  const KernelOperator gf = feynman_scalar(block, *c.pack);
  const FeynmanPositivity pos = feynman_positivity(gf, *c.model);
  r.checks.push_back(ge("feynman.positivity", "min eigenvalue of the sampled form i (G_F - G_F^*)", pos.min_eig_i,
                        -cfg.tol("feynman.positivity")));
  r.facts["feynman.positivity_orientation"] = "i (G_F - G_F^*) >= 0 with P G_F = 1";

  const double band = 0.5 * c.grid->k_max();
  r.facts["feynman.resolved_band"] = "|k| <= " + fmt(band) + " (half the grid Nyquist wavenumber)";
  const FeynmanStateReport st = feynman_vs_state(gf, *c.ref, *c.U, *c.model, f, band);
  r.facts["feynman.state_convention"] = st.candidates[st.selected].label;
  r.facts["feynman.state_distance"] = fmt(st.candidates[st.selected].distance);

  if (c.is_static()) {
    // Exact mode Feynman function e^{i w |t - s|} / (2 i w), w^2 the Fourier symbol of a.
    const Mat a_hat = to_fourier(*c.grid, c.model->a_out);
    double err = 0.0;
    for (size_t i = 0; i < ts.size(); ++i)
      for (size_t j = 0; j < ts.size(); ++j) {
        if (i == j) continue;
        const Mat hat = to_fourier(*c.grid, gf.at(i, j));
        Mat exact = Mat::Zero(n, n);
        for (int m = 0; m < n; ++m) {
          const double w = std::sqrt(a_hat(m, m).real());
          exact(m, m) = std::exp(kI * w * std::abs(ts[i] - ts[j])) / (2.0 * kI * w);
        }
        err = std::max(err, (hat - exact).cwiseAbs().maxCoeff());
      }
    r.checks.push_back(le("feynman.mode_function", "max |G_F - e^{i w |t-s|} / (2 i w)| over modes and samples", err,
                          cfg.tol("feynman.mode_function")));
    r.checks.push_back(le("feynman.state_difference", "max ||G_F - G_F,ref|| (static: both exact)", st.max_difference,
                          cfg.tol("feynman.state_difference")));
  } else {
    const FeynmanResidual res = feynman_scalar_residual(*c.pack, *c.Ud, {c.snap(-c.T() / 4), 0.0, c.snap(c.T() / 4)}, band);
    r.checks.push_back(le("feynman.fourier_tail", "Fourier tail of P G_F - 1 beyond the resolved band",
                          res.max_fourier_tail, cfg.tol("feynman.fourier_tail")));
    r.checks.push_back(le("feynman.residual_gauge", "normalized gauge ratio of P G_F - 1 between orders 0 and 2",
                          res.gauge.decay_ratio(0, 2), cfg.tol("feynman.gauge_decay")));
    r.checks.push_back(le("feynman.state_difference_gauge", "normalized gauge ratio of G_F - G_F,ref between orders 0 and 2",
                          st.gauge.decay_ratio(0, 2), cfg.tol("feynman.gauge_decay")));
    r.facts["feynman.state_difference_tail"] = fmt(st.fourier_tail);
    std::vector<double> ms, vs;
    for (double m : st.gauge.orders) {
      ms.push_back(m);
      vs.push_back(st.gauge.normalized(m));
    }
    c.add_series({"feynman_state_difference_gauge", "m [Sobolev order]", "normalized gauge [dimensionless]", ms, vs, true});
  }

  if (c.opts.write_outputs) {
    const std::vector<double> tk = samples(c, -c.T() / 5, c.T() / 5, 3);
    const KernelOperator gk = feynman_scalar(feynman_block(*c.Ud, tk, tk), *c.pack);
    write_kernel_csv((fs::path(c.out_dir) / "kernel_feynman.csv").string(), *c.grid, tk, tk, gk.blocks);
    const TwoPointKernel lk = two_point_kernel(*c.ref, *c.U, tk, tk, +1);
    write_kernel_csv((fs::path(c.out_dir) / "kernel_lambda_plus_ref.csv").string(), *c.grid, tk, tk, lk.blocks);
    c.bundle.files.push_back("kernel_feynman.csv");
    c.bundle.files.push_back("kernel_lambda_plus_ref.csv");
  }
}

// ---------------------------------------------------------------- outputs

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string o = "\"";
  for (char ch : s) o += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return o + "\"";
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  if (!f) throw KgdError("cannot write '" + p.string() + "'");
  f << text;
}

void write_outputs(DiagnosticsBundle& b, const std::string& dir) {
  std::ostringstream checks;
  checks << std::setprecision(17);
  checks << "stage,invariant,value [units of the invariant],relation,tolerance [units of the invariant],target,pass\n";
  for (const StageResult& s : b.stages)
    for (const Check& c : s.checks)
      checks << s.name << ',' << csv_escape(c.invariant) << ',' << c.value << ',' << c.relation << ',' << c.tolerance << ','
             << c.target << ',' << (c.pass ? 1 : 0) << '\n';
  write_text(fs::path(dir) / "checks.csv", checks.str());
  b.files.push_back("checks.csv");

  std::ostringstream gp;
  gp << "# gnuplot script: gnuplot plots.gp (writes one PNG per series)\n"
     << "set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 800,500\n";
  for (const Series& s : b.series) {
    std::ostringstream csv;
    csv << std::setprecision(17) << csv_escape(s.x_label) << ',' << csv_escape(s.y_label) << '\n';
    for (size_t i = 0; i < s.x.size(); ++i) csv << s.x[i] << ',' << s.y[i] << '\n';
    write_text(fs::path(dir) / (s.name + ".csv"), csv.str());
    b.files.push_back(s.name + ".csv");
    gp << "\nset output '" << s.name << ".png'\nset title '" << s.name << "'\nset xlabel '" << s.x_label
       << "'\nset ylabel '" << s.y_label << "'\n"
       << (s.log_scale ? "set logscale y\n" : "unset logscale y\n")
       << (s.log_scale && s.x_label.rfind("t ", 0) == 0 ? "set logscale x\n" : "unset logscale x\n")
       << "plot '" << s.name << ".csv' using 1:2 with linespoints\n";
  }
  write_text(fs::path(dir) / "plots.gp", gp.str());
  b.files.push_back("plots.gp");
  b.files.push_back("bundle.json");
  write_text(fs::path(dir) / "bundle.json", bundle_to_json(b));
}

}  // namespace

void write_kernel_csv(const std::string& path, const SpatialGrid& grid, const std::vector<double>& t_list,
                      const std::vector<double>& s_list, const std::vector<Mat>& blocks) {
  std::ofstream f(path);
  if (!f) throw KgdError("cannot write '" + path + "'");
  f << std::setprecision(17);
  f << "t [time units],s [time units],i [grid index],j [grid index],x_i [length units],x_j [length units],re,im\n";
  for (size_t a = 0; a < t_list.size(); ++a)
    for (size_t b = 0; b < s_list.size(); ++b) {
      const Mat& K = blocks[a * s_list.size() + b];
      for (int i = 0; i < K.rows(); ++i)
        for (int j = 0; j < K.cols(); ++j)
          f << t_list[a] << ',' << s_list[b] << ',' << i << ',' << j << ',' << grid.points(i) << ',' << grid.points(j)
            << ',' << K(i, j).real() << ',' << K(i, j).imag() << '\n';
    }
}

DiagnosticsBundle run_pipeline(const RunConfig& cfg, const PipelineOptions& opts) {
  const std::vector<std::string> problems = validate_config(cfg);
  if (!problems.empty()) throw ConfigError(problems);
  DiagnosticsBundle bundle;
  bundle.artifact_version = artifact_version();
  bundle.scenario = cfg.scenario;
  bundle.config_toml = cfg.to_toml();
  bundle.config_hash = hash_hex(cfg.hash());
  Context ctx{cfg, opts, bundle, cfg.output_dir, cfg.hash()};
  if (opts.write_outputs) fs::create_directories(cfg.output_dir);

  using Stage = void (*)(Context&, StageResult&);
  const std::vector<std::pair<std::string, Stage>> stages = {
      {"geometry", stage_geometry},       {"diagonalization", stage_diagonalization},
      {"evolution", stage_evolution},     {"states", stage_states},
      {"scattering", stage_scattering},   {"propagators", stage_propagators},
  };
  const auto start = std::chrono::steady_clock::now();
  std::string failed;
  for (const auto& [name, fn] : stages) {
    StageResult r;
    r.name = name;
    if (!failed.empty()) {
      r.skipped = true;
      r.error = "skipped: stage '" + failed + "' failed";
      bundle.stages.push_back(r);
      continue;
    }
    ctx.log("[" + name + "] running");
    const auto t0 = std::chrono::steady_clock::now();
    try {
      fn(ctx, r);
    } catch (const std::exception& e) {
      r.error = e.what();
      failed = name;
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    int passed = 0;
    for (const Check& ch : r.checks) passed += ch.pass;
    ctx.log("[" + name + "] " + (r.pass() ? "pass" : "FAIL") + " (" + std::to_string(passed) + "/" +
            std::to_string(r.checks.size()) + " checks, " + fmt(r.seconds) + " s)" +
            (r.error.empty() ? "" : ": " + r.error));
    bundle.stages.push_back(std::move(r));
  }
  bundle.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (opts.write_outputs) write_outputs(bundle, cfg.output_dir);
  return bundle;
}

// ---------------------------------------------------------------- JSON

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double number(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

}  // namespace

std::string bundle_to_json(const DiagnosticsBundle& b, bool include_run_info) {
  json j;
  j["schema_version"] = b.schema_version;
  j["artifact_version"] = b.artifact_version;
  j["scenario"] = b.scenario;
  j["config_hash"] = b.config_hash;
  j["config"] = b.config_toml;
  j["verdict"] = b.pass() ? "pass" : "fail";
  j["stages"] = json::array();
  for (const StageResult& s : b.stages) {
    json js;
    js["name"] = s.name;
    js["verdict"] = s.pass() ? "pass" : (s.skipped ? "skipped" : "fail");
    js["error"] = s.error;
    js["facts"] = s.facts;
    js["checks"] = json::array();
    for (const Check& c : s.checks)
      js["checks"].push_back({{"invariant", c.invariant},
                              {"description", c.description},
                              {"value", number(c.value)},
                              {"relation", c.relation},
                              {"tolerance", c.tolerance},
                              {"target", c.target},
                              {"pass", c.pass}});
    j["stages"].push_back(js);
  }
  j["series"] = json::array();
  for (const Series& s : b.series) {
    json xs = json::array(), ys = json::array();
    for (double v : s.x) xs.push_back(number(v));
    for (double v : s.y) ys.push_back(number(v));
    j["series"].push_back(
        {{"name", s.name}, {"x_label", s.x_label}, {"y_label", s.y_label}, {"x", xs}, {"y", ys}, {"log_scale", s.log_scale}});
  }
  j["files"] = b.files;
  if (include_run_info) {
    json timings;
    for (const StageResult& s : b.stages) timings[s.name] = s.seconds;
    j["run_info"] = {{"timings_seconds", timings}, {"total_seconds", b.total_seconds}, {"cache", b.run_log}};
  }
  return j.dump(2);
}

DiagnosticsBundle bundle_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw KgdError(std::string("bundle: invalid JSON: ") + e.what());
  }
  DiagnosticsBundle b;
  try {
    b.schema_version = j.at("schema_version").get<int>();
    if (b.schema_version != DiagnosticsBundle::kSchemaVersion)
      throw KgdError("bundle: schema version " + std::to_string(b.schema_version) + " is not supported (expected " +
                     std::to_string(DiagnosticsBundle::kSchemaVersion) + ")");
    b.artifact_version = j.at("artifact_version").get<std::string>();
    b.scenario = j.at("scenario").get<std::string>();
    b.config_hash = j.at("config_hash").get<std::string>();
    b.config_toml = j.at("config").get<std::string>();
    for (const json& js : j.at("stages")) {
      StageResult s;
      s.name = js.at("name").get<std::string>();
      s.error = js.at("error").get<std::string>();
      s.skipped = js.at("verdict").get<std::string>() == "skipped";
      s.facts = js.at("facts").get<std::map<std::string, std::string>>();
      for (const json& jc : js.at("checks"))
        s.checks.push_back(Check{jc.at("invariant").get<std::string>(), jc.at("description").get<std::string>(),
                                 number(jc.at("value")), jc.at("relation").get<std::string>(),
                                 jc.at("tolerance").get<double>(), jc.at("target").get<double>(),
                                 jc.at("pass").get<bool>()});
      if (j.contains("run_info")) s.seconds = j["run_info"]["timings_seconds"].value(s.name, 0.0);
      b.stages.push_back(std::move(s));
    }
    for (const json& jsr : j.at("series")) {
      Series s;
      s.name = jsr.at("name").get<std::string>();
      s.x_label = jsr.at("x_label").get<std::string>();
      s.y_label = jsr.at("y_label").get<std::string>();
      for (const json& v : jsr.at("x")) s.x.push_back(number(v));
      for (const json& v : jsr.at("y")) s.y.push_back(number(v));
      s.log_scale = jsr.at("log_scale").get<bool>();
      b.series.push_back(std::move(s));
    }
    b.files = j.at("files").get<std::vector<std::string>>();
    if (j.contains("run_info")) {
      b.total_seconds = j["run_info"].value("total_seconds", 0.0);
      b.run_log = j["run_info"].value("cache", std::vector<std::string>{});
    }
  } catch (const json::exception& e) {
    throw KgdError(std::string("bundle: missing or malformed field: ") + e.what());
  }
  return b;
}

DiagnosticsBundle load_bundle(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw KgdError("cannot open bundle '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return bundle_from_json(ss.str());
}

std::string bundle_summary(const DiagnosticsBundle& b) {
  std::ostringstream os;
  os << "scenario " << b.scenario << "  config " << b.config_hash << "  kgd " << b.artifact_version << "\n";
  for (const StageResult& s : b.stages) {
    os << "\n[" << s.name << "] " << (s.pass() ? "pass" : (s.skipped ? "skipped" : "FAIL"));
    if (s.seconds > 0) os << "  (" << fmt(s.seconds) << " s)";
    os << "\n";
    if (!s.error.empty()) os << "  error: " << s.error << "\n";
    for (const Check& c : s.checks) {
      os << "  " << (c.pass ? "ok  " : "FAIL") << " " << std::left << std::setw(44) << c.invariant << std::right << " "
         << std::setw(12) << fmt(c.value) << " " << c.relation << " ";
      if (c.relation == "within") os << fmt(c.tolerance * 100) << "% of " << fmt(c.target);
      else os << fmt(c.tolerance);
      os << "\n";
    }
    for (const auto& [k, v] : s.facts) os << "       " << k << ": " << v << "\n";
  }
  os << "\nverdict: " << (b.pass() ? "pass" : "FAIL") << "\n";
  return os.str();
}

}  // namespace kgd
