#include "kgd/geometry.hpp"

#include <boost/numeric/odeint.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

namespace kgd {

namespace {

double param(const std::map<std::string, double>& p, const std::string& key) {
  auto it = p.find(key);
  if (it == p.end()) throw KgdError("missing preset parameter '" + key + "'");
  return it->second;
}

double sech2(double u) {
  double c = std::cosh(u);
  return 1.0 / (c * c);
}

// Centred coordinate wrapped to [-L/2, L/2) so profiles are periodic.
double centred(double x, double L) {
  double u = std::fmod(x - 0.5 * L, L);
  if (u < -0.5 * L) u += L;
  if (u >= 0.5 * L) u -= L;
  return u;
}

// Time envelope <t/tau>^{-delta} and its derivative.
double envelope(double t, double tau, double delta) { return std::pow(japanese(t / tau), -delta); }
double envelope_dt(double t, double tau, double delta) {
  double u = t / tau;
  return -delta * u / tau * std::pow(1.0 + u * u, -0.5 * delta - 1.0);
}

// Smooth step (t/tau)/<t/tau> in (-1, 1) and its derivative.
double step_profile(double t, double tau) { return (t / tau) / japanese(t / tau); }
double step_profile_dt(double t, double tau) { return std::pow(japanese(t / tau), -3.0) / tau; }

double central_dx(const Field& f, double t, double x, double h = 1e-3) {
  return (-f(t, x + 2 * h) + 8 * f(t, x + h) - 8 * f(t, x - h) + f(t, x - 2 * h)) / (12 * h);
}
double central_dt(const Field& f, double t, double x, double h = 1e-3) {
  return (-f(t + 2 * h, x) + 8 * f(t + h, x) - 8 * f(t - h, x) + f(t - 2 * h, x)) / (12 * h);
}

const std::map<std::string, std::map<std::string, double>>& defaults_table() {
  static const std::map<std::string, std::map<std::string, double>> table = {
      {"static", {{"m", 1.0}}},
      {"sech", {{"m", 1.0}, {"A", 0.2}, {"tau", 6.0}, {"delta", 2.0}, {"sigma", 0.1}}},
      {"std", {{"m", 1.0}, {"A", 0.3}, {"eta", 0.2}, {"tau", 6.0}, {"delta", 2.0}, {"width", 2.0}}},
      {"uniform", {{"m", 1.0}, {"A", 0.3}, {"tau", 6.0}, {"delta", 2.0}}},
      {"flrw", {{"m", 1.0}, {"sigma", 0.3}, {"tau", 4.0}}},
      {"shift", {{"m", 1.0}, {"beta", 0.5}, {"V1", 0.3}}},
      {"conformal", {{"m", 1.0}, {"kappa", 0.3}, {"width", 2.0}}},
      {"lapse_well", {{"m", 1.0}, {"depth", 0.9}}},
  };
  return table;
}

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& [k, v] : defaults_table()) out.push_back(k);
  return out;
}

std::map<std::string, double> preset_defaults(const std::string& name) {
  auto it = defaults_table().find(name);
  if (it == defaults_table().end()) {
    std::ostringstream os;
    os << "unknown scenario '" << name << "'; available presets:";
    for (const auto& n : preset_names()) os << ' ' << n;
    throw KgdError(os.str());
  }
  return it->second;
}

MetricScenario make_preset(const std::string& name, const std::map<std::string, double>& overrides,
                           double L) {
  std::map<std::string, double> p = preset_defaults(name);
  for (const auto& [k, v] : overrides) {
    if (!p.count(k)) throw KgdError("preset '" + name + "' has no parameter '" + k + "'");
    p[k] = v;
  }
  MetricScenario s;
  s.name = name;
  s.params = p;
  const double m = param(p, "m");
  const double m2 = m * m;
  s.mass_floor = m2;
  auto one = [](double, double) { return 1.0; };
  auto zero = [](double, double) { return 0.0; };
  auto one_x = [](double) { return 1.0; };
  s.h = one;
  s.c = one;
  s.b = zero;
  s.dh_dt = zero;
  s.h_out = s.h_in = s.c_out = s.c_in = one_x;
  s.V_out = s.V_in = [m2](double) { return m2; };
  s.V = [m2](double, double) { return m2; };

  if (name == "static") {
    s.time_independent = true;
    s.hypothesis = "static";
  } else if (name == "sech") {
    const double A = param(p, "A"), tau = param(p, "tau"), delta = param(p, "delta"),
                 sigma = param(p, "sigma");
    s.delta = delta;
    s.h = [=](double t, double) { return std::exp(2 * sigma * step_profile(t, tau)); };
    s.dh_dt = [=](double t, double) {
      return 2 * sigma * step_profile_dt(t, tau) * std::exp(2 * sigma * step_profile(t, tau));
    };
    s.h_out = [=](double) { return std::exp(2 * sigma); };
    s.h_in = [=](double) { return std::exp(-2 * sigma); };
    s.V = [=](double t, double x) {
      return m2 + A * envelope(t, tau, delta) * std::cos(2 * M_PI * x / L);
    };
    s.hypothesis = "td";
  } else if (name == "std") {
    const double A = param(p, "A"), eta = param(p, "eta"), tau = param(p, "tau"),
                 delta = param(p, "delta"), w = param(p, "width");
    s.delta = delta;
    s.h = [=](double t, double x) { return 1.0 + eta * envelope(t, tau, delta) * sech2(centred(x, L) / w); };
    s.dh_dt = [=](double t, double x) { return eta * envelope_dt(t, tau, delta) * sech2(centred(x, L) / w); };
    s.V = [=](double t, double x) { return m2 + A * envelope(t, tau, delta) * sech2(centred(x, L) / w); };
    s.hypothesis = "std";
  } else if (name == "uniform") {
    const double A = param(p, "A"), tau = param(p, "tau"), delta = param(p, "delta");
    s.delta = delta;
    s.V = [=](double t, double) { return m2 + A * envelope(t, tau, delta); };
    s.hypothesis = "td";
  } else if (name == "flrw") {
    const double sigma = param(p, "sigma"), tau = param(p, "tau");
    s.delta = 2.0;
    s.h = [=](double t, double) { return std::exp(2 * sigma * step_profile(t, tau)); };
    s.dh_dt = [=](double t, double) {
      return 2 * sigma * step_profile_dt(t, tau) * std::exp(2 * sigma * step_profile(t, tau));
    };
    s.h_out = [=](double) { return std::exp(2 * sigma); };
    s.h_in = [=](double) { return std::exp(-2 * sigma); };
    s.hypothesis = "td";
  } else if (name == "shift") {
    const double beta = param(p, "beta"), V1 = param(p, "V1");
    s.mu_prime = 3.0;
    s.b = [=](double t, double) { return beta * sech2(t); };
    s.shift_is_zero = false;
    s.V = [=](double, double x) { return m2 + V1 * (1.0 + std::cos(2 * M_PI * x / L)); };
    s.V_out = s.V_in = [=](double x) { return m2 + V1 * (1.0 + std::cos(2 * M_PI * x / L)); };
    s.hypothesis = "td";
  } else if (name == "conformal") {
    const double kappa = param(p, "kappa"), w = param(p, "width");
    auto cfun = [=](double x) { return 1.0 + kappa * sech2(centred(x, L) / w); };
    s.c = [=](double, double x) { return cfun(x); };
    s.c_out = s.c_in = cfun;
    s.V = [=](double, double x) { return m2 / (cfun(x) * cfun(x)); };
    s.V_out = s.V_in = [=](double x) { return m2 / (cfun(x) * cfun(x)); };
    s.lapse_is_one = false;
    s.time_independent = true;
    s.hypothesis = "static";
  } else if (name == "lapse_well") {
    const double depth = param(p, "depth");
    auto cfun = [=](double x) { return 1.0 - depth * sech2(x); };
    s.c = [=](double, double x) { return cfun(x); };
    s.c_out = s.c_in = cfun;
    s.lapse_is_one = false;
    s.time_independent = true;
    s.hypothesis = "static";
  }
  return s;
}

Mat spatial_operator(const SpatialGrid& grid, const RVec& h, const RVec& V) {
  CVec hm = h.cwiseSqrt().cwiseInverse().cast<cplx>();
  Mat a = -(hm.asDiagonal() * grid.dx) * (hm.asDiagonal() * grid.dx);
  a.diagonal() += V.cast<cplx>();
  return a;
}

ModelOperatorData assemble_model(const MetricScenario& s, const SpatialGrid& grid, const TimeGrid& times) {
  if (!s.lapse_is_one || !s.shift_is_zero)
    throw KgdError("assemble_model: scenario '" + s.name +
                   "' is not in model form (c = 1, b = 0); apply conformal_reduce / flow_straighten first");
  ModelOperatorData md;
  md.grid = std::make_shared<SpatialGrid>(grid);
  md.times = times;
  md.a.times = times;
  md.a.declared_order = 2.0;
  md.a.declared_decay = s.delta;
  md.time_independent = s.time_independent;
  md.mass_floor = s.mass_floor;
  md.delta = s.delta;
  md.hypothesis = s.hypothesis;
  md.scenario_name = s.name;
  const int N = grid.n_points;
  const double dt = times.dt;

  // Time-independent scenarios store a single slice.
  const int n_slices = s.time_independent ? 1 : times.count;
  md.a.slices.resize(n_slices);
  md.r.resize(n_slices);
  md.density.resize(n_slices);
  for (int k = 0; k < n_slices; ++k) {
    const double t = s.time_independent ? 0.0 : times.at(k);
    RVec h(N), V(N), r(N);
    for (int j = 0; j < N; ++j) {
      const double x = grid.points(j);
      h(j) = s.h(t, x);
      V(j) = s.V(t, x);
      if (!(h(j) > 0)) throw KgdError("assemble_model: h must be positive");
      double dh;
      if (s.dh_dt) {
        dh = s.dh_dt(t, x);
      } else {
        // Fourth-order central difference on the time grid spacing.
        dh = (-s.h(t + 2 * dt, x) + 8 * s.h(t + dt, x) - 8 * s.h(t - dt, x) + s.h(t - 2 * dt, x)) / (12 * dt);
      }
      md.max_dh_dt = std::max(md.max_dh_dt, std::abs(dh));
      r(j) = 0.5 * dh / h(j);
    }
    RVec dens = WeightedProduct::from_metric(grid, h).density;
    Mat a = spatial_operator(grid, h, V);
    Mat adj = weighted_adjoint(a, dens);
    md.symmetrization_defect =
        std::max(md.symmetrization_defect, (a - adj).norm() / std::max(a.norm(), 1e-300));
    md.a.slices[k] = 0.5 * (a + adj);
    md.r[k] = r;
    md.density[k] = dens;
  }

  auto asymptotic = [&](const Profile& hp, const Profile& Vp, RVec& dens) {
    RVec h(N), V(N);
    for (int j = 0; j < N; ++j) {
      h(j) = hp(grid.points(j));
      V(j) = Vp(grid.points(j));
    }
    dens = WeightedProduct::from_metric(grid, h).density;
    Mat a = spatial_operator(grid, h, V);
    return Mat(weighted_hermitian_part(a, dens));
  };
  md.a_out = asymptotic(s.h_out, s.V_out, md.density_out);
  md.a_in = asymptotic(s.h_in, s.V_in, md.density_in);
  for (auto [name, A, d] : {std::tuple{"a_out", &md.a_out, &md.density_out},
                            std::tuple{"a_in", &md.a_in, &md.density_in}}) {
    double lo = weighted_eigenvalues(*A, *d)(0);
    if (lo < s.mass_floor * (1.0 - 1e-9)) {
      std::ostringstream os;
      os << "assemble_model: " << name << " has smallest eigenvalue " << lo << " below mass_floor "
         << s.mass_floor << " (hypothesis (pos) violated)";
      throw KgdError(os.str());
    }
  }
  return md;
}

Eigen::Matrix2cd ConformalRecord::cauchy_block(double t, double x) const {
  const double e = exponent();
  const double c = c_hat(t, x);
  const double dlnc = central_dt([this](double tt, double xx) { return std::log(c_hat(tt, xx)); }, t, x);
  Eigen::Matrix2cd B;
  B << 1.0, 0.0, -kI * e * dlnc, 1.0;
  return std::pow(c, e) * B;
}

std::pair<MetricScenario, ConformalRecord> conformal_reduce(const MetricScenario& s, const SpatialGrid& grid) {
  if (!s.shift_is_zero) throw KgdError("conformal_reduce: apply flow_straighten first (b must vanish)");
  if (s.spacetime_dim != 2)
    throw KgdError("conformal_reduce: only n = 2 (d = 1) scenarios can be reduced on the grid");
  ConformalRecord rec;
  rec.spacetime_dim = s.spacetime_dim;
  rec.c_hat = s.c;
  if (s.lapse_is_one) return {s, rec};
  MetricScenario out = s;
  const Field h = s.h, c = s.c, V = s.V;
  // n = 2: the curvature coefficient (n-2)/(4(n-1)) vanishes identically.
  out.h = [=](double t, double x) { double cc = c(t, x); return h(t, x) / (cc * cc); };
  out.V = [=](double t, double x) { double cc = c(t, x); return cc * cc * V(t, x); };
  const Profile ho = s.h_out, hi = s.h_in, co = s.c_out, ci = s.c_in, vo = s.V_out, vi = s.V_in;
  out.h_out = [=](double x) { return ho(x) / (co(x) * co(x)); };
  out.h_in = [=](double x) { return hi(x) / (ci(x) * ci(x)); };
  out.V_out = [=](double x) { return co(x) * co(x) * vo(x); };
  out.V_in = [=](double x) { return ci(x) * ci(x) * vi(x); };
  if (!s.time_independent) out.dh_dt = nullptr;
  out.c = [](double, double) { return 1.0; };
  out.c_out = out.c_in = [](double) { return 1.0; };
  out.lapse_is_one = true;
  for (int j = 0; j < grid.n_points; ++j) {
    const double x = grid.points(j);
    if (out.V_out(x) < s.mass_floor * (1 - 1e-12) || out.V_in(x) < s.mass_floor * (1 - 1e-12))
      throw KgdError("conformal_reduce: reduced asymptotic potential below mass_floor (violates (pos))");
  }
  return {out, rec};
}

namespace odeint = boost::numeric::odeint;
using FlowState = std::array<double, 2>;

namespace {
void flow_rhs(const Field& b, const FlowState& s, FlowState& ds, double t) {
  ds[0] = b(t, s[0]);
  ds[1] = central_dx(b, t, s[0]) * s[1];
}

FlowState flow_from_zero(const Field& b, double x, double t, double step) {
  FlowState s{x, 1.0};
  if (t == 0.0) return s;
  odeint::runge_kutta4<FlowState> rk;
  const int n = std::max(1, static_cast<int>(std::ceil(std::abs(t) / step)));
  const double h = t / n;
  auto sys = [&](const FlowState& st, FlowState& d, double tt) { flow_rhs(b, st, d, tt); };
  double tt = 0.0;
  for (int i = 0; i < n; ++i, tt += h) rk.do_step(sys, s, tt, h);
  return s;
}
}  // namespace

std::pair<double, double> FlowRecord::map(double t, double xq) const {
  int k = times.nearest(t);
  if (std::abs(times.at(k) - t) < 1e-10) {
    for (int j = 0; j < x.size(); ++j)
      if (std::abs(x(j) - xq) < 1e-12) return {y(k, j), y_x(k, j)};
  }
  FlowState s = flow_from_zero(b, xq, t, step);
  return {s[0], s[1]};
}

FlowRecord integrate_flow(const Field& b, const TimeGrid& times, const RVec& x, double step) {
  FlowRecord rec;
  rec.times = times;
  rec.x = x;
  rec.b = b;
  rec.step = step;
  rec.y.resize(times.count, x.size());
  rec.y_x.resize(times.count, x.size());
  odeint::runge_kutta4<FlowState> rk;
  auto sys = [&](const FlowState& st, FlowState& d, double tt) { flow_rhs(b, st, d, tt); };
  const int k0 = times.nearest(0.0);
  for (int j = 0; j < x.size(); ++j) {
    // Start at t = 0, then sweep outward in both directions, landing on nodes.
    FlowState s0 = flow_from_zero(b, x(j), times.at(k0), step);
    for (int dir : {+1, -1}) {
      FlowState s = s0;
      rec.y(k0, j) = s[0];
      rec.y_x(k0, j) = s[1];
      for (int k = k0; k + dir >= 0 && k + dir < times.count; k += dir) {
        const double ta = times.at(k), tb = times.at(k + dir);
        const int n = std::max(1, static_cast<int>(std::ceil(std::abs(tb - ta) / step)));
        const double h = (tb - ta) / n;
        for (int i = 0; i < n; ++i) rk.do_step(sys, s, ta + i * h, h);
        rec.y(k + dir, j) = s[0];
        rec.y_x(k + dir, j) = s[1];
        if (!std::isfinite(s[0]) || !std::isfinite(s[1]))
          throw KgdError("flow integration produced a non-finite value");
      }
    }
  }
  rec.y_out = rec.y.row(times.count - 1).transpose();
  rec.y_in = rec.y.row(0).transpose();
  // Convergence rate of |y(t) - y_out| over the second half of the window.
  std::vector<double> ts, ds;
  for (double frac : {0.125, 0.25, 0.5}) {
    int k = times.nearest(frac * times.t_end());
    double d = (rec.y.row(k).transpose() - rec.y_out).cwiseAbs().maxCoeff();
    if (d > 0 && times.at(k) > 0) {
      ts.push_back(times.at(k));
      ds.push_back(d);
    }
  }
  rec.out_rate = ts.size() >= 2 ? loglog_slope(ts, ds) : -INFINITY;
  return rec;
}

std::pair<MetricScenario, FlowRecord> flow_straighten(const MetricScenario& s, const SpatialGrid& grid,
                                                      const TimeGrid& times, double step) {
  if (!(s.mu_prime > 1.0)) {
    std::ostringstream os;
    os << "flow_straighten: precondition violated, shift decay exponent mu' = " << s.mu_prime
       << " must exceed 1";
    throw KgdError(os.str());
  }
  // Numerical check of |b| <= C <t>^{-mu'} on the window.
  auto sup_b = [&](double t) {
    double m = 0;
    for (int j = 0; j < grid.n_points; ++j) m = std::max(m, std::abs(s.b(t, grid.points(j))));
    return m;
  };
  const double T = times.t_end();
  double early = sup_b(0.25 * T) * std::pow(japanese(0.25 * T), s.mu_prime);
  double late = sup_b(T) * std::pow(japanese(T), s.mu_prime);
  if (late > 4.0 * early + 1e-300 && late > 1e-12)
    throw KgdError("flow_straighten: shift does not decay like <t>^{-mu'} on the window");

  auto rec = std::make_shared<FlowRecord>(integrate_flow(s.b, times, grid.points, step));
  for (int k = 0; k < times.count; ++k)
    for (int j = 1; j < grid.n_points; ++j)
      if (!(rec->y(k, j) > rec->y(k, j - 1)))
        throw KgdError("flow_straighten: flow map lost injectivity on the grid");

  MetricScenario out = s;
  const Field h = s.h, c = s.c, V = s.V;
  out.h = [=](double t, double x) {
    auto [y, yx] = rec->map(t, x);
    return h(t, y) * yx * yx;
  };
  out.c = [=](double t, double x) { return c(t, rec->map(t, x).first); };
  out.V = [=](double t, double x) { return V(t, rec->map(t, x).first); };
  // The pulled-back h is differentiated numerically unless the flow is the identity.
  if (!s.shift_is_zero) out.dh_dt = nullptr;
  const double t_hi = times.t_end(), t_lo = times.t0;
  const Profile ho = s.h_out, hi = s.h_in, co = s.c_out, ci = s.c_in, vo = s.V_out, vi = s.V_in;
  out.h_out = [=](double x) { auto [y, yx] = rec->map(t_hi, x); return ho(y) * yx * yx; };
  out.h_in = [=](double x) { auto [y, yx] = rec->map(t_lo, x); return hi(y) * yx * yx; };
  out.c_out = [=](double x) { return co(rec->map(t_hi, x).first); };
  out.c_in = [=](double x) { return ci(rec->map(t_lo, x).first); };
  out.V_out = [=](double x) { return vo(rec->map(t_hi, x).first); };
  out.V_in = [=](double x) { return vi(rec->map(t_lo, x).first); };
  out.b = [](double, double) { return 0.0; };
  out.shift_is_zero = true;
  out.time_independent = s.time_independent && s.shift_is_zero;
  return {out, *rec};
}

NontrappingReport nontrapping_check(const Field& c, const Field& h, const Box& box, int n_rays,
                                    double budget_factor) {
  using State = std::array<double, 4>;  // t, x, xi_t, xi_x
  NontrappingReport rep;
  const double R = box.radius();
  rep.budget = budget_factor * R;
  const double t_mid = 0.5 * (box.t_min + box.t_max), x_mid = 0.5 * (box.x_min + box.x_max);
  const double ds = 1e-3 * R;
  // Error-controlled Dormand-Prince stepping; the flow is stiff where c is small.
  auto stepper = odeint::make_controlled(1e-11, 1e-11, odeint::runge_kutta_dopri5<State>());
  for (int i = 0; i < n_rays; ++i) {
    // Seeds spread over the central half of the spatial extent, alternating direction.
    const int n_pairs = (n_rays + 1) / 2;
    const double frac = (i / 2 + 0.5) / n_pairs;
    const double x0 = x_mid + (frac - 0.5) * 0.5 * (box.x_max - box.x_min);
    const double dir = (i % 2 == 0) ? 1.0 : -1.0;
    const double c0 = c(t_mid, x0), h0 = h(t_mid, x0);
    if (!(c0 > 1e-10) || !(h0 > 1e-10))
      throw KgdError("nontrapping_check: degenerate metric at seed " + std::to_string(i));
    // Null covector with xi_t = -c xi_x / sqrt(h) (future directed), |xi| = 1.
    double xx = dir, xt = -c0 * std::abs(xx) / std::sqrt(h0);
    double nrm = std::hypot(xt, xx);
    State s{t_mid, x0, xt / nrm, xx / nrm};
    auto rhs = [&](const State& st, State& d, double) {
      const double cc = c(st[0], st[1]), hh = h(st[0], st[1]);
      if (!(cc > 1e-10) || !(hh > 1e-10) || !std::isfinite(cc) || !std::isfinite(hh))
        throw KgdError("nontrapping_check: step-size underflow near degenerate metric, seed " +
                       std::to_string(i));
      const double ct = central_dt(c, st[0], st[1], 1e-5), cx = central_dx(c, st[0], st[1], 1e-5);
      const double ht = central_dt(h, st[0], st[1], 1e-5), hx = central_dx(h, st[0], st[1], 1e-5);
      const double a = st[2], b = st[3];
      d[0] = -2 * a / (cc * cc);
      d[1] = 2 * b / hh;
      d[2] = -(2 * a * a * ct / (cc * cc * cc) - b * b * ht / (hh * hh));
      d[3] = -(2 * a * a * cx / (cc * cc * cc) - b * b * hx / (hh * hh));
    };
    double lambda = 0.0, h = ds;
    bool escaped = false;
    while (lambda < rep.budget) {
      State prev = s;
      const double lambda_prev = lambda;
      h = std::min(h, rep.budget - lambda);
      int tries = 0;
      while (stepper.try_step(rhs, s, lambda, h) == odeint::fail) {
        if (++tries > 200 || h < 1e-14 * R)
          throw KgdError("nontrapping_check: step-size underflow near degenerate metric, seed " +
                         std::to_string(i));
      }
      h = std::min(h, ds);
      const double step_taken = lambda - lambda_prev;
      if (s[0] < box.t_min || s[0] > box.t_max || s[1] < box.x_min || s[1] > box.x_max) {
        // Linear interpolation to the boundary crossing.
        double f = 1.0;
        auto upd = [&](double a0, double a1, double lo, double hi) {
          if (a1 > hi) f = std::min(f, (hi - a0) / (a1 - a0));
          if (a1 < lo) f = std::min(f, (lo - a0) / (a1 - a0));
        };
        upd(prev[0], s[0], box.t_min, box.t_max);
        upd(prev[1], s[1], box.x_min, box.x_max);
        const double t_exit = prev[0] + f * (s[0] - prev[0]);
        rep.escape_times.push_back(std::abs(t_exit - t_mid));
        rep.escape_params.push_back(lambda_prev + f * step_taken);
        escaped = true;
        break;
      }
    }
    if (!escaped) {
      rep.escape_times.push_back(-1.0);
      rep.escape_params.push_back(-1.0);
      ++rep.n_trapped;
    }
  }
  rep.trapped = rep.n_trapped > 0;
  return rep;
}

double conformally_flat_curvature(int d, double psi, double dpsi, double ddpsi) {
  return -std::exp(-2 * psi) * (2.0 * (d - 1) * ddpsi + (d - 2.0) * (d - 1.0) * dpsi * dpsi);
}

PositivityReport positivity_check(const MetricScenario& s, const RVec& xs) {
  PositivityReport rep;
  rep.min_value = INFINITY;
  const int n = s.spacetime_dim;
  const int d = n - 1;
  for (int side = 0; side < 2; ++side) {
    const Profile& hp = side == 0 ? s.h_out : s.h_in;
    const Profile& cp = side == 0 ? s.c_out : s.c_in;
    const Profile& Vp = side == 0 ? s.V_out : s.V_in;
    for (int j = 0; j < xs.size(); ++j) {
      const double x = xs(j);
      const double c = cp(x);
      double value = c * c * Vp(x);
      if (n != 2) {
        // Fourth-order differences of the log-profiles.
        const double e = 1e-3;
        auto d1 = [&](const Profile& f) {
          return (-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * e);
        };
        auto d2 = [&](const Profile& f) {
          return (-f(x + 2 * e) + 16 * f(x + e) - 30 * f(x) + 16 * f(x - e) - f(x - 2 * e)) / (12 * e * e);
        };
        Profile psi_t = [&](double y) { return 0.5 * std::log(hp(y) / (cp(y) * cp(y))); };
        Profile psi = [&](double y) { return 0.5 * std::log(hp(y)); };
        const double R_opt = conformally_flat_curvature(d, psi_t(x), d1(psi_t), d2(psi_t));
        const double R_h = conformally_flat_curvature(d, psi(x), d1(psi), d2(psi));
        const double lap_c = std::exp(-2 * psi(x)) * (d2(cp) + (d - 2.0) * d1(psi) * d1(cp));
        const double R_g = R_h - 2.0 * lap_c / c;
        value += (n - 2.0) / (4.0 * (n - 1.0)) * (R_opt - c * c * R_g);
      }
      rep.min_value = std::min(rep.min_value, value);
    }
  }
  rep.pass = rep.min_value >= s.mass_floor;
  return rep;
}

}  // namespace kgd
