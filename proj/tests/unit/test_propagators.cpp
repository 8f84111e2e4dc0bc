#include "kgd/propagators.hpp"

#include <boost/numeric/odeint.hpp>
#include <gtest/gtest.h>

namespace kgd {
namespace {

struct Scenario {
  SpatialGrid grid;
  std::shared_ptr<ModelOperatorData> model;
  std::shared_ptr<DiagonalizationPack> pack;
  std::shared_ptr<PropagationTable> U, Uad, Ud;
};

Scenario make(const std::string& preset, int n, double T) {
  const double L = 8 * M_PI;
  Scenario s;
  s.grid = build_grid(n, L);
  s.model = std::make_shared<ModelOperatorData>(
      assemble_model(make_preset(preset, {}, L), s.grid, TimeGrid::symmetric(T, 0.05)));
  auto sol = std::make_shared<RiccatiSolution>(riccati_solve(*s.model, {3, 0.5}));
  s.pack = build_pack(sol, s.model);
  s.U = std::make_shared<PropagationTable>(full_generator(s.model));
  s.Uad = std::make_shared<PropagationTable>(ad_generator(s.pack));
  s.Ud = std::make_shared<PropagationTable>(d_generator(s.pack));
  return s;
}

const Scenario& static_scenario() {
  static const Scenario s = make("static", 8, 40.0);
  return s;
}
const Scenario& sech_scenario() {
  static const Scenario s = make("sech", 16, 40.0);
  return s;
}

double bump(double t, double c) { return std::exp(-0.5 * (t - c) * (t - c)); }

// Scalar source bump(t) * profile(x); block source (f, 0.3 f).
GridField scalar_source(const TimeGrid& tg, int n, double centre) {
  GridField f(tg.count);
  for (int k = 0; k < tg.count; ++k) {
    CVec v(n);
    for (int j = 0; j < n; ++j) v[j] = bump(tg.at(k), centre) * (1.0 + 0.5 * std::cos(2 * M_PI * j / n));
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

// Diagonal Fourier entry j of an N x N kernel block.
cplx mode_entry(const SpatialGrid& g, const Mat& A, int j) { return to_fourier(g, A)(j, j); }

double omega(const Scenario& s, int j) {
  const double k = s.grid.wavenumbers(j);
  return std::sqrt(s.model->mass_floor * s.model->mass_floor + k * k);
}

TEST(CumulativeSimpson, SmoothIntegrandBothParities) {
  const double dt = 0.05;
  const int n = 401;
  GridField g(n);
  for (int k = 0; k < n; ++k) {
    g[k] = CVec(1);
    g[k][0] = std::exp(kI * 3.0 * (k * dt));
  }
  const GridField I = cumulative_simpson(g, dt);
  double err = 0.0;
  for (int k = 1; k < n; ++k) {
    const cplx exact = (std::exp(kI * 3.0 * (k * dt)) - 1.0) / (3.0 * kI);
    err = std::max(err, std::abs(I[k][0] - exact));
  }
  EXPECT_LE(err, 1e-8);
}

TEST(RetardedAdvanced, StaticScalarKernelIsSine) {
  const Scenario& s = static_scenario();
  const std::vector<double> ts{-3.0, -1.0, 0.0, 0.5, 2.0, 4.0};
  const KernelOperator gp = sample_propagator(KernelKind::retarded, KernelLevel::scalar, *s.U, ts, ts);
  const KernelOperator gm = sample_propagator(KernelKind::advanced, KernelLevel::scalar, *s.U, ts, ts);
  for (int j : {0, 1, 3}) {
    const double w = omega(s, j);
    for (size_t a = 0; a < ts.size(); ++a)
      for (size_t b = 0; b < ts.size(); ++b) {
        const double tau = ts[a] - ts[b];
        const double ret = tau > 0 ? std::sin(w * tau) / w : 0.0;
        const double adv = tau < 0 ? -std::sin(w * tau) / w : 0.0;
        EXPECT_LE(std::abs(mode_entry(s.grid, gp.at(a, b), j) - ret), 1e-10);
        EXPECT_LE(std::abs(mode_entry(s.grid, gm.at(a, b), j) - adv), 1e-10);
      }
  }
}

TEST(RetardedAdvanced, ZeroSourceAndSupportOverflow) {
  const Scenario& s = static_scenario();
  const TimeGrid& tg = s.model->times;
  GridField zero(tg.count, CVec::Zero(8));
  for (const CVec& v : retarded_advanced(KernelLevel::scalar, *s.U, zero, +1)) EXPECT_EQ(v.norm(), 0.0);
  GridField edge = zero;
  edge[1] = CVec::Ones(8);
  EXPECT_THROW(retarded_advanced(KernelLevel::scalar, *s.U, edge, +1), KgdError);
  GridField short_f(tg.count - 1, CVec::Zero(8));
  EXPECT_THROW(retarded_advanced(KernelLevel::scalar, *s.U, short_f, -1), KgdError);
}

TEST(RetardedAdvanced, StaticZeroModeMatchesOdeOracle) {
  // Spatially constant source: the zero mode solves u'' + m^2 u = bump with rest at -infinity.
  const Scenario& s = static_scenario();
  const TimeGrid& tg = s.model->times;
  const double m2 = s.model->mass_floor * s.model->mass_floor;
  GridField f(tg.count);
  for (int k = 0; k < tg.count; ++k) f[k] = CVec::Constant(8, bump(tg.at(k), 1.5));
  const GridField u = retarded_advanced(KernelLevel::scalar, *s.U, f, +1);

  using State = std::array<double, 2>;
  auto rhs = [&](const State& x, State& dx, double t) {
    dx[0] = x[1];
    dx[1] = bump(t, 1.5) - m2 * x[0];
  };
  namespace ode = boost::numeric::odeint;
  std::vector<double> times;
  for (int k = 0; k < tg.count; k += 7) times.push_back(tg.at(k));
  State x{0.0, 0.0};
  double err = 0.0;
  size_t obs = 0;
  ode::integrate_times(ode::make_dense_output(1e-12, 1e-12, ode::runge_kutta_dopri5<State>()), rhs, x,
                       times.begin(), times.end(), 0.01, [&](const State& y, double) {
                         const int k = static_cast<int>(7 * obs++);
                         for (int j = 0; j < 8; ++j) err = std::max(err, std::abs(u[k][j] - y[0]));
                       });
  EXPECT_EQ(obs, times.size());
  EXPECT_LE(err, 1e-7);
}

TEST(RetardedAdvanced, CausalSupport) {
  const Scenario& s = sech_scenario();
  const TimeGrid& tg = s.model->times;
  GridField f = scalar_source(tg, 16, 0.0);
  for (int k = 0; k < tg.count; ++k)
    if (tg.at(k) < 2.0) f[k].setZero();
  const GridField up = retarded_advanced(KernelLevel::scalar, *s.U, f, +1);
  double before = 0.0, after = 0.0;
  for (int k = 0; k < tg.count; ++k) {
    if (tg.at(k) < 2.0 - tg.dt) before = std::max(before, up[k].norm());
    else after = std::max(after, up[k].norm());
  }
  EXPECT_LE(before, 1e-8);
  EXPECT_GT(after, 1e-2);
  const std::vector<double> ts{-4.0, -1.0, 0.0, 3.0};
  const KernelOperator gp = sample_propagator(KernelKind::retarded, KernelLevel::scalar, *s.U, ts, ts);
  for (size_t a = 0; a < ts.size(); ++a)
    for (size_t b = 0; b < ts.size(); ++b)
      if (ts[a] < ts[b] - tg.dt) EXPECT_LE(spectral_norm(gp.at(a, b)), 1e-8);
}

TEST(RetardedAdvanced, InvertsPOnInteriorStencils) {
  const Scenario& s = sech_scenario();
  const GridField f = scalar_source(s.model->times, 16, 3.0);
  const GridField fb = block_source(f);
  const BlockOperatorFamily had = ad_generator(s.pack);
  for (int sign : {+1, -1}) {
    SCOPED_TRACE(sign);
    const OperatorResidual r = scalar_residual(*s.model, retarded_advanced(KernelLevel::scalar, *s.U, f, sign), f);
    EXPECT_LE(r.max_residual, 1e-6);
    EXPECT_GT(r.max_solution, 1.0);
    const OperatorResidual rb = block_residual(had, retarded_advanced(KernelLevel::block, *s.Uad, fb, sign), fb);
    EXPECT_LE(rb.max_residual, 1e-7);
  }
}

TEST(RetardedAdvanced, AdjointRelation) {
  const Scenario& s = sech_scenario();
  std::vector<double> ts;
  for (double t = -8; t <= 8.001; t += 2.0) ts.push_back(t);
  const KernelOperator gp = sample_propagator(KernelKind::retarded, KernelLevel::scalar, *s.U, ts, ts);
  const KernelOperator gm = sample_propagator(KernelKind::advanced, KernelLevel::scalar, *s.U, ts, ts);
  EXPECT_LE(adjoint_relation_defect(gp, gm, *s.model), 1e-7);
  // Swapping the roles is not an identity.
  EXPECT_GT(adjoint_relation_defect(gp, gp, *s.model), 0.1);
}

TEST(FeynmanBlock, StaticModeFunction) {
  const Scenario& s = static_scenario();
  const std::vector<double> ts{-2.0, 0.0, 1.5};
  const KernelOperator G = feynman_block(*s.Ud, ts, ts);
  const int n = 8;
  for (int j : {0, 2}) {
    const double w = omega(s, j);
    for (size_t a = 0; a < ts.size(); ++a)
      for (size_t b = 0; b < ts.size(); ++b) {
        if (a == b) continue;
        const double tau = ts[a] - ts[b];
        const Mat hat = to_fourier(s.grid, G.at(a, b));
        const cplx pp = hat(j, j), mm = hat(n + j, n + j);
        const cplx pp_exact = tau > 0 ? kI * std::exp(kI * w * tau) : cplx(0.0);
        const cplx mm_exact = tau < 0 ? -kI * std::exp(-kI * w * tau) : cplx(0.0);
        EXPECT_LE(std::abs(pp - pp_exact), 1e-10);
        EXPECT_LE(std::abs(mm - mm_exact), 1e-10);
        EXPECT_LE(std::abs(hat(j, n + j)) + std::abs(hat(n + j, j)), 1e-12);
      }
  }
}

TEST(FeynmanBlock, JumpHermitianPartAndBoundaryConditions) {
  const Scenario& s = sech_scenario();
  std::vector<double> ts;
  for (double t = -6; t <= 6.001; t += 1.5) ts.push_back(t);
  EXPECT_LE(feynman_jump_defect(*s.Ud, ts), 1e-10);
  EXPECT_LE(feynman_hermitian_defect(feynman_block(*s.Ud, ts, ts), *s.Ud, *s.model), 1e-8);

  const GridField fb = block_source(scalar_source(s.model->times, 16, 3.0));
  const GridField u = feynman_block_apply(*s.Ud, fb);
  EXPECT_LE(block_residual(d_generator(s.pack), u, fb).max_residual, 1e-7);
  const BoundaryReport bd = feynman_boundary_conditions(*s.pack, *s.Ud, fb);
  EXPECT_LE(bd.out_defect, 1e-6);
  EXPECT_LE(bd.in_defect, 1e-6);
  // Built from U^ad instead, the conditions are violated by the off-diagonal coupling.
  const BoundaryReport ba = feynman_boundary_conditions(*s.pack, *s.Uad, fb);
  EXPECT_GT(std::max(ba.out_defect, ba.in_defect), 1e-3 * 1e-3);
  EXPECT_GT(std::max(ba.out_defect, ba.in_defect), 100 * std::max(bd.out_defect, bd.in_defect) + 1e-12);
}

TEST(FeynmanScalar, StaticModeFeynmanFunction) {
  const Scenario& s = static_scenario();
  const std::vector<double> ts{-2.0, -0.5, 0.0, 1.0, 2.5};
  const KernelOperator gf = feynman_scalar(feynman_block(*s.Ud, ts, ts), *s.pack);
  for (int j : {0, 1, 3}) {
    const double w = omega(s, j);
    for (size_t a = 0; a < ts.size(); ++a)
      for (size_t b = 0; b < ts.size(); ++b) {
        if (a == b) continue;
        const cplx exact = std::exp(kI * w * std::abs(ts[a] - ts[b])) / (2.0 * kI * w);
        EXPECT_LE(std::abs(mode_entry(s.grid, gf.at(a, b), j) - exact), 1e-10);
      }
  }
  const FeynmanResidual r = feynman_scalar_residual(*s.pack, *s.Ud, {-5.0, 0.0, 5.0}, 1.0);
  EXPECT_GT(r.samples, 100);
  EXPECT_LE(r.max_residual, 1e-8);
}

TEST(FeynmanScalar, PositivityOfTheImaginaryPart) {
  for (const Scenario* s : {&static_scenario(), &sech_scenario()}) {
    std::vector<double> ts;
    for (double t = -6; t <= 6.001; t += 0.75) ts.push_back(t);
    const FeynmanPositivity p = feynman_positivity(feynman_scalar(feynman_block(*s->Ud, ts, ts), *s->pack), *s->model);
    EXPECT_GE(p.min_eig_i, -1e-8);
    EXPECT_GT(p.max_eig_i, 1.0);
    // With P G_F = 1 the opposite orientation is negative.
    EXPECT_LT(p.min_eig_i_inverse, -1.0);
  }
}

TEST(FeynmanScalar, SechResidualIsSmoothing) {
  const Scenario& s = sech_scenario();
  const FeynmanResidual r = feynman_scalar_residual(*s.pack, *s.Ud, {-10.0, 0.0, 10.0}, 0.5);
  EXPECT_GT(r.max_residual, 0.0);
  EXPECT_LE(r.max_residual, 1e-2 * r.max_kernel);
  EXPECT_LE(r.gauge.decay_ratio(0, 2), 0.1);
  // The Fourier tail falls off as the band widens.
  const FeynmanResidual wide = feynman_scalar_residual(*s.pack, *s.Ud, {-10.0, 0.0, 10.0}, 1.5);
  EXPECT_LE(wide.max_fourier_tail, 0.1 * r.max_fourier_tail);
  EXPECT_LE(wide.max_fourier_tail, 1e-6);
}

TEST(FeynmanVsState, StaticExactAndSignControl) {
  const Scenario& s = static_scenario();
  const std::vector<double> ts{-3.0, -1.0, 0.0, 2.0, 3.5};
  const KernelOperator gf = feynman_scalar(feynman_block(*s.Ud, ts, ts), *s.pack);
  const FeynmanStateReport rep = feynman_vs_state(gf, reference_covariances(*s.pack, 0.0), *s.U, *s.model,
                                                  scalar_source(s.model->times, 8, 1.0), 1.0);
  ASSERT_GE(rep.selected, 0);
  EXPECT_EQ(rep.candidates[rep.selected].label, "i^-1 Lambda+ + G-");
  EXPECT_LE(rep.max_difference, 1e-7);
  for (const auto& c : rep.candidates) {
    if (c.sigma < 0) EXPECT_GT(c.p_residual, 1.0) << c.label;  // wrong sign: O(1) residual
    else EXPECT_LE(c.p_residual, 1e-6) << c.label;
  }
}

TEST(FeynmanVsState, SechDifferenceIsSmoothing) {
  const Scenario& s = sech_scenario();
  std::vector<double> ts;
  for (double t = -6; t <= 6.001; t += 1.5) ts.push_back(t);
  const KernelOperator gf = feynman_scalar(feynman_block(*s.Ud, ts, ts), *s.pack);
  const FeynmanStateReport rep = feynman_vs_state(gf, reference_covariances(*s.pack, 0.0), *s.U, *s.model,
                                                  scalar_source(s.model->times, 16, 1.0), 1.0);
  EXPECT_EQ(rep.candidates[rep.selected].label, "i^-1 Lambda+ + G-");
  EXPECT_LE(rep.candidates[rep.selected].distance, 1e-2);
  EXPECT_LE(rep.gauge.decay_ratio(0, 2), 0.1);
  EXPECT_LE(rep.fourier_tail, 1e-6);
}

TEST(FeynmanScalar, FrequencyProxyByTimeOrdering) {
  const Scenario& s = sech_scenario();
  std::vector<double> later, earlier;
  for (int i = 0; i < 512; ++i) {
    later.push_back(-30.0 + 0.1 * i);    // t - s >= 5 with s = -35
    earlier.push_back(-21.2 + 0.1 * i);  // s - t >= 5 with s = 35
  }
  const KernelOperator gl = feynman_scalar(feynman_block(*s.Ud, later, {-35.0}), *s.pack);
  const KernelOperator ge = feynman_scalar(feynman_block(*s.Ud, earlier, {35.0}), *s.pack);
  const HadamardReport pl = hadamard_frequency_proxy(as_two_point(gl, +1), s.grid);
  const HadamardReport pe = hadamard_frequency_proxy(as_two_point(ge, -1), s.grid);
  EXPECT_GE(pl.min_resolved_fraction, 0.99);
  EXPECT_GE(pe.min_resolved_fraction, 0.99);
  // Scoring the wrong half-line fails.
  EXPECT_LE(hadamard_frequency_proxy(as_two_point(gl, -1), s.grid).min_resolved_fraction, 0.01);
}

}  // namespace
}  // namespace kgd
