#include "kgd/geometry.hpp"

#include <gtest/gtest.h>

namespace kgd {
namespace {

double sech(double u) { return 1.0 / std::cosh(u); }

TEST(AssembleModel, FlatStaticCase) {
  SpatialGrid g = build_grid(16, 2 * M_PI);
  MetricScenario s = make_preset("static", {}, g.length);
  ModelOperatorData md = assemble_model(s, g, TimeGrid::symmetric(1.0, 0.5));
  ASSERT_EQ(md.a.size(), 1);
  Mat ah = g.fourier * md.a[0] * g.fourier.adjoint();
  for (int j = 0; j < 16; ++j) {
    const double k = g.wavenumbers(j);
    EXPECT_NEAR(ah(j, j).real(), k * k + 1.0, 1e-11);
  }
  EXPECT_LE((ah - Mat(ah.diagonal().asDiagonal())).norm(), 1e-11);
  EXPECT_EQ(md.fric(0).norm(), 0.0);
  EXPECT_LE(md.symmetrization_defect, 1e-10);
}

TEST(AssembleModel, UniformScaleFriction) {
  // h = exp(2 s(t)) with s = sigma (t/tau)/<t/tau>  ->  r = s'(t).
  SpatialGrid g = build_grid(8, 2 * M_PI);
  const double sigma = 0.3, tau = 4.0;
  MetricScenario s = make_preset("flrw", {{"sigma", sigma}, {"tau", tau}}, g.length);
  TimeGrid tg = TimeGrid::symmetric(10.0, 0.05);
  ModelOperatorData md = assemble_model(s, g, tg);
  for (int k = 0; k < tg.count; k += 37) {
    const double u = tg.at(k) / tau;
    const double sp = sigma / tau * std::pow(1 + u * u, -1.5);
    EXPECT_NEAR(md.fric(k)(3), sp, 1e-12);
  }
  // Dropping the analytic derivative falls back to finite differences.
  s.dh_dt = nullptr;
  ModelOperatorData fd = assemble_model(s, g, tg);
  for (int k = 0; k < tg.count; k += 37) EXPECT_NEAR(fd.fric(k)(0), md.fric(k)(0), 1e-6);
  EXPECT_LE(md.symmetrization_defect, 1e-10);
}

TEST(AssembleModel, PotentialDifferenceDecaysLikeSech) {
  SpatialGrid g = build_grid(16, 8.0);
  MetricScenario s = make_preset("static", {}, g.length);
  const double L = g.length;
  s.V = [L](double t, double x) { return 1.0 + sech(t) * std::cos(2 * M_PI * x / L); };
  s.time_independent = false;
  TimeGrid tg = TimeGrid::symmetric(8.0, 0.5);
  ModelOperatorData md = assemble_model(s, g, tg);
  for (int k = 0; k < tg.count; ++k) {
    const double d = spectral_norm(md.a[k] - md.a_out);
    EXPECT_NEAR(d, sech(tg.at(k)), 1e-10);
  }
}

TEST(AssembleModel, RejectsNonModelFormAndLowMass) {
  SpatialGrid g = build_grid(8, 2 * M_PI);
  EXPECT_THROW(assemble_model(make_preset("conformal", {}, g.length), g, TimeGrid::symmetric(1, 0.5)), KgdError);
  MetricScenario s = make_preset("static", {}, g.length);
  s.mass_floor = 2.0;
  EXPECT_THROW(assemble_model(s, g, TimeGrid::symmetric(1, 0.5)), KgdError);
}

TEST(Presets, UnknownNameListsPresets) {
  try {
    make_preset("nope", {}, 1.0);
    FAIL();
  } catch (const KgdError& e) {
    EXPECT_NE(std::string(e.what()).find("sech"), std::string::npos);
  }
  EXPECT_THROW(make_preset("sech", {{"bogus", 1.0}}, 1.0), KgdError);
}

TEST(ConformalReduce, IdentityWhenLapseIsOne) {
  SpatialGrid g = build_grid(8, 2 * M_PI);
  MetricScenario s = make_preset("sech", {}, g.length);
  auto [r, rec] = conformal_reduce(s, g);
  for (double x : {0.1, 1.3, 4.0}) EXPECT_EQ(r.V(2.0, x), s.V(2.0, x));
}

TEST(ConformalReduce, StaticLapseGivesConstantMass) {
  SpatialGrid g = build_grid(16, 8.0);
  MetricScenario s = make_preset("conformal", {}, g.length);
  auto [r, rec] = conformal_reduce(s, g);
  for (int j = 0; j < 16; ++j) {
    const double x = g.points(j), c = s.c(0, x);
    // n = 2: V changes by exactly the c^2 factor.
    EXPECT_EQ(r.V(0.0, x), c * c * s.V(0.0, x));
    EXPECT_NEAR(r.V(0.0, x), 1.0, 1e-14);
    EXPECT_NEAR(r.h(0.0, x), 1.0 / (c * c), 1e-15);
  }
  EXPECT_LE((rec.cauchy_block(0.3, 1.0) - Eigen::Matrix2cd::Identity()).norm(), 0.0);
  ModelOperatorData md = assemble_model(r, g, TimeGrid::symmetric(1.0, 0.5));
  EXPECT_GE(weighted_eigenvalues(md.a_out, md.density_out)(0), 1.0 - 1e-9);
}

TEST(FlowStraighten, ZeroShiftIsIdentityPipeline) {
  SpatialGrid g = build_grid(16, 8 * M_PI);
  TimeGrid tg = TimeGrid::symmetric(5.0, 0.25);
  MetricScenario s = make_preset("sech", {}, g.length);
  auto [out, rec] = flow_straighten(s, g, tg);
  EXPECT_EQ((rec.y_out - g.points).cwiseAbs().maxCoeff(), 0.0);
  ModelOperatorData a = assemble_model(s, g, tg), b = assemble_model(out, g, tg);
  double d = 0.0;
  for (int k = 0; k < tg.count; ++k) {
    d = std::max(d, (a.a[k] - b.a[k]).norm());
    d = std::max(d, (a.fric(k) - b.fric(k)).norm());
  }
  EXPECT_LE(d, 1e-12);
}

TEST(FlowStraighten, ExactFlowOfSpatiallyConstantShift) {
  SpatialGrid g = build_grid(8, 2 * M_PI);
  TimeGrid tg = TimeGrid::symmetric(20.0, 0.5);
  const double beta = 0.5;
  MetricScenario s = make_preset("shift", {{"beta", beta}}, g.length);
  auto [out, rec] = flow_straighten(s, g, tg, 1e-3);
  double err = 0.0;
  for (int k = 0; k < tg.count; ++k)
    for (int j = 0; j < 8; ++j) {
      err = std::max(err, std::abs(rec.y(k, j) - (g.points(j) + beta * std::tanh(tg.at(k)))));
      err = std::max(err, std::abs(rec.y_x(k, j) - 1.0));
    }
  EXPECT_LE(err, 1e-8);
  for (int j = 0; j < 8; ++j) EXPECT_NEAR(rec.y_out(j), g.points(j) + beta, 1e-8);
  EXPECT_TRUE(out.shift_is_zero);
  // Pulled-back potential is the original one at the moved point.
  EXPECT_NEAR(out.V(1.0, 0.4), s.V(1.0, 0.4 + beta * std::tanh(1.0)), 1e-8);
}

TEST(FlowStraighten, RejectsSlowShiftDecay) {
  SpatialGrid g = build_grid(8, 2 * M_PI);
  MetricScenario s = make_preset("shift", {}, g.length);
  s.mu_prime = 0.5;
  EXPECT_THROW(flow_straighten(s, g, TimeGrid::symmetric(5.0, 0.5)), KgdError);
}

TEST(Nontrapping, MinkowskiRaysEscapeAtLightSpeed) {
  auto one = [](double, double) { return 1.0; };
  Box box{-10, 10, -10, 10};
  NontrappingReport rep = nontrapping_check(one, one, box, 1, 50.0);
  EXPECT_FALSE(rep.trapped);
  ASSERT_EQ(rep.escape_times.size(), 1u);
  EXPECT_NEAR(rep.escape_times[0], box.radius(), 1e-6);

  NontrappingReport many = nontrapping_check(one, one, box, 16, 50.0);
  EXPECT_FALSE(many.trapped);
  EXPECT_EQ(many.n_trapped, 0);
  for (double t : many.escape_times) {
    EXPECT_GT(t, 0.0);
    EXPECT_LE(t, box.radius() + 1e-9);
  }
}

TEST(Nontrapping, LapseWellRaysStillEscape) {
  MetricScenario s = make_preset("lapse_well", {}, 1.0);
  Box box{-10, 10, -10, 10};
  NontrappingReport rep = nontrapping_check(s.c, s.h, box, 8, 50.0);
  EXPECT_FALSE(rep.trapped);

  // A ray from the well bottom in a tall box leaves through the spatial side after
  // coordinate time int_0^10 dx / c(x) (slowed coordinate speed c).
  Box tall{-100, 100, -10, 10};
  NontrappingReport one = nontrapping_check(s.c, s.h, tall, 1, 50.0);
  ASSERT_FALSE(one.trapped);
  double expected = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = (i + 0.5) * 10.0 / n;
    expected += 10.0 / n / s.c(0.0, x);
  }
  EXPECT_GT(expected, 10.5);
  EXPECT_NEAR(one.escape_times[0], expected, 1e-3);
}

TEST(Nontrapping, ZeroBudgetTrapsEverything) {
  auto one = [](double, double) { return 1.0; };
  NontrappingReport rep = nontrapping_check(one, one, Box{}, 4, 0.0);
  EXPECT_TRUE(rep.trapped);
  EXPECT_EQ(rep.n_trapped, 4);
  EXPECT_EQ(rep.budget, 0.0);
}

TEST(Nontrapping, DegenerateMetricNamesSeed) {
  auto one = [](double, double) { return 1.0; };
  auto zero = [](double, double) { return 0.0; };
  try {
    nontrapping_check(zero, one, Box{}, 2, 1.0);
    FAIL();
  } catch (const KgdError& e) {
    EXPECT_NE(std::string(e.what()).find("seed 0"), std::string::npos);
  }
}

TEST(Positivity, TwoDimensionalExamples) {
  RVec xs = RVec::LinSpaced(17, -4, 4);
  MetricScenario s = make_preset("static", {{"m", 1.5}}, 8.0);
  PositivityReport rep = positivity_check(s, xs);
  EXPECT_NEAR(rep.min_value, 2.25, 1e-15);
  EXPECT_TRUE(rep.pass);

  s = make_preset("static", {}, 8.0);
  s.c_out = s.c_in = [](double) { return 2.0; };
  s.V_out = s.V_in = [](double) { return 1.0; };
  rep = positivity_check(s, xs);
  EXPECT_EQ(rep.min_value, 4.0);
  EXPECT_TRUE(rep.pass);
}

TEST(Positivity, FourDimensionalProfileMatchesAnalyticCurvature) {
  // n = 4 (d = 3) static profile depending on x^1: h = exp(2 psi), c = exp(kappa x).
  const double a = 0.1, kappa = 0.2, V0 = 1.0;
  MetricScenario s = make_preset("static", {}, 8.0);
  s.spacetime_dim = 4;
  s.h_out = s.h_in = [a](double x) { return std::exp(2 * a * x * x); };
  s.c_out = s.c_in = [kappa](double x) { return std::exp(kappa * x); };
  s.V_out = s.V_in = [V0](double) { return V0; };
  s.mass_floor = 0.0;
  RVec xs = RVec::LinSpaced(9, -2, 2);
  PositivityReport rep = positivity_check(s, xs);

  // Analytic oracle: R for e^{2 psi} delta in d = 3 is -e^{-2 psi}(4 psi'' + 2 psi'^2).
  double expected = INFINITY;
  for (int j = 0; j < xs.size(); ++j) {
    const double x = xs(j), psi = a * x * x, dpsi = 2 * a * x, ddpsi = 2 * a;
    const double c = std::exp(kappa * x);
    const double pt = psi - kappa * x, dpt = dpsi - kappa, ddpt = ddpsi;
    const double R_opt = -std::exp(-2 * pt) * (4 * ddpt + 2 * dpt * dpt);
    const double R_h = -std::exp(-2 * psi) * (4 * ddpsi + 2 * dpsi * dpsi);
    const double lap_c = std::exp(-2 * psi) * (kappa * kappa * c + dpsi * kappa * c);
    const double R_g = R_h - 2 * lap_c / c;
    expected = std::min(expected, c * c * V0 + (2.0 / 12.0) * (R_opt - c * c * R_g));
  }
  EXPECT_NEAR(rep.min_value, expected, 1e-7);
}

}  // namespace
}  // namespace kgd
