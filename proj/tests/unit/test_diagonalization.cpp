#include "kgd/diagonalization.hpp"

#include <boost/numeric/odeint.hpp>
#include <gtest/gtest.h>

#include <random>

namespace kgd {
namespace {

std::shared_ptr<ModelOperatorData> model_for(const std::string& preset, int n, double L, double T,
                                             double dt, std::map<std::string, double> p = {}) {
  SpatialGrid g = build_grid(n, L);
  return std::make_shared<ModelOperatorData>(assemble_model(make_preset(preset, p, L), g, TimeGrid::symmetric(T, dt)));
}

double max_norm(const OperatorFamily& f, int from = 0, int to = -1) {
  if (to < 0) to = f.size();
  double m = 0;
  for (int k = from; k < to; ++k) m = std::max(m, spectral_norm(f[k]));
  return m;
}

TEST(SqrtOperator, FourierDiagonal) {
  SpatialGrid g = build_grid(16, 2 * M_PI);
  Mat a = fourier_multiplier(g, [](double k) { return cplx(k * k + 1, 0); });
  Mat eps = sqrt_operator(a, WeightedProduct::uniform(g).density);
  Mat expected = fourier_multiplier(g, [](double k) { return cplx(std::sqrt(k * k + 1), 0); });
  EXPECT_LE((eps - expected).norm(), 1e-12);
  Mat I = Mat::Identity(16, 16);
  EXPECT_LE((sqrt_operator(I, RVec::Ones(16)) - I).norm(), 1e-14);
}

TEST(SqrtOperator, RandomSpdAgainstDenseEigendecomposition) {
  std::mt19937 rng(5);
  std::normal_distribution<double> n;
  Mat B(16, 16);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) B(i, j) = cplx(n(rng), n(rng));
  Mat a = B * B.adjoint() + Mat::Identity(16, 16);
  Mat eps = sqrt_operator(a, RVec::Ones(16));
  EXPECT_LE((eps * eps - a).norm(), 1e-10);
  // Independent oracle: complex eigendecomposition of the Hermitian matrix.
  Eigen::ComplexEigenSolver<Mat> ces(a);
  Mat oracle = ces.eigenvectors() * ces.eigenvalues().cwiseSqrt().asDiagonal() * ces.eigenvectors().inverse();
  EXPECT_LE((eps - oracle).norm(), 1e-10);

  // Weighted product: the root is self-adjoint in the density product.
  RVec d = RVec::LinSpaced(16, 0.5, 2.0);
  Mat aw = weighted_hermitian_part(d.cwiseInverse().cast<cplx>().asDiagonal() * a, d);
  Mat ew = sqrt_operator(aw, d);
  EXPECT_LE((ew * ew - aw).norm(), 1e-10 * aw.norm());
  EXPECT_LE((ew - weighted_adjoint(ew, d)).norm(), 1e-10 * ew.norm());
}

TEST(SqrtOperator, RejectsNonPositiveSpectrum) {
  Mat a = Mat::Identity(3, 3);
  a(1, 1) = -0.5;
  try {
    sqrt_operator(a, RVec::Ones(3));
    FAIL();
  } catch (const KgdError& e) {
    EXPECT_NE(std::string(e.what()).find("-0.5"), std::string::npos);
  }
}

TEST(LowFreqCutoff, Examples) {
  OperatorFamily f;
  f.times = TimeGrid{0, 1, 1};
  Mat a = Mat::Zero(3, 3);
  a.diagonal() << 0.1, 2, 5;
  f.slices = {a};
  CutoffResult r = low_freq_cutoff(f, {RVec::Ones(3)}, 1.0);
  Mat expected = Mat::Zero(3, 3);
  expected.diagonal() << 1, 2, 5;
  EXPECT_LE((r.floored[0] - expected).norm(), 1e-14);
  EXPECT_EQ(r.modified_slices, 1);

  CutoffResult same = low_freq_cutoff(f, {RVec::Ones(3)}, 0.05);
  EXPECT_EQ((same.floored[0] - a).norm(), 0.0);
  EXPECT_EQ(same.modified_slices, 0);
}

TEST(LowFreqCutoff, TimeDependentModificationIsSmoothing) {
  auto md = model_for("sech", 32, 8 * M_PI, 10.0, 0.5);
  CutoffResult r = low_freq_cutoff(md->a, md->density, 1.5, md->grid.get());
  ASSERT_GT(r.modified_slices, 0);
  for (int k = 0; k < r.floored.size(); ++k) {
    if (r.modification_norm[k] == 0.0) continue;
    EXPECT_LE(r.modification[k].decay_ratio(0, 3), 1e-2);
  }
}

TEST(Riccati, StaticIsExactAtEveryOrder) {
  auto md = model_for("static", 32, 8 * M_PI, 5.0, 0.05);
  for (int p = 0; p <= 4; ++p) {
    RiccatiSolution s = riccati_solve(*md, {p, 0.5});
    EXPECT_LE(max_norm(s.residual_plus), 1e-10) << "p = " << p;
    EXPECT_LE(max_norm(s.residual_minus), 1e-10) << "p = " << p;
    EXPECT_LE((s.b_plus[0] - s.epsilon[0]).norm(), 1e-12);
  }
}

TEST(Riccati, ConstructionalInvariants) {
  auto md = model_for("sech", 16, 8 * M_PI, 20.0, 0.05);
  RiccatiSolution s = riccati_solve(*md, {3, 0.5});
  for (int k = 0; k < s.b_plus.size(); k += 50) {
    const RVec& d = md->dens(k);
    EXPECT_EQ((s.b_minus[k] + weighted_adjoint(s.b_plus[k], d)).norm(), 0.0);
    const double lo = weighted_eigenvalues(s.b_plus[k] - s.b_minus[k], d)(0);
    const double emin = weighted_eigenvalues(s.epsilon[k], d)(0);
    EXPECT_GE(lo, 0.5 * 2 * emin * (1 - 1e-12));
  }
  EXPECT_GE(s.achieved_gap, 0.5 * (1 - 1e-12));
  EXPECT_FALSE(s.diverged);
  EXPECT_EQ(s.iterations_done, 3);
}

TEST(Riccati, GapFloorIsEnforced) {
  auto md = model_for("sech", 16, 8 * M_PI, 10.0, 0.05, {{"A", 0.5}});
  RiccatiSolution s = riccati_solve(*md, {2, 0.999});
  EXPECT_GE(s.achieved_gap, 0.999 * (1 - 1e-12));
}

TEST(Riccati, ResidualImprovesWithOrder) {
  auto md = model_for("sech", 16, 8 * M_PI, 20.0, 0.05);
  const SpatialGrid& g = *md->grid;
  std::vector<double> m2;
  for (int p = 0; p <= 4; ++p) {
    RiccatiSolution s = riccati_solve(*md, {p, 0.5});
    double m = 0;
    for (int k = 0; k < s.residual_plus.size(); k += 10)
      m = std::max(m, smoothing_gauge(g, s.residual_plus[k], {2}).values.at(2));
    m2.push_back(m);
  }
  EXPECT_GT(m2[0], m2[2]);
  int violations = 0;
  for (int p = 1; p <= 4; ++p) violations += m2[p] > m2[p - 1];
  EXPECT_LE(violations, 1);
}

// Scalar Riccati i b' - b^2 + a + i r b = 0 for one Fourier mode of the uniform-scale model.
TEST(Riccati, UniformScaleMatchesScalarOdeOracle) {
  const double sigma = 0.3, tau = 8.0, L = 2 * M_PI, T = 30.0, dt = 0.05;
  auto md = model_for("flrw", 8, L, T, dt, {{"sigma", sigma}, {"tau", tau}});
  const SpatialGrid& g = *md->grid;
  const int mode = 1;  // k = 1
  const double kk = g.wavenumbers(mode);
  auto s_of = [&](double t) { double u = t / tau; return sigma * u / std::sqrt(1 + u * u); };
  auto ds_of = [&](double t) { double u = t / tau; return sigma / tau * std::pow(1 + u * u, -1.5); };

  std::vector<double> err;
  for (int p = 0; p <= 2; ++p) {
    RiccatiSolution sol = riccati_solve(*md, {p, 0.5});
    auto bhat = [&](int k) { return Mat(g.fourier * sol.b_plus[k] * g.fourier.adjoint())(mode, mode); };
    // Integrate the scalar equation from the left end, seeded with the order-p value.
    using State = std::array<double, 2>;
    cplx b0 = bhat(0);
    State st{b0.real(), b0.imag()};
    auto rhs = [&](const State& x, State& dx, double t) {
      const cplx b(x[0], x[1]);
      const double a = kk * kk * std::exp(-2 * s_of(t)) + 1.0;
      const cplx db = -kI * (b * b - a - kI * ds_of(t) * b);
      dx[0] = db.real();
      dx[1] = db.imag();
    };
    boost::numeric::odeint::runge_kutta4<State> rk;
    const TimeGrid& tg = md->times;
    double e = 0;
    for (int k = 0; k + 1 < tg.count; ++k) {
      for (int i = 0; i < 10; ++i) rk.do_step(rhs, st, tg.at(k) + i * dt / 10, dt / 10);
      if (std::abs(tg.at(k + 1)) < 10.0) e = std::max(e, std::abs(cplx(st[0], st[1]) - bhat(k + 1)));
    }
    err.push_back(e);
  }
  EXPECT_LT(err[1], err[0]);
  EXPECT_LT(err[2], err[1]);
  EXPECT_LE(err[2], 1e-4);
}

TEST(Riccati, FactorizationIdentity) {
  auto md = model_for("sech", 16, 8 * M_PI, 10.0, 0.02);
  RiccatiSolution s = riccati_solve(*md, {3, 0.5});
  const SpatialGrid& g = *md->grid;
  std::mt19937 rng(9);
  std::normal_distribution<double> n;
  CVec u(16), v(16);
  for (int j = 0; j < 16; ++j) {
    u(j) = cplx(n(rng), n(rng));
    v(j) = cplx(n(rng), n(rng));
  }
  // Band-limit to |k| <= 1.
  Mat low = fourier_multiplier(g, [](double k) { return cplx(std::abs(k) <= 1.0 ? 1.0 : 0.0, 0.0); });
  u = low * u;
  v = low * v;
  const double w1 = 0.2, w2 = 0.15;
  auto phi = [&](double t) { return CVec(u * std::cos(w1 * t) + v * std::sin(w2 * t)); };
  auto dphi = [&](double t) { return CVec(-w1 * u * std::sin(w1 * t) + w2 * v * std::cos(w2 * t)); };
  auto ddphi = [&](double t) { return CVec(-w1 * w1 * u * std::cos(w1 * t) - w2 * w2 * v * std::sin(w2 * t)); };
  const TimeGrid& tg = md->times;
  Mat H2 = sobolev_weight(g, 2);
  for (const OperatorFamily* bf : {&s.b_plus, &s.b_minus}) {
    const OperatorFamily& R = bf == &s.b_plus ? s.residual_plus : s.residual_minus;
    std::vector<Mat> psi(tg.count);
    for (int k = 0; k < tg.count; ++k) psi[k] = dphi(tg.at(k)) - kI * (*bf)[k] * phi(tg.at(k));
    std::vector<Mat> dpsi = time_derivative(psi, tg.dt, 4);
    double worst = 0;
    for (int k = 5; k + 5 < tg.count; k += 7) {
      const double t = tg.at(k);
      const Mat r = md->fric(k).cast<cplx>().asDiagonal();
      CVec lhs = dpsi[k] + kI * (*bf)[k] * psi[k] + r * psi[k];
      CVec P = ddphi(t) + r * dphi(t) + md->a[k] * phi(t);
      worst = std::max(worst, (lhs - P + R[k] * phi(t)).norm() / (H2 * phi(t)).norm());
    }
    EXPECT_LE(worst, 1e-8);
  }
}

TEST(BuildPack, StaticSingleModeHandComputation) {
  auto md = model_for("static", 8, 2 * M_PI, 2.0, 0.5, {{"m", 1.0}});
  auto sol = std::make_shared<RiccatiSolution>(riccati_solve(*md, {2, 0.5}));
  auto pack = build_pack(sol, md);
  const SpatialGrid& g = *md->grid;
  const int n = 8;
  Mat F2 = Mat::Zero(2 * n, 2 * n);
  F2.topLeftCorner(n, n) = g.fourier;
  F2.bottomRightCorner(n, n) = g.fourier;
  Mat That = F2 * pack->T(0) * F2.adjoint();
  Mat Hhat = F2 * pack->H_ad(0) * F2.adjoint();
  for (int j = 0; j < n; ++j) {
    const double w = std::sqrt(g.wavenumbers(j) * g.wavenumbers(j) + 1.0);
    const double s = 1.0 / std::sqrt(2 * w);
    Eigen::Matrix2cd expected;
    expected << -kI * s, kI * s, -kI * w * s, -kI * w * s;
    Eigen::Matrix2cd got;
    got << That(j, j), That(j, n + j), That(n + j, j), That(n + j, n + j);
    EXPECT_LE((got - expected).norm(), 1e-12) << "mode " << j;
    EXPECT_NEAR(Hhat(j, j).real(), w, 1e-12);
    EXPECT_NEAR(Hhat(n + j, n + j).real(), -w, 1e-12);
  }
  EXPECT_LE(pack->symplectic_form_defect(), 1e-12);
  EXPECT_LE(pack->inverse_defect(), 1e-12);
  EXPECT_LE(spectral_norm(pack->V_ad(0)), 1e-12);
  EXPECT_LE((pack->H_ad_out() - pack->H_ad(0)).norm(), 1e-11);
}

TEST(BuildPack, TimeDependentIdentities) {
  auto md = model_for("sech", 16, 8 * M_PI, 20.0, 0.05);
  auto sol = std::make_shared<RiccatiSolution>(riccati_solve(*md, {3, 0.5}));
  auto pack = build_pack(sol, md);
  EXPECT_LE(pack->inverse_defect(), 1e-8);
  EXPECT_LE(pack->symplectic_form_defect(), 1e-8);
  EXPECT_LE(pack->hd_selfadjoint_defect(), 1e-10);

  // H^ad agrees with T^{-1} H T + i T^{-1} d_t T computed by differencing T.
  const TimeGrid& tg = md->times;
  std::vector<Mat> T(tg.count);
  for (int k = 0; k < tg.count; ++k) T[k] = pack->T(k);
  std::vector<Mat> dT = time_derivative(T, tg.dt, 6);
  double worst = 0;
  for (int k = 10; k + 10 < tg.count; k += 40) {
    Mat oracle = pack->T_inv(k) * pack->H(k) * T[k] + kI * pack->T_inv(k) * dT[k];
    worst = std::max(worst, spectral_norm(oracle - pack->H_ad(k)) / spectral_norm(pack->H_ad(k)));
  }
  EXPECT_LE(worst, 1e-7);

  // The coupling H^d - H^ad decays at least like <t>^{-(1+delta)} (one-sided 30% band).
  std::vector<double> ts, vs;
  for (double t : {2.5, 5.0, 10.0, 20.0}) {
    ts.push_back(t);
    vs.push_back(spectral_norm(pack->V_ad(tg.nearest(t))));
  }
  EXPECT_LE(loglog_slope(ts, vs), -0.7 * (1.0 + md->delta));
}

TEST(FractionalPower, Examples) {
  auto md = model_for("sech", 16, 8 * M_PI, 10.0, 0.5);
  const SpatialGrid& g = *md->grid;
  FractionalPowerReport same = fractional_power_diff_check(g, md->a, md->a, md->density, 0.5, 0, 2.0);
  EXPECT_EQ(same.sup, 0.0);
  EXPECT_TRUE(same.bounded);

  // a1 = a2 + <t>^{-delta} (rank-one smooth bump).
  const double delta = 2.0;
  CVec bump(16);
  for (int j = 0; j < 16; ++j) bump(j) = std::exp(-std::pow(g.centered_points()(j), 2));
  OperatorFamily a1 = md->a;
  for (int k = 0; k < a1.size(); ++k) {
    const RVec& d = md->dens(k);
    Mat B = bump * (bump.adjoint() * d.cast<cplx>().asDiagonal());
    a1.slices[k] += std::pow(japanese(md->times.at(k)), -delta) * B;
  }
  FractionalPowerReport half = fractional_power_diff_check(g, a1, md->a, md->density, 0.5, 0, delta);
  EXPECT_TRUE(half.bounded);
  EXPECT_GT(half.sup, 0.0);

  FractionalPowerReport lin = fractional_power_diff_check(g, a1, md->a, md->density, 1.0, 0, 0.0);
  const int k = md->times.nearest(lin.times[0]);
  SmoothingGauge direct = smoothing_gauge(g, a1[k] - md->a[k], {0});
  EXPECT_NEAR(lin.weighted[0], direct.values.at(0), 1e-10 * direct.values.at(0));
}

}  // namespace
}  // namespace kgd
