#include "kgd/diagonalization.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace kgd {

namespace {

const RVec& slice_density(const std::vector<RVec>& d, int k) { return d.size() == 1 ? d[0] : d[k]; }

// d_t of a family; constant families have zero derivative.
std::vector<Mat> family_derivative(const std::vector<Mat>& f, double dt, int order) {
  if (f.size() == 1) return {Mat::Zero(f[0].rows(), f[0].cols())};
  return time_derivative(f, dt, order);
}

Mat diag_r(const RVec& r) { return r.cast<cplx>().asDiagonal(); }

Mat blocks(const Mat& a, const Mat& b, const Mat& c, const Mat& d) {
  const Eigen::Index n = a.rows();
  Mat M(2 * n, 2 * n);
  M << a, b, c, d;
  return M;
}

double family_max_diff(const std::vector<Mat>& a, const std::vector<Mat>& b) {
  double m = 0.0;
  for (size_t k = 0; k < a.size(); ++k) m = std::max(m, (a[k] - b[k]).norm());
  return m;
}

}  // namespace

Mat q_form(int n) {
  Mat I = Mat::Identity(n, n), Z = Mat::Zero(n, n);
  return blocks(Z, I, I, Z);
}
Mat q_ad_form(int n) {
  Mat I = Mat::Identity(n, n), Z = Mat::Zero(n, n);
  return blocks(I, Z, Z, -I);
}
Mat pi_plus(int n) {
  Mat I = Mat::Identity(n, n), Z = Mat::Zero(n, n);
  return blocks(I, Z, Z, Z);
}
Mat pi_minus(int n) {
  Mat I = Mat::Identity(n, n), Z = Mat::Zero(n, n);
  return blocks(Z, Z, Z, I);
}

Mat sqrt_operator(const Mat& a, const RVec& density) {
  RVec ev = weighted_eigenvalues(a, density);
  if (!(ev(0) > 0.0)) {
    std::ostringstream os;
    os << "sqrt_operator: spectrum not positive (smallest eigenvalue " << ev(0) << ")";
    throw KgdError(os.str());
  }
  return weighted_function(a, density, [](double x) { return std::sqrt(x); });
}

OperatorMatrix sqrt_operator(const OperatorMatrix& a) {
  return OperatorMatrix{sqrt_operator(a.entries, a.product_context.density), a.product_context};
}

CutoffResult low_freq_cutoff(const OperatorFamily& a, const std::vector<RVec>& density, double c0,
                             const SpatialGrid* grid, const std::vector<double>& orders) {
  CutoffResult res;
  res.floored = a;
  const int S = a.size();
  res.modification_norm.assign(S, 0.0);
  res.modification.assign(S, SmoothingGauge{});
  for (int k = 0; k < S; ++k) {
    const RVec& d = slice_density(density, k);
    if (weighted_eigenvalues(a.slices[k], d)(0) >= c0) continue;
    Mat f = weighted_function(a.slices[k], d, [c0](double x) { return std::max(x, c0); });
    Mat diff = f - a.slices[k];
    res.floored.slices[k] = f;
    res.modification_norm[k] = spectral_norm(diff);
    if (grid) res.modification[k] = smoothing_gauge(*grid, diff, orders);
    ++res.modified_slices;
  }
  return res;
}

RiccatiSolution riccati_solve(const ModelOperatorData& model, const RiccatiOptions& opts) {
  if (opts.order < 0) throw KgdError("riccati_solve: order must be >= 0");
  if (!(opts.gap_floor > 0)) throw KgdError("riccati_solve: gap_floor must be positive");
  const int S = model.a.size();
  const double dt = model.times.dt;
  const double c0 = opts.cutoff < 0 ? 0.5 * model.mass_floor : opts.cutoff;

  RiccatiSolution sol;
  sol.order = opts.order;
  sol.gap_floor = opts.gap_floor;
  sol.density = model.density;

  CutoffResult cut = low_freq_cutoff(model.a, model.density, c0);
  for (double m : cut.modification_norm) sol.max_cutoff_modification = std::max(sol.max_cutoff_modification, m);

  std::vector<Mat> eps(S), eps_inv(S);
  std::vector<double> eps_min(S);
  for (int k = 0; k < S; ++k) {
    const RVec& d = slice_density(model.density, k);
    eps[k] = sqrt_operator(cut.floored.slices[k], d);
    eps_inv[k] = weighted_function(cut.floored.slices[k], d, [](double x) { return 1.0 / std::sqrt(x); });
    eps_min[k] = std::sqrt(weighted_eigenvalues(cut.floored.slices[k], d)(0));
  }
  std::vector<Mat> deps = family_derivative(eps, dt, opts.fd_order);

  std::vector<Mat> a0(S);
  for (int k = 0; k < S; ++k)
    a0[k] = 0.5 * kI * (eps_inv[k] * deps[k] + eps_inv[k] * diag_r(model.fric(k)) * eps[k]);

  // Fixed point b_n = a0 + F(b_{n-1}), F(c) = eps^{-1}(i c' + [eps, c] + i r c - c^2)/2.
  auto F = [&](const std::vector<Mat>& c) {
    std::vector<Mat> dc = family_derivative(c, dt, opts.fd_order);
    std::vector<Mat> out(S);
    for (int k = 0; k < S; ++k) {
      Mat inner = kI * dc[k] + eps[k] * c[k] - c[k] * eps[k] + kI * diag_r(model.fric(k)) * c[k] - c[k] * c[k];
      out[k] = a0[k] + 0.5 * eps_inv[k] * inner;
    }
    return out;
  };
  std::vector<Mat> prev2, prev = a0, cur = a0;
  int growth = 0;
  double last_inc = -1.0;
  for (int n = 1; n <= opts.order; ++n) {
    std::vector<Mat> next = F(prev);
    double inc = family_max_diff(next, prev);
    sol.increments.push_back(inc);
    growth = (last_inc >= 0 && inc > last_inc) ? growth + 1 : 0;
    if (growth >= 2) {
      // The increment grew twice in a row: keep the iterate before the growth began.
      sol.diverged = true;
      cur = prev2;
      sol.iterations_done = n - 2;
      break;
    }
    last_inc = inc;
    prev2 = std::move(prev);
    prev = std::move(next);
    cur = prev;
    sol.iterations_done = n;
  }

  // b = eps + b_p with the Hermitian part floored.
  sol.epsilon.times = sol.b_plus.times = sol.b_minus.times = model.times;
  sol.epsilon.declared_order = sol.b_plus.declared_order = sol.b_minus.declared_order = 1.0;
  sol.epsilon.slices = eps;
  sol.b_plus.slices.resize(S);
  sol.b_minus.slices.resize(S);
  sol.achieved_gap = std::numeric_limits<double>::infinity();
  for (int k = 0; k < S; ++k) {
    const RVec& d = slice_density(model.density, k);
    Mat b = eps[k] + cur[k];
    Mat s = b + weighted_adjoint(b, d);
    const double g = opts.gap_floor * 2.0 * eps_min[k];
    if (weighted_eigenvalues(s, d)(0) < g) {
      Mat s_reg = weighted_function(s, d, [g](double x) { return std::max(x, g); });
      b += 0.5 * (s_reg - s);
    }
    sol.b_plus.slices[k] = b;
    sol.b_minus.slices[k] = -weighted_adjoint(b, d);
    Mat X = b - sol.b_minus.slices[k];
    sol.achieved_gap = std::min(sol.achieved_gap, weighted_eigenvalues(X, d)(0) / (2.0 * eps_min[k]));
  }

  auto residual = [&](const OperatorFamily& bf) {
    OperatorFamily R;
    R.times = model.times;
    R.declared_order = -1e9;
    R.declared_decay = 1.0 + model.delta;
    std::vector<Mat> db = family_derivative(bf.slices, dt, opts.fd_order);
    R.slices.resize(S);
    for (int k = 0; k < S; ++k) {
      const Mat& b = bf.slices[k];
      R.slices[k] = kI * db[k] - b * b + model.a.slices[k] + kI * diag_r(model.fric(k)) * b;
    }
    return R;
  };
  sol.residual_plus = residual(sol.b_plus);
  sol.residual_minus = residual(sol.b_minus);
  return sol;
}

DiagonalizationPack::DiagonalizationPack(std::shared_ptr<const ModelOperatorData> model,
                                         std::shared_ptr<const RiccatiSolution> sol, int fd_order)
    : model_(std::move(model)), sol_(std::move(sol)) {
  const RiccatiSolution& s = *sol_;
  const int S = s.b_plus.size();
  n_ = static_cast<int>(s.b_plus.slices[0].rows());
  const double dt = model_->times.dt;

  std::vector<Mat> x_half(S);
  x_mhalf_.resize(S);
  for (int k = 0; k < S; ++k) {
    const RVec& d = model_->dens(k);
    Mat X = s.b_plus.slices[k] - s.b_minus.slices[k];
    if (!(weighted_eigenvalues(X, d)(0) > 0))
      throw KgdError("build_pack: b+ - b- is not positive; gap invariant violated");
    x_half[k] = weighted_function(X, d, [](double x) { return std::sqrt(x); });
    x_mhalf_[k] = weighted_function(X, d, [](double x) { return 1.0 / std::sqrt(x); });
  }
  std::vector<Mat> dxm = family_derivative(x_mhalf_, dt, fd_order);

  H_ad_.resize(S);
  hd_plus_.resize(S);
  hd_minus_.resize(S);
  r_b_plus_.times = r_b_minus_.times = model_->times;
  r_b_plus_.slices.resize(S);
  r_b_minus_.slices.resize(S);
  for (int k = 0; k < S; ++k) {
    const RVec& d = model_->dens(k);
    const Mat& bp = s.b_plus.slices[k];
    const Mat& bm = s.b_minus.slices[k];
    const Mat& Xm = x_mhalf_[k];
    const Mat& Xh = x_half[k];
    const Mat Dm = kI * Xh * dxm[k];
    const Mat Rp = Xm * s.residual_plus.slices[k] * Xm;
    const Mat Rm = Xm * s.residual_minus.slices[k] * Xm;
    const Mat H11 = Xh * bp * Xm + Dm + Rp;
    const Mat H22 = Xh * bm * Xm + Dm - Rm;
    H_ad_[k] = blocks(H11, -Rm, Rp, H22);
    const Mat half_ir = 0.5 * kI * diag_r(model_->fric(k));
    hd_plus_[k] = weighted_hermitian_part(H11, d) + half_ir;
    hd_minus_[k] = weighted_hermitian_part(H22, d) + half_ir;
    const Mat ir = kI * diag_r(model_->fric(k));
    r_b_plus_.slices[k] = ir + (Xm * bp - bp * Xm) - kI * dxm[k] * Xh;
    r_b_minus_.slices[k] = ir + (Xm * bm - bm * Xm) - kI * dxm[k] * Xh;
  }
  eps_out_ = sqrt_operator(model_->a_out, model_->density_out);
  eps_in_ = sqrt_operator(model_->a_in, model_->density_in);
}

Mat DiagonalizationPack::T(int k) const {
  const RiccatiSolution& s = *sol_;
  const Mat& Xm = xm(k);
  return -kI * blocks(Xm, -Xm, s.b_plus[k] * Xm, -s.b_minus[k] * Xm);
}

Mat DiagonalizationPack::T_inv(int k) const {
  const RiccatiSolution& s = *sol_;
  const Mat& Xm = xm(k);
  return kI * blocks(-Xm * s.b_minus[k], Xm, -Xm * s.b_plus[k], Xm);
}

Mat DiagonalizationPack::H_d(int k) const {
  Mat Z = Mat::Zero(n_, n_);
  return blocks(H_d_block(k, 0), Z, Z, H_d_block(k, 1));
}

const Mat& DiagonalizationPack::H_d_block(int k, int j) const {
  const auto& v = j == 0 ? hd_plus_ : hd_minus_;
  return v.size() == 1 ? v[0] : v[k];
}

Mat DiagonalizationPack::H(int k) const {
  Mat Z = Mat::Zero(n_, n_), I = Mat::Identity(n_, n_);
  return blocks(Z, I, model_->a[k], kI * diag_r(model_->fric(k)));
}

namespace {
Mat asymptotic_T(const Mat& eps, const RVec& d, bool inverse) {
  Mat Xm = weighted_function(2.0 * eps, d, [](double x) { return 1.0 / std::sqrt(x); });
  if (!inverse) return -kI * blocks(Xm, -Xm, eps * Xm, eps * Xm);
  return kI * blocks(Xm * eps, Xm, -Xm * eps, Xm);
}
}  // namespace

Mat DiagonalizationPack::T_out() const { return asymptotic_T(eps_out_, model_->density_out, false); }
Mat DiagonalizationPack::T_out_inv() const { return asymptotic_T(eps_out_, model_->density_out, true); }
Mat DiagonalizationPack::T_in() const { return asymptotic_T(eps_in_, model_->density_in, false); }
Mat DiagonalizationPack::T_in_inv() const { return asymptotic_T(eps_in_, model_->density_in, true); }

Mat DiagonalizationPack::H_ad_out() const {
  Mat Z = Mat::Zero(n_, n_);
  return blocks(eps_out_, Z, Z, -eps_out_);
}
Mat DiagonalizationPack::H_ad_in() const {
  Mat Z = Mat::Zero(n_, n_);
  return blocks(eps_in_, Z, Z, -eps_in_);
}

double DiagonalizationPack::inverse_defect() const {
  double m = 0.0;
  const Mat I = Mat::Identity(2 * n_, 2 * n_);
  for (size_t k = 0; k < x_mhalf_.size(); ++k)
    m = std::max(m, spectral_norm(T(static_cast<int>(k)) * T_inv(static_cast<int>(k)) - I));
  return m;
}

double DiagonalizationPack::symplectic_form_defect() const {
  double m = 0.0;
  const Mat q = q_form(n_), qad = q_ad_form(n_);
  for (size_t k = 0; k < x_mhalf_.size(); ++k) {
    Mat Tk = T(static_cast<int>(k));
    m = std::max(m, spectral_norm(weighted_adjoint(Tk, model_->dens(static_cast<int>(k))) * q * Tk - qad));
  }
  return m;
}

double DiagonalizationPack::hd_selfadjoint_defect() const {
  double m = 0.0;
  for (size_t k = 0; k < hd_plus_.size(); ++k) {
    const int kk = static_cast<int>(k);
    const RVec& d = model_->dens(kk);
    const Mat half_ir = 0.5 * kI * diag_r(model_->fric(kk));
    for (int j = 0; j < 2; ++j) {
      Mat A = H_d_block(kk, j) - half_ir;
      m = std::max(m, spectral_norm(A - weighted_adjoint(A, d)));
    }
  }
  return m;
}

std::shared_ptr<DiagonalizationPack> build_pack(std::shared_ptr<const RiccatiSolution> sol,
                                                std::shared_ptr<const ModelOperatorData> model) {
  return std::make_shared<DiagonalizationPack>(std::move(model), std::move(sol));
}

FractionalPowerReport fractional_power_diff_check(const SpatialGrid& grid, const OperatorFamily& a1,
                                                  const OperatorFamily& a2,
                                                  const std::vector<RVec>& density, double alpha,
                                                  double k, double delta) {
  FractionalPowerReport rep;
  const int S = std::max(a1.size(), a2.size());
  const TimeGrid& tg = a1.size() >= a2.size() ? a1.times : a2.times;
  const double s = 2.0 * (alpha - 1.0) + k;
  const Mat W = sobolev_weight(grid, -s);
  auto power = [alpha](double x) {
    if (!(x > 0)) throw KgdError("fractional_power_diff_check: operator not positive");
    return std::pow(x, alpha);
  };
  int arg = 0;
  for (int j = 0; j < S; ++j) {
    const RVec& d = slice_density(density, j);
    const double t = S == 1 ? 0.0 : tg.at(j);
    Mat D = weighted_function(a1[j], d, power) - weighted_function(a2[j], d, power);
    double v = std::pow(japanese(t), delta) * spectral_norm(W * D);
    rep.times.push_back(t);
    rep.weighted.push_back(v);
    if (v > rep.sup) {
      rep.sup = v;
      arg = j;
    }
  }
  {
    const RVec& d = slice_density(density, arg);
    Mat D = weighted_function(a1[arg], d, power) - weighted_function(a2[arg], d, power);
    rep.gauge_at_sup = smoothing_gauge(grid, D, {0, 1, 2, 3});
  }
  // Bounded: finite, and the outer quarter of the window does not exceed the inner sup.
  double inner = 0.0, outer = 0.0;
  for (int j = 0; j < S; ++j) {
    const double frac = S == 1 ? 0.0 : std::abs(2.0 * j / (S - 1) - 1.0);
    double& bucket = frac > 0.75 ? outer : inner;
    bucket = std::max(bucket, rep.weighted[j]);
  }
  rep.bounded = std::isfinite(rep.sup) && (rep.sup == 0.0 || outer <= 2.0 * inner);
  return rep;
}

}  // namespace kgd
