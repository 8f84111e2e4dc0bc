#include "kgd/states.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace kgd {

std::string to_string(Direction d) { return d == Direction::out ? "out" : "in"; }

namespace {

double min_eig_form(const Mat& lambda, const RVec& bdens) {
  return weighted_eigenvalues(weighted_hermitian_part(lambda, bdens), bdens).minCoeff();
}

// Rows pi_0 of a 2N x 2N block matrix, and columns pi_1^*.
Mat top_rows(const Mat& A) { return A.topRows(A.rows() / 2); }
Mat right_cols(const Mat& A) { return A.rightCols(A.cols() / 2); }

}  // namespace

CovarianceReport CovariancePair::report() const {
  CovarianceReport r;
  const int n2 = static_cast<int>(c_plus.rows());
  const Mat one = Mat::Identity(n2, n2);
  r.complement_defect = spectral_norm(c_plus + c_minus - one);
  r.idempotency_defect =
      std::max(spectral_norm(c_plus * c_plus - c_plus), spectral_norm(c_minus * c_minus - c_minus));
  const RVec bd = block_density(density);
  const Mat q = q_form(n2 / 2);
  r.min_eig_lambda_plus = min_eig_form(q * c_plus, bd);
  r.min_eig_lambda_minus = min_eig_form(-(q * c_minus), bd);
  return r;
}

CovariancePair reference_covariances(const DiagonalizationPack& pack, double t0) {
  const int k = pack.times().nearest(t0);
  const int n = pack.dim();
  CovariancePair p;
  const Mat T = pack.T(k), Ti = pack.T_inv(k);
  p.c_plus = T * pi_plus(n) * Ti;
  p.c_minus = T * pi_minus(n) * Ti;
  p.reference_time = pack.times().at(k);
  p.provenance = "ref";
  p.density = pack.model().dens(k);
  return p;
}

std::pair<Mat, Mat> transfer_covariances(const Mat& b_plus, const Mat& b_minus) {
  // T pi+ T^{-1} = [[-X^{-1} b-, X^{-1}], [-b+ X^{-1} b-, b+ X^{-1}]], X = b+ - b-,
  // and pi- likewise with the roles of b+ and b- exchanged.
  const int n = static_cast<int>(b_plus.rows());
  const Mat Xi = (b_plus - b_minus).partialPivLu().inverse();
  Mat cp(2 * n, 2 * n), cm(2 * n, 2 * n);
  cp << -Xi * b_minus, Xi, -b_plus * Xi * b_minus, b_plus * Xi;
  cm << Xi * b_plus, -Xi, b_minus * Xi * b_plus, -b_minus * Xi;
  return {cp, cm};
}

CovariancePair vacuum_covariances(const OperatorMatrix& a_static) {
  const RVec& dens = a_static.product_context.density;
  const int n = static_cast<int>(a_static.entries.rows());
  // Eigenvectors of [[0, 1], [a, 0]]: (v, +-w v) for a v = w^2 v.
  WeightedSpectral sp = WeightedSpectral::of(a_static.entries, dens);
  if (sp.values.minCoeff() <= 0.0) {
    std::ostringstream os;
    os << "vacuum_covariances: static operator is not positive (min eigenvalue " << sp.values.minCoeff() << ")";
    throw KgdError(os.str());
  }
  const RVec w = sp.values.cwiseSqrt();
  Mat R(2 * n, 2 * n);
  R.topLeftCorner(n, n) = sp.right;
  R.topRightCorner(n, n) = sp.right;
  R.bottomLeftCorner(n, n) = sp.right * w.cast<cplx>().asDiagonal();
  R.bottomRightCorner(n, n) = -(sp.right * w.cast<cplx>().asDiagonal());
  const Mat Rinv = R.partialPivLu().inverse();
  CovariancePair p;
  p.c_plus = R.leftCols(n) * Rinv.topRows(n);
  p.c_minus = R.rightCols(n) * Rinv.bottomRows(n);
  p.provenance = "vacuum";
  p.density = dens;
  const Mat eps = sp.apply([](double x) { return cplx(std::sqrt(x)); });
  auto [tp, tm] = transfer_covariances(eps, -eps);
  p.construction_defect = std::max(spectral_norm(tp - p.c_plus), spectral_norm(tm - p.c_minus));
  return p;
}

CovariancePair vacuum_covariances(const ModelOperatorData& model, Direction dir) {
  const bool out = dir == Direction::out;
  CovariancePair p = vacuum_covariances(
      OperatorMatrix{out ? model.a_out : model.a_in, WeightedProduct{out ? model.density_out : model.density_in}});
  p.provenance = "vacuum_" + to_string(dir);
  return p;
}

CovariancePair evolve_covariances(const CovariancePair& pair, const Propagator& U, const RVec& density_t) {
  if (std::abs(U.s - pair.reference_time) > 1e-9 * std::max(1.0, std::abs(U.s)))
    throw KgdError("evolve_covariances: propagator starts at " + std::to_string(U.s) + ", pair is at " +
                   std::to_string(pair.reference_time));
  const Mat Ui = U.block.partialPivLu().inverse();
  CovariancePair p;
  p.c_plus = U.block * pair.c_plus * Ui;
  p.c_minus = U.block * pair.c_minus * Ui;
  p.reference_time = U.t;
  p.provenance = "evolved";
  p.density = density_t;
  return p;
}

ScatteringCovariances scattering_covariances(Direction dir, const ModelOperatorData& model,
                                             const PropagationTable& U, const CovariancePair& vacuum,
                                             const std::vector<double>& schedule, double tol,
                                             const DiagonalizationPack* pack) {
  if (std::abs(U.times().at(U.ref_index())) > 1e-12)
    throw KgdError("scattering_covariances: propagation table must be referenced at t = 0");
  const double sgn = dir == Direction::out ? 1.0 : -1.0;
  const int n = static_cast<int>(vacuum.c_plus.rows()) / 2;
  ScatteringCovariances res;
  res.tolerance = tol;
  res.has_frame = pack != nullptr;
  std::vector<std::pair<Mat, Mat>> iterates, frame;
  for (double h : schedule) {
    const double t = sgn * h;
    if (!U.times().contains(t)) break;
    const int k = U.index(t);
    const Mat fwd = U.forward(k), bwd = U.backward(k);
    iterates.emplace_back(bwd * vacuum.c_plus * fwd, bwd * vacuum.c_minus * fwd);
    if (pack) {
      const Mat L = bwd * pack->T(k), R = pack->T_inv(k) * fwd;
      frame.emplace_back(L * pi_plus(n) * R, L * pi_minus(n) * R);
    }
    res.horizons.push_back(h);
  }
  if (iterates.empty()) throw KgdError("scattering_covariances: no horizon of the schedule lies on the time grid");
  auto diffs = [](const std::vector<std::pair<Mat, Mat>>& it) {
    std::vector<double> d;
    for (size_t j = 0; j + 1 < it.size(); ++j)
      d.push_back(std::max(spectral_norm(it[j + 1].first - it[j].first),
                           spectral_norm(it[j + 1].second - it[j].second)));
    return d;
  };
  res.differences = diffs(iterates);
  if (res.differences.size() >= 2) {
    std::vector<double> x(res.horizons.begin(), res.horizons.end() - 1);
    std::vector<double> jx;
    for (double h : x) jx.push_back(japanese(h));
    res.fitted_exponent = -loglog_slope(jx, res.differences);
  }
  res.converged = !res.differences.empty() && res.differences.back() <= tol;
  auto make_pair = [&](const std::pair<Mat, Mat>& c, const std::string& prov) {
    CovariancePair p;
    p.c_plus = c.first;
    p.c_minus = c.second;
    p.reference_time = 0.0;
    p.provenance = prov;
    p.density = model.dens(U.ref_index());
    return p;
  };
  res.limit = make_pair(iterates.back(), to_string(dir));
  if (pack) {
    res.frame_differences = diffs(frame);
    res.frame_limit = make_pair(frame.back(), to_string(dir) + "_frame");
    res.estimator_gap = std::max(spectral_norm(res.limit.c_plus - res.frame_limit.c_plus),
                                 spectral_norm(res.limit.c_minus - res.frame_limit.c_minus));
  }
  return res;
}

TwoPointKernel two_point_kernel(const CovariancePair& pair, const PropagationTable& U,
                                const std::vector<double>& t_list, const std::vector<double>& s_list,
                                int sign) {
  const int kref = U.ref_index();
  if (std::abs(U.times().at(kref) - pair.reference_time) > 1e-9)
    throw KgdError("two_point_kernel: table reference time differs from the covariance reference time");
  const Mat& c = sign > 0 ? pair.c_plus : pair.c_minus;
  TwoPointKernel K;
  K.t_list = t_list;
  K.s_list = s_list;
  K.sign = sign;
  std::vector<Mat> left, right;
  for (double t : t_list) left.push_back(double(sign) * top_rows(U.forward(U.index(t))) * c);
  for (double s : s_list) right.push_back(right_cols(U.backward(U.index(s))));
  K.blocks.reserve(t_list.size() * s_list.size());
  for (const auto& l : left)
    for (const auto& r : right) K.blocks.push_back(l * r);
  return K;
}

Mat causal_kernel(const PropagationTable& U, int k_t, int k_s) {
  return -kI * top_rows(U.forward(k_t)) * right_cols(U.backward(k_s));
}

double causal_identity_defect(const TwoPointKernel& plus, const TwoPointKernel& minus,
                              const PropagationTable& U) {
  if (plus.t_list != minus.t_list || plus.s_list != minus.s_list)
    throw KgdError("causal_identity_defect: kernels sampled on different grids");
  double worst = 0.0;
  for (size_t i = 0; i < plus.t_list.size(); ++i)
    for (size_t j = 0; j < plus.s_list.size(); ++j) {
      const Mat G = causal_kernel(U, U.index(plus.t_list[i]), U.index(plus.s_list[j]));
      worst = std::max(worst, spectral_norm(plus.at(i, j) - minus.at(i, j) - kI * G));
    }
  return worst;
}

KernelResidual two_point_residual(const CovariancePair& pair, const PropagationTable& U,
                                  const ModelOperatorData& model, const std::vector<double>& s_list,
                                  int sign, int stride, int stencil_order) {
  const Mat& c = sign > 0 ? pair.c_plus : pair.c_minus;
  const TimeGrid& tg = U.times();
  const double dt = tg.dt;
  const int half = stencil_order / 2 + 1;
  std::vector<Mat> right;
  for (double s : s_list) right.push_back(right_cols(U.backward(U.index(s))));
  // Lambda(t, s) = R(t) B(s) with R(t) = pi_0 U(t, 0) c, so P acts on R alone.
  auto R = [&](int k) { return Mat(double(sign) * top_rows(U.forward(k)) * c); };
  KernelResidual res;
  for (int k = half; k < tg.count - half; k += stride) {
    const Stencil s2 = derivative_stencil(k, tg.count, 2, stencil_order);
    const Stencil s1 = derivative_stencil(k, tg.count, 1, stencil_order);
    std::map<int, Mat> cache;
    auto Rc = [&](int off) -> const Mat& {
      auto it = cache.find(off);
      if (it == cache.end()) it = cache.emplace(off, R(k + off)).first;
      return it->second;
    };
    Mat d2 = Mat::Zero(Rc(0).rows(), Rc(0).cols()), d1 = d2;
    for (size_t i = 0; i < s2.offsets.size(); ++i) d2 += (s2.weights[i] / (dt * dt)) * Rc(s2.offsets[i]);
    for (size_t i = 0; i < s1.offsets.size(); ++i) d1 += (s1.weights[i] / dt) * Rc(s1.offsets[i]);
    const Mat PR = d2 + model.fric(k).cast<cplx>().asDiagonal() * d1 + model.a[k] * Rc(0);
    const Mat& Rk = Rc(0);
    for (const auto& B : right) {
      res.max_residual = std::max(res.max_residual, spectral_norm(PR * B));
      res.max_kernel = std::max(res.max_kernel, spectral_norm(Rk * B));
      ++res.samples;
    }
  }
  return res;
}

FormSpectrum two_point_form_spectrum(const TwoPointKernel& kernel, const ModelOperatorData& model) {
  if (kernel.t_list != kernel.s_list) throw KgdError("two_point_form_spectrum: needs t_list == s_list");
  const int m = static_cast<int>(kernel.t_list.size());
  const int n = static_cast<int>(kernel.blocks.front().rows());
  // Form matrix D_t Lambda(t, s); Hermitian PSD for a positive two-point function.
  Mat M(m * n, m * n);
  for (int i = 0; i < m; ++i) {
    const RVec& d = model.dens(model.times.nearest(kernel.t_list[i]));
    for (int j = 0; j < m; ++j) M.block(i * n, j * n, n, n) = d.cast<cplx>().asDiagonal() * kernel.at(i, j);
  }
  FormSpectrum fs;
  fs.hermiticity_defect = spectral_norm(M - M.adjoint()) / std::max(1e-300, spectral_norm(M));
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (M + M.adjoint()), Eigen::EigenvaluesOnly);
  fs.min_eig = es.eigenvalues().minCoeff();
  fs.max_eig = es.eigenvalues().maxCoeff();
  return fs;
}

namespace {

// Energies on the e^{+i w t} half-line and in total, with the bin of the peak.
struct HalfLine {
  double positive = 0.0, total = 0.0;
  int peak = 0;
};

HalfLine half_line_energy(const CVec& samples, bool taper, int sign) {
  const int n = static_cast<int>(samples.size());
  std::vector<cplx> in(n), out;
  for (int j = 0; j < n; ++j) {
    const double w = taper ? 0.5 - 0.5 * std::cos(2 * M_PI * j / n) : 1.0;
    in[j] = w * samples[j];
  }
  Eigen::FFT<double> fft;
  fft.fwd(out, in);
  HalfLine h;
  double best = -1;
  for (int k = 1; k < n; ++k) {
    if (k == n / 2) continue;
    const double e = std::norm(out[k]);
    const bool pos = (k < n / 2) == (sign > 0);
    h.total += e;
    if (pos) h.positive += e;
    if (e > best) {
      best = e;
      h.peak = k < n / 2 ? k : k - n;
    }
  }
  h.total += std::norm(out[0]) + std::norm(out[n / 2]);
  return h;
}

// FFT bin sign of e^{+i w t}, fixed once from an exactly known static mode.
int calibrated_sign() {
  static const int sign = [] {
    const int n = 512;
    CVec s(n);
    for (int j = 0; j < n; ++j) s[j] = std::exp(kI * 1.0 * (0.1 * j)) / 2.0;
    const HalfLine h = half_line_energy(s, true, +1);
    return h.positive > 0.5 * h.total ? +1 : -1;
  }();
  return sign;
}

}  // namespace

double positive_frequency_fraction(const CVec& samples, bool taper) {
  const HalfLine h = half_line_energy(samples, taper, calibrated_sign());
  return h.total > 0 ? h.positive / h.total : 1.0;
}

HadamardReport hadamard_frequency_proxy(const TwoPointKernel& kernel, const SpatialGrid& grid,
                                        const HadamardOptions& opts) {
  if (kernel.s_list.size() != 1) throw KgdError("hadamard_frequency_proxy: kernel must have exactly one s sample");
  const int m = static_cast<int>(kernel.t_list.size());
  if (m < 16) throw KgdError("hadamard_frequency_proxy: too few time samples");
  const double dts = kernel.t_list[1] - kernel.t_list[0];
  for (int i = 1; i < m; ++i)
    if (std::abs(kernel.t_list[i] - kernel.t_list[i - 1] - dts) > 1e-9)
      throw KgdError("hadamard_frequency_proxy: time samples must be uniform");
  HadamardReport rep;
  rep.window = m * dts;
  const double need = opts.min_oscillations * 2 * M_PI / opts.omega_min;
  if (rep.window < need * (1 - 1e-12)) {
    std::ostringstream os;
    os << "hadamard_frequency_proxy: sampling window " << rep.window << " holds fewer than "
       << opts.min_oscillations << " oscillations of the slowest mode; required window length " << need
       << " (" << static_cast<int>(std::ceil(need / dts)) << " samples at dt = " << dts << ")";
    throw KgdError(os.str());
  }
  const int sign = calibrated_sign() * kernel.sign;
  rep.calibrated_sign = calibrated_sign();
  const int n = grid.n_points;
  // Mode-diagonal entries in the Fourier basis.
  std::vector<Mat> hat(m);
  for (int i = 0; i < m; ++i) hat[i] = grid.fourier * kernel.at(i, 0) * grid.fourier.adjoint();
  const double resolved_freq = opts.resolve_factor * 2 * M_PI / rep.window;
  for (int j = 0; j < n; ++j) {
    CVec s(m);
    for (int i = 0; i < m; ++i) s[i] = hat[i](j, j);
    const HalfLine h = half_line_energy(s, opts.taper, sign);
    const double freq = std::abs(h.peak) * 2 * M_PI / rep.window;
    rep.wavenumbers.push_back(grid.wavenumbers[j]);
    rep.peak_frequency.push_back(freq);
    rep.positive_fraction.push_back(h.total > 0 ? h.positive / h.total : 1.0);
    rep.resolved.push_back(freq >= resolved_freq);
    if (rep.resolved.back()) rep.min_resolved_fraction = std::min(rep.min_resolved_fraction, rep.positive_fraction.back());
  }
  double pos = 0, tot = 0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      CVec s(m);
      for (int i = 0; i < m; ++i) s[i] = hat[i](a, b);
      const HalfLine h = half_line_energy(s, opts.taper, sign);
      pos += h.positive;
      tot += h.total;
    }
  rep.aggregate_fraction = tot > 0 ? pos / tot : 1.0;
  return rep;
}

}  // namespace kgd
