#include "kgd/scattering.hpp"

#include <cmath>

namespace kgd {

double MollerOperator::inverse_defect() const {
  return spectral_norm(w * w_inverse - Mat::Identity(w.rows(), w.cols()));
}

double MollerOperator::adjoint_defect() const { return spectral_norm(w_inverse - w_adjoint); }

namespace {

double fitted_decay(const std::vector<double>& t, const std::vector<double>& v) {
  if (t.size() < 2) return 0.0;
  std::vector<double> jt;
  for (double x : t) jt.push_back(japanese(x));
  return -loglog_slope(jt, v);
}

}  // namespace

MollerOperator moller(Direction dir, const PropagationTable& U, const BlockOperatorFamily& generator,
                      const BlockOperatorFamily& asymptotic, const Mat& q, const ModelOperatorData& model,
                      const std::vector<double>& schedule, double tol) {
  if (!asymptotic.time_independent || !asymptotic.static_exp)
    throw KgdError("moller: asymptotic generator must be time independent");
  if (std::abs(U.times().at(U.ref_index())) > 1e-12) throw KgdError("moller: propagation table must be referenced at t = 0");
  const double sgn = dir == Direction::out ? 1.0 : -1.0;
  const Mat H_as = asymptotic.at(0);
  MollerOperator W;
  W.direction = dir;
  W.tolerance = tol;
  std::vector<double> hs;
  std::vector<double> diffs;
  Mat prev;
  const RVec d0 = block_density(model.dens(U.ref_index()));
  const RVec das = block_density(dir == Direction::out ? model.density_out : model.density_in);
  for (double h : schedule) {
    const double t = sgn * h;
    if (!U.times().contains(t)) break;
    const int k = U.index(t);
    // Identification of the asymptotic product with the horizon-slice product
    // (q-isometric, tends to 1), so that W(t) is exactly q-unitary.
    const RVec j = das.cwiseQuotient(block_density(model.dens(k))).cwiseSqrt();
    const Mat as_fwd = asymptotic.static_exp(t);  // U_as(t, 0)
    const Mat Wt = U.backward(k) * j.cast<cplx>().asDiagonal() * as_fwd;
    W.cook_times.push_back(h);
    W.cook_integrand.push_back(spectral_norm(U.backward(k) * (generator.at(k) - H_as) * as_fwd));
    if (prev.size()) {
      diffs.push_back(spectral_norm(Wt - prev));
      W.history.emplace_back(hs.back(), diffs.back());
    }
    hs.push_back(h);
    prev = Wt;
    W.w = Wt;
    W.w_inverse = asymptotic.static_exp(-t) * j.cwiseInverse().cast<cplx>().asDiagonal() * U.forward(k);
    W.horizon_used = h;
  }
  if (hs.empty()) throw KgdError("moller: no horizon of the schedule lies on the time grid");
  W.difference_exponent = fitted_decay(std::vector<double>(hs.begin(), hs.end() - 1), diffs);
  W.cook_exponent = fitted_decay(W.cook_times, W.cook_integrand);
  W.converged = !diffs.empty() && diffs.back() <= tol;
  // q-adjoint from the asymptotic product to the t = 0 product.
  W.w_adjoint = q * das.cwiseInverse().cast<cplx>().asDiagonal() * W.w.adjoint() * d0.cast<cplx>().asDiagonal() * q;
  return W;
}

MollerOperator moller_ad(Direction dir, std::shared_ptr<const DiagonalizationPack> pack, const PropagationTable& Uad,
                         const std::vector<double>& schedule, double tol) {
  const bool out = dir == Direction::out;
  const ModelOperatorData& m = pack->model();
  BlockOperatorFamily as = asymptotic_ad_generator(out ? pack->eps_out() : pack->eps_in(),
                                                   out ? m.density_out : m.density_in, pack->times(),
                                                   out ? "H_ad_out" : "H_ad_in");
  MollerOperator W = moller(dir, Uad, ad_generator(pack), as, q_ad_form(pack->dim()), m, schedule, tol);
  W.level = "ad";
  return W;
}

MollerOperator moller_full(Direction dir, std::shared_ptr<const ModelOperatorData> model, const PropagationTable& U,
                           const std::vector<double>& schedule, double tol) {
  const bool out = dir == Direction::out;
  const RVec& das = out ? model->density_out : model->density_in;
  BlockOperatorFamily as = static_kg_generator(out ? model->a_out : model->a_in, das, model->times,
                                               out ? "H_out" : "H_in");
  MollerOperator W = moller(dir, U, full_generator(model), as, q_form(model->grid->n_points), *model, schedule, tol);
  W.level = "full";
  return W;
}

ChainReport chain_identity(const MollerOperator& w_full, const MollerOperator& w_ad, const DiagonalizationPack& pack,
                           const PropagationTable& U, const PropagationTable& Uad) {
  if (w_full.direction != w_ad.direction || w_full.horizon_used != w_ad.horizon_used)
    throw KgdError("chain_identity: Møller operators differ in direction or horizon");
  const bool out = w_full.direction == Direction::out;
  const double t = (out ? 1.0 : -1.0) * w_full.horizon_used;
  const int k = U.index(t), k0 = U.ref_index();
  const Mat T_as = out ? pack.T_out() : pack.T_in();
  const Mat T_as_inv = out ? pack.T_out_inv() : pack.T_in_inv();
  // U_as(t, 0) of the asymptotic Klein-Gordon generator, recovered from W.
  const Mat U_as = U.forward(k) * w_full.w;
  ChainReport r;
  r.finite_horizon_defect =
      spectral_norm(w_full.w - pack.T(k0) * Uad.backward(Uad.index(t)) * pack.T_inv(k) * U_as);
  r.limit_defect = spectral_norm(w_full.w - pack.T(k0) * w_ad.w * T_as_inv);
  r.frame_gap = spectral_norm(pack.T(k) - T_as);
  return r;
}

SingularSpectrum SingularSpectrum::of(const Mat& A, double scale, double threshold) {
  SingularSpectrum s;
  s.sigma = singular_values(A);
  s.threshold = threshold;
  s.scale = scale;
  const double s0 = s.sigma.size() ? s.sigma[0] : 0.0;
  for (Eigen::Index i = 0; i < s.sigma.size(); ++i)
    if (s.sigma[i] > threshold * scale) ++s.effective_rank;
  const double last = s.sigma.size() ? s.sigma[s.sigma.size() - 1] : 0.0;
  s.decay_orders = s0 > 0 ? std::log10(s0 / std::max(last, 1e-300)) : 0.0;
  return s;
}

CompactnessReport commutator_compactness(const MollerOperator& w, const SpatialGrid& grid,
                                         const std::vector<double>& orders, const std::vector<double>& alphas) {
  const int n = static_cast<int>(w.w.rows()) / 2;
  const Mat P = pi_plus(n);
  CompactnessReport r;
  r.commutator = SingularSpectrum::of(w.w * P - P * w.w, spectral_norm(w.w));
  r.projector_gauge = smoothing_gauge(grid, Mat(w.w * P * w.w_inverse - P), orders, alphas);
  return r;
}

FredholmReport fredholm_scan(const MollerOperator& w_out, const MollerOperator& w_in, const Mat& c_minus_out,
                             const Mat& c_plus_in, double relative_threshold) {
  const Eigen::Index n2 = w_out.w.rows();
  const Mat one = Mat::Identity(n2, n2);
  const Mat A = c_minus_out * w_out.w_inverse + c_plus_in * w_in.w_inverse;
  FredholmReport r;
  r.singular_values = singular_values(A);
  r.threshold = relative_threshold * r.singular_values[0];
  const Eigen::Index m = r.singular_values.size();
  int rank = 0;
  for (Eigen::Index i = 0; i < m; ++i)
    if (r.singular_values[i] > r.threshold) ++rank;
  r.kernel_dim = static_cast<int>(n2) - rank;
  r.cokernel_dim = static_cast<int>(n2) - rank;  // square truncation: rank-nullity
  r.index = r.kernel_dim - r.cokernel_dim;
  if (rank == m)
    r.spectral_gap = r.singular_values[m - 1] / r.threshold;
  else
    r.spectral_gap = rank > 0 ? r.singular_values[rank - 1] / std::max(r.singular_values[rank], 1e-300) : 0.0;
  r.identity_defect = spectral_norm(A - one);
  const int n = static_cast<int>(n2) / 2;
  const Mat WF = w_out.w * pi_plus(n) + w_in.w * pi_minus(n);
  const Mat WFd = pi_plus(n) * w_out.w_adjoint + pi_minus(n) * w_in.w_adjoint;
  r.k1 = SingularSpectrum::of(WF * WFd - one);
  r.k2 = SingularSpectrum::of(WFd * WF - one);
  return r;
}

FredholmReport fredholm_scan(const MollerOperator& w_out, const MollerOperator& w_in, double relative_threshold) {
  const int n = static_cast<int>(w_out.w.rows()) / 2;
  return fredholm_scan(w_out, w_in, pi_minus(n), pi_plus(n), relative_threshold);
}

}  // namespace kgd
