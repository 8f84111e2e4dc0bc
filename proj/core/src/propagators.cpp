#include "kgd/propagators.hpp"

#include <algorithm>
#include <map>

namespace kgd {

std::string to_string(KernelKind k) {
  switch (k) {
    case KernelKind::retarded: return "retarded";
    case KernelKind::advanced: return "advanced";
    case KernelKind::causal: return "causal";
    case KernelKind::feynman: return "feynman";
  }
  return "?";
}

std::string to_string(KernelLevel l) { return l == KernelLevel::scalar ? "scalar" : "block"; }

namespace {

Mat top_rows(const Mat& A) { return A.topRows(A.rows() / 2); }
Mat right_cols(const Mat& A) { return A.rightCols(A.cols() / 2); }

double max_norm(const GridField& f) {
  double m = 0.0;
  for (const auto& v : f) m = std::max(m, v.norm());
  return m;
}

void check_source(const TimeGrid& tg, const GridField& f, int margin) {
  if (static_cast<int>(f.size()) != tg.count) throw KgdError("source must be sampled on every node of the time grid");
  if (2 * margin >= tg.count) throw KgdError("time grid too short for the source margin");
  const double scale = max_norm(f);
  for (int k = 0; k < tg.count; ++k)
    if ((k < margin || k >= tg.count - margin) && f[k].norm() > 1e-12 * scale)
      throw KgdError("support overflow: the source must vanish on the first and last " + std::to_string(margin) +
                     " nodes of the time grid");
}

// Third derivative of a sampled field at node k from nodes <= k (fourth order;
// the window is clamped to the first seven nodes near the start).
CVec third_derivative_past(const GridField& g, int k, double dt) {
  const int first = std::max(0, k - 6);
  std::vector<double> nodes;
  for (int i = first; i < first + 7; ++i) nodes.push_back(static_cast<double>(i - k));
  const std::vector<double> w = fd_weights(nodes, 0.0, 3);
  CVec d = CVec::Zero(g[k].size());
  for (int i = 0; i < 7; ++i) d += (w[i] / (dt * dt * dt)) * g[first + i];
  return d;
}

// Integrals of g(s) = Uf(0, s) f(s) (pi_1^* f at the scalar level) from the
// start (past) and to the end (future) of the grid.
struct PulledBack {
  GridField past, future;
};
PulledBack pulled_back_integrals(const PropagationTable& U, const GridField& f, bool scalar) {
  GridField g(f.size());
  for (size_t k = 0; k < f.size(); ++k) {
    const Mat B = U.backward(static_cast<int>(k));
    g[k] = scalar ? CVec(right_cols(B) * f[k]) : CVec(B * f[k]);
  }
  PulledBack p;
  p.past = cumulative_simpson(g, U.times().dt);
  // int_{t_k}^{t_end}: the same rule on the reversed sequence, so that the
  // stencils only see nodes at or after t_k.
  GridField rev(g.rbegin(), g.rend());
  p.future = cumulative_simpson(rev, U.times().dt);
  std::reverse(p.future.begin(), p.future.end());
  return p;
}

// P applied at node k to a family sampled by `col`, with P = d^2 + r d + a.
Mat apply_scalar_p(const ModelOperatorData& model, int k, int order, const std::function<const Mat&(int)>& col) {
  const int n = model.times.count;
  const double dt = model.times.dt;
  const Stencil s2 = derivative_stencil(k, n, 2, order), s1 = derivative_stencil(k, n, 1, order);
  Mat d2 = Mat::Zero(col(k).rows(), col(k).cols()), d1 = d2;
  for (size_t i = 0; i < s2.offsets.size(); ++i) d2 += (s2.weights[i] / (dt * dt)) * col(k + s2.offsets[i]);
  for (size_t i = 0; i < s1.offsets.size(); ++i) d1 += (s1.weights[i] / dt) * col(k + s1.offsets[i]);
  return d2 + model.fric(k).cast<cplx>().asDiagonal() * d1 + model.a[k] * col(k);
}

}  // namespace

GridField cumulative_simpson(const GridField& g, double dt) {
  const int n = static_cast<int>(g.size());
  GridField I(n);
  if (n == 0) return I;
  I[0] = CVec::Zero(g[0].size());
  if (n < 7) {
    // Too short for the corrected rule: plain trapezoid.
    for (int k = 1; k < n; ++k) I[k] = I[k - 1] + 0.5 * dt * (g[k - 1] + g[k]);
    return I;
  }
  const double h4 = dt * dt * dt * dt;
  std::vector<CVec> g3;
  for (int k = 0; k < n; ++k) g3.push_back(third_derivative_past(g, k, dt));
  auto corr = [&](int a, int b, double c) { return CVec(c * h4 * (g3[b] - g3[a])); };
  auto simpson = [&](int a) { return CVec((dt / 3.0) * (g[a] + 4.0 * g[a + 1] + g[a + 2])); };
  // Leading Euler-Maclaurin terms: (h^4/180) g3 for Simpson, (h^4/80) g3 for the 3/8 rule.
  for (int k = 2; k < n; k += 2) I[k] = I[k - 2] + simpson(k - 2);
  for (int k = 2; k < n; k += 2) I[k] -= corr(0, k, 1.0 / 180.0);
  I[3] = (3.0 * dt / 8.0) * (g[0] + 3.0 * g[1] + 3.0 * g[2] + g[3]) - corr(0, 3, 1.0 / 80.0);
  for (int k = 5; k < n; k += 2) I[k] = I[k - 2] + simpson(k - 2) - corr(k - 2, k, 1.0 / 180.0);
  I[1] = I[3] - (simpson(1) - corr(1, 3, 1.0 / 180.0));
  return I;
}

KernelOperator sample_propagator(KernelKind kind, KernelLevel level, const PropagationTable& U,
                                 const std::vector<double>& t_list, const std::vector<double>& s_list) {
  if (kind == KernelKind::feynman) throw KgdError("sample_propagator: use feynman_block for Feynman kernels");
  KernelOperator K;
  K.kind = kind;
  K.level = level;
  K.t_list = t_list;
  K.s_list = s_list;
  std::vector<Mat> left, right;
  for (double t : t_list) left.push_back(level == KernelLevel::scalar ? top_rows(U.forward(U.index(t))) : U.forward(U.index(t)));
  for (double s : s_list) right.push_back(level == KernelLevel::scalar ? right_cols(U.backward(U.index(s))) : U.backward(U.index(s)));
  // Scalar kernels carry -i pi_0 ... pi_1^*, block kernels +i.
  const cplx pre = level == KernelLevel::scalar ? -kI : kI;
  for (size_t i = 0; i < t_list.size(); ++i)
    for (size_t j = 0; j < s_list.size(); ++j) {
      const int kt = U.index(t_list[i]), ks = U.index(s_list[j]);
      const double th_plus = kt > ks ? 1.0 : (kt == ks ? 0.5 : 0.0);
      double w = 0.0;
      switch (kind) {
        case KernelKind::retarded: w = th_plus; break;
        case KernelKind::advanced: w = -(1.0 - th_plus); break;
        default: w = 1.0; break;  // causal = G+ - G-
      }
      if (level == KernelLevel::scalar && kt == ks) w = 0.0;  // pi_0 pi_1^* = 0
      K.blocks.push_back(Mat((pre * w) * left[i] * right[j]));
    }
  return K;
}

GridField retarded_advanced(KernelLevel level, const PropagationTable& U, const GridField& f, int sign, int margin) {
  const TimeGrid& tg = U.times();
  check_source(tg, f, margin);
  const bool scalar = level == KernelLevel::scalar;
  const PulledBack I = pulled_back_integrals(U, f, scalar);
  const cplx pre = scalar ? -kI : kI;
  GridField u(tg.count);
  for (int k = 0; k < tg.count; ++k) {
    const CVec part = sign > 0 ? CVec(I.past[k]) : CVec(-I.future[k]);
    const Mat F = U.forward(k);
    u[k] = scalar ? CVec(pre * (top_rows(F) * part)) : CVec(pre * (F * part));
  }
  return u;
}

OperatorResidual scalar_residual(const ModelOperatorData& model, const GridField& u, const GridField& f,
                                 int stencil_order) {
  const int n = model.times.count;
  if (static_cast<int>(u.size()) != n || static_cast<int>(f.size()) != n)
    throw KgdError("scalar_residual: fields must live on the model's time grid");
  std::vector<Mat> cols(n);
  for (int k = 0; k < n; ++k) cols[k] = u[k];
  const int half = stencil_order / 2 + 1;
  OperatorResidual r;
  r.max_source = max_norm(f);
  r.max_solution = max_norm(u);
  for (int k = half; k < n - half; ++k) {
    const Mat Pu = apply_scalar_p(model, k, stencil_order, [&](int j) -> const Mat& { return cols[j]; });
    r.max_residual = std::max(r.max_residual, (Pu.col(0) - f[k]).norm());
    ++r.samples;
  }
  return r;
}

OperatorResidual block_residual(const BlockOperatorFamily& gen, const GridField& u, const GridField& f,
                                int stencil_order) {
  const int n = gen.times.count;
  if (static_cast<int>(u.size()) != n || static_cast<int>(f.size()) != n)
    throw KgdError("block_residual: fields must live on the generator's time grid");
  const double dt = gen.times.dt;
  const int half = stencil_order / 2 + 1;
  OperatorResidual r;
  r.max_source = max_norm(f);
  r.max_solution = max_norm(u);
  for (int k = half; k < n - half; ++k) {
    const Stencil s1 = derivative_stencil(k, n, 1, stencil_order);
    CVec d1 = CVec::Zero(u[k].size());
    for (size_t i = 0; i < s1.offsets.size(); ++i) d1 += (s1.weights[i] / dt) * u[k + s1.offsets[i]];
    const CVec Pu = -kI * d1 - gen.at(k) * u[k];
    r.max_residual = std::max(r.max_residual, (Pu - f[k]).norm());
    ++r.samples;
  }
  return r;
}

double adjoint_relation_defect(const KernelOperator& plus, const KernelOperator& minus, const ModelOperatorData& model) {
  if (plus.t_list != plus.s_list || minus.t_list != plus.t_list || minus.s_list != plus.s_list)
    throw KgdError("adjoint_relation_defect: kernels must share a square sample grid");
  const size_t m = plus.t_list.size();
  double defect = 0.0, scale = 0.0;
  for (size_t i = 0; i < m; ++i) {
    const RVec& dt = model.dens(model.times.nearest(plus.t_list[i]));
    for (size_t j = 0; j < m; ++j) {
      const RVec& ds = model.dens(model.times.nearest(plus.s_list[j]));
      const Mat lhs = dt.cast<cplx>().asDiagonal() * plus.at(i, j);
      const Mat rhs = (ds.cast<cplx>().asDiagonal() * minus.at(j, i)).adjoint();
      defect = std::max(defect, spectral_norm(lhs - rhs));
      scale = std::max(scale, spectral_norm(lhs));
    }
  }
  return scale > 0 ? defect / scale : defect;
}

KernelOperator feynman_block(const PropagationTable& Uf, const std::vector<double>& t_list,
                             const std::vector<double>& s_list) {
  KernelOperator K;
  K.kind = KernelKind::feynman;
  K.level = KernelLevel::block;
  K.t_list = t_list;
  K.s_list = s_list;
  const int n = static_cast<int>(Uf.forward(Uf.ref_index()).rows()) / 2;
  for (double t : t_list) {
    const int kt = Uf.index(t);
    const Mat F = Uf.forward(kt);
    for (double s : s_list) {
      const int ks = Uf.index(s);
      const Mat B = Uf.backward(ks);
      const Mat plus = kI * F.leftCols(n) * B.topRows(n);       // i Uf(t,0) pi+ Uf(0,s)
      const Mat minus = -kI * F.rightCols(n) * B.bottomRows(n); // -i Uf(t,0) pi- Uf(0,s)
      K.blocks.push_back(kt > ks ? plus : (kt < ks ? minus : Mat(0.5 * (plus + minus))));
    }
  }
  return K;
}

GridField feynman_block_apply(const PropagationTable& Uf, const GridField& f, int margin) {
  const TimeGrid& tg = Uf.times();
  check_source(tg, f, margin);
  const PulledBack I = pulled_back_integrals(Uf, f, false);
  const int n = static_cast<int>(f.front().size()) / 2;
  GridField u(tg.count);
  for (int k = 0; k < tg.count; ++k) {
    CVec v(2 * n);
    v.head(n) = I.past[k].head(n);     // pi+ int_{-inf}^t
    v.tail(n) = -I.future[k].tail(n);  // -pi- int_t^{inf}
    u[k] = kI * (Uf.forward(k) * v);
  }
  return u;
}

double feynman_jump_defect(const PropagationTable& Uf, const std::vector<double>& t_list) {
  double d = 0.0;
  for (double t : t_list) {
    const int k = Uf.index(t);
    const Mat F = Uf.forward(k), B = Uf.backward(k);
    const int n = static_cast<int>(F.rows()) / 2;
    const Mat upper = kI * F.leftCols(n) * B.topRows(n);       // G(t+, t)
    const Mat lower = -kI * F.rightCols(n) * B.bottomRows(n);  // G(t-, t)
    d = std::max(d, spectral_norm(upper - lower - kI * Mat::Identity(2 * n, 2 * n)));
  }
  return d;
}

double feynman_hermitian_defect(const KernelOperator& block, const PropagationTable& Uf, const ModelOperatorData& model) {
  if (block.t_list != block.s_list) throw KgdError("feynman_hermitian_defect: needs t_list == s_list");
  const size_t m = block.t_list.size();
  const int n = static_cast<int>(block.blocks.front().rows()) / 2;
  const Mat q = q_ad_form(n);
  double d = 0.0;
  for (size_t i = 0; i < m; ++i) {
    const int kt = Uf.index(block.t_list[i]);
    const RVec Dt = block_density(model.dens(kt));
    for (size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      const int ks = Uf.index(block.s_list[j]);
      const RVec Ds = block_density(model.dens(ks));
      // q-adjoint of G(s, t): slice t -> slice s, adjoint slice s -> slice t.
      const Mat Gst_dag =
          q * Dt.cwiseInverse().cast<cplx>().asDiagonal() * block.at(j, i).adjoint() * Ds.cast<cplx>().asDiagonal() * q;
      const Mat lhs = -kI * (block.at(i, j) - Gst_dag);
      d = std::max(d, spectral_norm(lhs - Uf.forward(kt) * q * Uf.backward(ks)));
    }
  }
  return d;
}

BoundaryReport feynman_boundary_conditions(const DiagonalizationPack& pack, const PropagationTable& Uf,
                                           const GridField& f) {
  const GridField u = feynman_block_apply(Uf, f);
  const TimeGrid& tg = Uf.times();
  const ModelOperatorData& m = pack.model();
  const int n = pack.dim();
  BoundaryReport r;
  r.max_solution = max_norm(u);
  const double scale = r.max_solution > 0 ? r.max_solution : 1.0;
  const double T_out = tg.t_end(), T_in = tg.at(0);
  const BlockOperatorFamily out = asymptotic_ad_generator(pack.eps_out(), m.density_out, tg, "H_ad_out");
  const BlockOperatorFamily in = asymptotic_ad_generator(pack.eps_in(), m.density_in, tg, "H_ad_in");
  const CVec vo = out.static_exp(-T_out) * u[tg.count - 1];  // U^ad_out(0, T) u(T)
  const CVec vi = in.static_exp(-T_in) * u[0];               // U^ad_in(0, -T) u(-T)
  r.out_defect = vo.tail(n).norm() / scale;
  r.in_defect = vi.head(n).norm() / scale;
  return r;
}

KernelOperator feynman_scalar(const KernelOperator& block, const DiagonalizationPack& pack) {
  if (block.kind != KernelKind::feynman || block.level != KernelLevel::block)
    throw KgdError("feynman_scalar: expects the block Feynman kernel");
  KernelOperator K = block;
  K.level = KernelLevel::scalar;
  K.blocks.clear();
  const TimeGrid& tg = pack.times();
  std::vector<Mat> L, R;
  for (double t : block.t_list) L.push_back(top_rows(pack.T(tg.nearest(t))));
  for (double s : block.s_list) R.push_back(right_cols(pack.T_inv(tg.nearest(s))));
  for (size_t i = 0; i < block.t_list.size(); ++i)
    for (size_t j = 0; j < block.s_list.size(); ++j) K.blocks.push_back(Mat(-L[i] * block.at(i, j) * R[j]));
  return K;
}

FeynmanResidual feynman_scalar_residual(const DiagonalizationPack& pack, const PropagationTable& Uf,
                                        const std::vector<double>& s_list, double k_band, int stride,
                                        int stencil_order, const std::vector<double>& orders) {
  const ModelOperatorData& model = pack.model();
  const TimeGrid& tg = Uf.times();
  const int n = pack.dim();
  const int half = stencil_order / 2 + 1;
  // G_F(t, s) = L+-(t) R+-(s): L+ = -i pi_0 T(t) Uf(t,0) pi+, L- = +i pi_0 T(t) Uf(t,0) pi-,
  // R+ = pi+ Uf(0,s) T(s)^{-1} pi_1^*, R- = pi- Uf(0,s) T(s)^{-1} pi_1^*.
  auto left = [&](int k, bool plus) {
    const Mat F = top_rows(pack.T(k)) * Uf.forward(k);
    return plus ? Mat(-kI * F.leftCols(n)) : Mat(kI * F.rightCols(n));
  };
  std::vector<int> ks;
  std::vector<Mat> Rp, Rm;
  for (double s : s_list) {
    const int k = Uf.index(s);
    ks.push_back(k);
    const Mat B = Uf.backward(k) * right_cols(pack.T_inv(k));
    Rp.push_back(B.topRows(n));
    Rm.push_back(B.bottomRows(n));
  }
  FeynmanResidual res;
  Mat worst;
  for (int k = half; k < tg.count - half; k += stride) {
    for (bool plus : {true, false}) {
      std::map<int, Mat> cache;
      auto col = [&](int j) -> const Mat& {
        auto it = cache.find(j);
        if (it == cache.end()) it = cache.emplace(j, left(j, plus)).first;
        return it->second;
      };
      bool needed = false;
      for (int k_s : ks) needed |= plus ? (k - k_s > half) : (k_s - k > half);
      if (!needed) continue;
      const Mat PL = apply_scalar_p(model, k, stencil_order, col);
      for (size_t j = 0; j < ks.size(); ++j) {
        if (plus ? (k - ks[j] <= half) : (ks[j] - k <= half)) continue;
        const Mat K = PL * (plus ? Rp[j] : Rm[j]);
        const double nk = spectral_norm(K);
        res.max_kernel = std::max(res.max_kernel, spectral_norm(col(k) * (plus ? Rp[j] : Rm[j])));
        res.max_fourier_tail = std::max(res.max_fourier_tail, fourier_tail(*model.grid, K, k_band));
        if (nk >= res.max_residual) {
          res.max_residual = nk;
          worst = K;
        }
        ++res.samples;
      }
    }
  }
  if (worst.size()) res.gauge = smoothing_gauge(*model.grid, worst, orders);
  return res;
}

FeynmanPositivity feynman_positivity(const KernelOperator& g_f, const ModelOperatorData& model) {
  if (g_f.t_list != g_f.s_list) throw KgdError("feynman_positivity: needs t_list == s_list");
  const int m = static_cast<int>(g_f.t_list.size());
  const int n = static_cast<int>(g_f.blocks.front().rows());
  Mat M(m * n, m * n);
  for (int i = 0; i < m; ++i) {
    const RVec& dt = model.dens(model.times.nearest(g_f.t_list[i]));
    for (int j = 0; j < m; ++j) {
      const RVec& ds = model.dens(model.times.nearest(g_f.s_list[j]));
      M.block(i * n, j * n, n, n) =
          kI * (dt.cast<cplx>().asDiagonal() * g_f.at(i, j) - g_f.at(j, i).adjoint() * ds.cast<cplx>().asDiagonal());
    }
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (M + M.adjoint()), Eigen::EigenvaluesOnly);
  FeynmanPositivity p;
  p.min_eig_i = es.eigenvalues().minCoeff();
  p.max_eig_i = es.eigenvalues().maxCoeff();
  p.min_eig_i_inverse = -p.max_eig_i;
  return p;
}

TwoPointKernel as_two_point(const KernelOperator& k, int sign) {
  TwoPointKernel t;
  t.t_list = k.t_list;
  t.s_list = k.s_list;
  t.blocks = k.blocks;
  t.sign = sign;
  return t;
}

FeynmanStateReport feynman_vs_state(const KernelOperator& g_f, const CovariancePair& ref, const PropagationTable& U,
                                    const ModelOperatorData& model, const GridField& source, double k_band,
                                    double p_tol, const std::vector<double>& orders) {
  if (g_f.level != KernelLevel::scalar) throw KgdError("feynman_vs_state: expects the scalar Feynman kernel");
  // Solutions for the P-test.
  const GridField up = retarded_advanced(KernelLevel::scalar, U, source, +1);
  const GridField um = retarded_advanced(KernelLevel::scalar, U, source, -1);
  const CVec total = pulled_back_integrals(U, source, true).past.back();
  GridField ul(source.size());
  for (size_t k = 0; k < source.size(); ++k)
    ul[k] = top_rows(U.forward(static_cast<int>(k))) * (ref.c_plus * total);
  // Kernels for the distance.
  const TwoPointKernel lam = two_point_kernel(ref, U, g_f.t_list, g_f.s_list, +1);
  const KernelOperator gp = sample_propagator(KernelKind::retarded, KernelLevel::scalar, U, g_f.t_list, g_f.s_list);
  const KernelOperator gm = sample_propagator(KernelKind::advanced, KernelLevel::scalar, U, g_f.t_list, g_f.s_list);
  double gf_scale = 0.0;
  for (const Mat& b : g_f.blocks) gf_scale = std::max(gf_scale, spectral_norm(b));

  FeynmanStateReport rep;
  const double src = max_norm(source);
  for (cplx c : {kI, -kI})
    for (int ps : {+1, -1})
      for (int sigma : {+1, -1}) {
        FeynmanCandidate cand;
        cand.lambda_coefficient = c;
        cand.propagator_sign = ps;
        cand.sigma = sigma;
        cand.label = std::string(c == kI ? "i" : "i^-1") + " Lambda+ " + (sigma > 0 ? "+ " : "- ") +
                     (ps > 0 ? "G+" : "G-");
        const GridField& ug = ps > 0 ? up : um;
        GridField u(source.size());
        for (size_t k = 0; k < u.size(); ++k) u[k] = c * ul[k] + double(sigma) * ug[k];
        cand.p_residual = scalar_residual(model, u, source).max_residual / src;
        const KernelOperator& gk = ps > 0 ? gp : gm;
        for (size_t b = 0; b < g_f.blocks.size(); ++b)
          cand.distance = std::max(cand.distance,
                                   spectral_norm(g_f.blocks[b] - c * lam.blocks[b] - double(sigma) * gk.blocks[b]));
        cand.distance /= std::max(gf_scale, 1e-300);
        rep.candidates.push_back(cand);
      }
  for (size_t i = 0; i < rep.candidates.size(); ++i) {
    const auto& c = rep.candidates[i];
    if (c.p_residual > p_tol) continue;
    if (rep.selected < 0 || c.distance < rep.candidates[rep.selected].distance) rep.selected = static_cast<int>(i);
  }
  if (rep.selected < 0) throw KgdError("feynman_vs_state: no sign convention satisfies P (c Lambda+ + G) = 1");
  const FeynmanCandidate& sel = rep.candidates[rep.selected];
  const KernelOperator& gk = sel.propagator_sign > 0 ? gp : gm;
  Mat worst;
  for (size_t b = 0; b < g_f.blocks.size(); ++b) {
    const Mat D = g_f.blocks[b] - sel.lambda_coefficient * lam.blocks[b] - double(sel.sigma) * gk.blocks[b];
    const double nd = spectral_norm(D);
    rep.fourier_tail = std::max(rep.fourier_tail, fourier_tail(*model.grid, D, k_band));
    if (nd >= rep.max_difference) {
      rep.max_difference = nd;
      worst = D;
    }
  }
  rep.gauge = smoothing_gauge(*model.grid, worst, orders);
  return rep;
}

}  // namespace kgd
