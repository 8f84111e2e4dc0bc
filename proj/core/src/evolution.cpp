#include "kgd/evolution.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>

namespace kgd {

namespace {

Mat blocks(const Mat& a, const Mat& b, const Mat& c, const Mat& d) {
  const Eigen::Index n = a.rows();
  Mat M(2 * n, 2 * n);
  M << a, b, c, d;
  return M;
}

Mat block_diag(const Mat& a, const Mat& d) {
  const Eigen::Index n = a.rows();
  Mat M = Mat::Zero(2 * n, 2 * n);
  M.topLeftCorner(n, n) = a;
  M.bottomRightCorner(n, n) = d;
  return M;
}

// Largest singular value by power iteration on G^H G (deterministic start).
double norm_estimate(const Mat& G) {
  CVec v(G.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = cplx(1.0 + 0.01 * i, 0.003 * i);
  v.normalize();
  double sigma = 0.0;
  for (int it = 0; it < 60; ++it) {
    CVec w = G.adjoint() * (G * v);
    const double n = w.norm();
    if (n == 0.0) return 0.0;
    const double next = std::sqrt(n);
    v = w / n;
    if (std::abs(next - sigma) <= 1e-6 * next) {
      sigma = next;
      break;
    }
    sigma = next;
  }
  return sigma;
}

// Node matrices with a small sliding cache (generators are built lazily).
class NodeCache {
 public:
  explicit NodeCache(const BlockOperatorFamily& g) : g_(g) {}
  const Mat& get(int k) {
    for (auto& e : entries_)
      if (e.first == k) return e.second;
    if (entries_.size() >= 8) entries_.pop_front();
    entries_.emplace_back(k, g_.node(k));
    const Mat& m = entries_.back().second;
    if (!m.allFinite()) throw KgdError("evolve: non-finite generator slice in '" + g_.id + "'");
    return m;
  }
  double norm(int k) {
    auto it = norms_.find(k);
    if (it != norms_.end()) return it->second;
    return norms_[k] = norm_estimate(get(k));
  }

 private:
  const BlockOperatorFamily& g_;
  std::deque<std::pair<int, Mat>> entries_;
  std::map<int, double> norms_;
};

Mat interpolate(NodeCache& cache, const TimeGrid& tg, double t) {
  InterpWeights w = cubic_weights(tg, t);
  Mat G = w.w[0] * cache.get(w.first);
  for (int i = 1; i < 4; ++i) G += w.w[i] * cache.get(w.first + i);
  return G;
}

// exp(i X), block by block for block-diagonal generators.
Mat expi(const Mat& X, bool diagonal) {
  if (!diagonal) return Mat(kI * X).exp();
  const Eigen::Index n = X.rows() / 2;
  return block_diag(Mat(kI * X.topLeftCorner(n, n)).exp(), Mat(kI * X.bottomRightCorner(n, n)).exp());
}

// One commutator-free fourth-order Magnus step from ta to ta + h.
Mat cf4_step(NodeCache& cache, const BlockOperatorFamily& gen, double ta, double h) {
  static const double s3 = std::sqrt(3.0);
  static const double c1 = 0.5 - s3 / 6, c2 = 0.5 + s3 / 6;
  static const double a1 = (3 - 2 * s3) / 12, a2 = (3 + 2 * s3) / 12;
  const Mat A1 = interpolate(cache, gen.times, ta + c1 * h);
  const Mat A2 = interpolate(cache, gen.times, ta + c2 * h);
  return expi(h * (a1 * A1 + a2 * A2), gen.diagonal) * expi(h * (a2 * A1 + a1 * A2), gen.diagonal);
}

// Propagator from ta to tb, both inside the grid interval k.
Mat segment(NodeCache& cache, const BlockOperatorFamily& gen, int k, double ta, double tb,
            const EvolveOptions& opts, int* substeps_out = nullptr) {
  const double len = std::abs(tb - ta);
  const double gnorm = std::max(cache.norm(k), cache.norm(std::min(k + 1, gen.times.count - 1)));
  int n;
  if (opts.step > 0) {
    n = std::max(1, static_cast<int>(std::ceil(len / opts.step - 1e-9)));
    if (opts.validate && gnorm * (len / n) > opts.max_norm_step * (1 + 1e-12))
      throw KgdError("evolve: step validation failed for '" + gen.id + "': ||gen|| * step = " +
                     std::to_string(gnorm * len / n) + " > " + std::to_string(opts.max_norm_step));
  } else {
    n = std::max(1, static_cast<int>(std::ceil(gnorm * len / opts.max_norm_step)));
  }
  if (substeps_out) *substeps_out += n;
  const double h = (tb - ta) / n;
  Mat U = Mat::Identity(gen.dim, gen.dim);
  for (int i = 0; i < n; ++i) U = cf4_step(cache, gen, ta + i * h, h) * U;
  if (!U.allFinite()) throw KgdError("evolve: non-finite intermediate propagator for '" + gen.id + "'");
  return U;
}

Mat static_propagator(const BlockOperatorFamily& gen, double tau) {
  if (gen.static_exp) return gen.static_exp(tau);
  return Mat(kI * tau * gen.node(0)).exp();
}

// exp(i tau [[0,1],[a,0]]) in closed form through the spectral calculus of a.
std::function<Mat(double)> kg_static_exp(const Mat& a, const RVec& density) {
  auto ws = std::make_shared<WeightedSpectral>(WeightedSpectral::of(a, density));
  if (ws->values(0) <= 0) throw KgdError("static generator: spatial operator must be positive");
  return [ws](double tau) {
    Mat C = ws->apply([tau](double l) { return cplx(std::cos(tau * std::sqrt(l)), 0.0); });
    Mat S1 = ws->apply([tau](double l) { return kI * std::sin(tau * std::sqrt(l)) / std::sqrt(l); });
    Mat S2 = ws->apply([tau](double l) { return kI * std::sin(tau * std::sqrt(l)) * std::sqrt(l); });
    return blocks(C, S1, S2, C);
  };
}

// exp(i tau diag(A, B)) for weighted-self-adjoint blocks.
std::function<Mat(double)> diag_static_exp(const Mat& A, const Mat& B, const RVec& density) {
  auto wa = std::make_shared<WeightedSpectral>(WeightedSpectral::of(A, density));
  auto wb = std::make_shared<WeightedSpectral>(WeightedSpectral::of(B, density));
  return [wa, wb](double tau) {
    auto e = [tau](double l) { return std::exp(kI * tau * l); };
    return block_diag(wa->apply(e), wb->apply(e));
  };
}

}  // namespace

BlockOperatorFamily full_generator(std::shared_ptr<const ModelOperatorData> model) {
  BlockOperatorFamily g;
  g.id = "H";
  g.times = model->times;
  const int n = model->grid->n_points;
  g.dim = 2 * n;
  g.time_independent = model->time_independent;
  g.node = [model, n](int k) {
    Mat I = Mat::Identity(n, n), Z = Mat::Zero(n, n);
    return blocks(Z, I, model->a[k], kI * model->fric(k).cast<cplx>().asDiagonal());
  };
  if (g.time_independent) {
    if (model->fric(0).norm() != 0.0) throw KgdError("full_generator: static model with friction");
    g.static_exp = kg_static_exp(model->a[0], model->dens(0));
  }
  return g;
}

BlockOperatorFamily ad_generator(std::shared_ptr<const DiagonalizationPack> pack) {
  BlockOperatorFamily g;
  g.id = "H_ad";
  g.times = pack->times();
  g.dim = 2 * pack->dim();
  g.time_independent = pack->time_independent();
  g.node = [pack](int k) { return pack->H_ad(k); };
  return g;
}

BlockOperatorFamily d_generator(std::shared_ptr<const DiagonalizationPack> pack) {
  BlockOperatorFamily g;
  g.id = "H_d";
  g.times = pack->times();
  g.dim = 2 * pack->dim();
  g.diagonal = true;
  g.time_independent = pack->time_independent();
  g.node = [pack](int k) { return pack->H_d(k); };
  if (g.time_independent)
    g.static_exp = diag_static_exp(pack->H_d_block(0, 0), pack->H_d_block(0, 1), pack->model().dens(0));
  return g;
}

BlockOperatorFamily asymptotic_ad_generator(const Mat& eps, const RVec& density, const TimeGrid& times,
                                            const std::string& id) {
  BlockOperatorFamily g;
  g.id = id;
  g.times = times;
  g.dim = 2 * static_cast<int>(eps.rows());
  g.diagonal = true;
  g.time_independent = true;
  Mat H = block_diag(eps, -eps);
  g.node = [H](int) { return H; };
  g.static_exp = diag_static_exp(eps, -eps, density);
  return g;
}

BlockOperatorFamily static_kg_generator(const Mat& a, const RVec& density, const TimeGrid& times,
                                        const std::string& id) {
  BlockOperatorFamily g;
  g.id = id;
  g.times = times;
  const Eigen::Index n = a.rows();
  g.dim = 2 * static_cast<int>(n);
  g.time_independent = true;
  Mat H = blocks(Mat::Zero(n, n), Mat::Identity(n, n), a, Mat::Zero(n, n));
  g.node = [H](int) { return H; };
  g.static_exp = kg_static_exp(a, density);
  return g;
}

BlockOperatorFamily explicit_generator(std::vector<Mat> slices, const TimeGrid& times, const std::string& id) {
  if (static_cast<int>(slices.size()) != times.count) throw KgdError("explicit_generator: slice count mismatch");
  BlockOperatorFamily g;
  g.id = id;
  g.times = times;
  g.dim = static_cast<int>(slices[0].rows());
  auto data = std::make_shared<std::vector<Mat>>(std::move(slices));
  g.node = [data](int k) { return (*data)[k]; };
  return g;
}

BlockOperatorFamily constant_generator(const Mat& G, const TimeGrid& times, const std::string& id) {
  BlockOperatorFamily g;
  g.id = id;
  g.times = times;
  g.dim = static_cast<int>(G.rows());
  g.time_independent = true;
  g.node = [G](int) { return G; };
  g.static_exp = [G](double tau) { return Mat(Mat(kI * tau * G).exp()); };
  return g;
}

Propagator evolve(const BlockOperatorFamily& gen, double t, double s, const EvolveOptions& opts) {
  Propagator P{t, s, Mat::Identity(gen.dim, gen.dim), gen.id};
  if (t == s) return P;
  if (gen.time_independent) {
    P.block = static_propagator(gen, t - s);
    return P;
  }
  const TimeGrid& tg = gen.times;
  if (!tg.contains(t) || !tg.contains(s))
    throw KgdError("evolve: [s, t] outside the time grid of '" + gen.id + "'");
  // Breakpoints: s, the grid nodes strictly between, t.
  std::vector<double> pts{s};
  const int dir = t > s ? 1 : -1;
  const double lo = std::min(s, t), hi = std::max(s, t);
  std::vector<double> inner;
  for (int k = 0; k < tg.count; ++k) {
    const double tk = tg.at(k);
    if (tk > lo + 1e-12 && tk < hi - 1e-12) inner.push_back(tk);
  }
  if (dir < 0) std::reverse(inner.begin(), inner.end());
  pts.insert(pts.end(), inner.begin(), inner.end());
  pts.push_back(t);
  NodeCache cache(gen);
  for (size_t i = 0; i + 1 < pts.size(); ++i) {
    const int k = tg.interval(0.5 * (pts[i] + pts[i + 1]));
    P.block = segment(cache, gen, k, pts[i], pts[i + 1], opts) * P.block;
  }
  return P;
}

PropagationTable::PropagationTable(const BlockOperatorFamily& gen, double t_ref, const EvolveOptions& opts)
    : id_(gen.id), times_(gen.times) {
  k_ref_ = index(t_ref);
  if (gen.time_independent) {
    static_ = true;
    const BlockOperatorFamily g = gen;
    static_exp_ = [g](double tau) { return static_propagator(g, tau); };
    return;
  }
  const int n = times_.count;
  fwd_.assign(n, Mat());
  bwd_.assign(n, Mat());
  fwd_[k_ref_] = Mat::Identity(gen.dim, gen.dim);
  bwd_[k_ref_] = fwd_[k_ref_];
  NodeCache cache(gen);
  for (int k = k_ref_ + 1; k < n; ++k) {
    fwd_[k] = segment(cache, gen, k - 1, times_.at(k - 1), times_.at(k), opts, &substeps_) * fwd_[k - 1];
    bwd_[k] = fwd_[k].partialPivLu().inverse();
  }
  NodeCache cache_back(gen);
  for (int k = k_ref_ - 1; k >= 0; --k) {
    fwd_[k] = segment(cache_back, gen, k, times_.at(k + 1), times_.at(k), opts, &substeps_) * fwd_[k + 1];
    bwd_[k] = fwd_[k].partialPivLu().inverse();
  }
}

PropagationTable::PropagationTable(std::string id, const TimeGrid& times, int k_ref, std::vector<Mat> forward_blocks,
                                   int substeps)
    : id_(std::move(id)), times_(times), k_ref_(k_ref), substeps_(substeps), fwd_(std::move(forward_blocks)) {
  if (static_cast<int>(fwd_.size()) != times_.count || k_ref_ < 0 || k_ref_ >= times_.count)
    throw KgdError("PropagationTable: " + std::to_string(fwd_.size()) + " stored blocks for a grid of " +
                   std::to_string(times_.count) + " nodes");
  bwd_.assign(fwd_.size(), Mat());
  for (size_t k = 0; k < fwd_.size(); ++k)
    bwd_[k] = static_cast<int>(k) == k_ref_ ? fwd_[k] : Mat(fwd_[k].partialPivLu().inverse());
}

int PropagationTable::index(double t) const {
  const int k = times_.nearest(t);
  if (std::abs(times_.at(k) - t) > 1e-9 * std::max(1.0, std::abs(t)))
    throw KgdError("PropagationTable: time " + std::to_string(t) + " is not a grid node");
  return k;
}

Mat PropagationTable::forward(int k) const {
  if (static_) return static_exp_(times_.at(k) - times_.at(k_ref_));
  return fwd_[k];
}

Mat PropagationTable::backward(int k) const {
  if (static_) return static_exp_(times_.at(k_ref_) - times_.at(k));
  return bwd_[k];
}

Mat PropagationTable::U(int k, int l) const {
  if (static_) return static_exp_(times_.at(k) - times_.at(l));
  if (l == k_ref_) return fwd_[k];
  if (k == k_ref_) return bwd_[l];
  return fwd_[k] * bwd_[l];
}

Propagator PropagationTable::propagator(double t, double s) const {
  return Propagator{t, s, U(index(t), index(s)), id_};
}

double symplectic_defect(const Mat& U, const Mat& q, const RVec& density_t, const RVec& density_s) {
  const int blocks_n = static_cast<int>(U.rows() / density_t.size());
  RVec dt = block_density(density_t, blocks_n), ds = block_density(density_s, blocks_n);
  Mat Uadj = ds.cwiseInverse().asDiagonal() * U.adjoint() * dt.asDiagonal();
  return spectral_norm(Uadj * q * U - q);
}

double symplectic_defect(const Propagator& U, const Mat& q, const RVec& density_t, const RVec& density_s) {
  return symplectic_defect(U.block, q, density_t, density_s);
}

namespace {
Mat block_weight(const SpatialGrid& grid, double m) {
  Mat W = sobolev_weight(grid, m);
  return block_diag(W, W);
}
}  // namespace

BoundScanReport uniform_bound_scan(const PropagationTable& table, const SpatialGrid& grid, double horizon,
                                   const std::vector<double>& orders, double growth_factor, int stride) {
  BoundScanReport rep;
  rep.orders = orders;
  rep.growth_factor = growth_factor;
  const TimeGrid& tg = table.times();
  const int k0 = table.ref_index();
  std::vector<int> nodes;
  for (int k = k0; k < tg.count && tg.at(k) - tg.at(k0) <= horizon + 1e-12; k += stride) nodes.push_back(k);
  for (int k : nodes) rep.times.push_back(tg.at(k) - tg.at(k0));
  for (double m : orders) {
    const Mat W = block_weight(grid, m), Wi = block_weight(grid, -m);
    double sup = 0.0;
    for (int k : nodes) {
      const double v = spectral_norm(W * table.forward(k) * Wi);
      rep.values[m].push_back(v);
      sup = std::max(sup, v);
    }
    rep.sup[m] = sup;
    if (sup > growth_factor) rep.flagged = true;
  }
  return rep;
}

WeightScanReport weight_propagation_scan(const PropagationTable& table, const SpatialGrid& grid, double m,
                                         double k, double horizon, int stride) {
  WeightScanReport rep;
  const TimeGrid& tg = table.times();
  const int k0 = table.ref_index();
  const Mat W = block_weight(grid, m), Wi = block_weight(grid, -m);
  const RVec xc = grid.centered_points();
  RVec xw = xc.unaryExpr([k](double x) { return std::pow(japanese(x), k); });
  const Mat X = block_diag(xw.cast<cplx>().asDiagonal(), xw.cast<cplx>().asDiagonal());
  for (int j = k0; j < tg.count && tg.at(j) - tg.at(k0) <= horizon + 1e-12; j += stride) {
    const double t = tg.at(j) - tg.at(k0);
    RVec y = xc.unaryExpr([k, t](double x) { return std::pow(japanese(x) + japanese(t), -k); });
    const Mat Y = block_diag(y.cast<cplx>().asDiagonal(), y.cast<cplx>().asDiagonal());
    const double v = spectral_norm(W * X * table.backward(j) * Y * Wi);
    rep.times.push_back(t);
    rep.values.push_back(v);
    rep.sup = std::max(rep.sup, v);
  }
  rep.initial = rep.values.front();
  rep.ratio = rep.initial > 0 ? rep.sup / rep.initial : 0.0;
  std::vector<double> ts, vs;
  for (size_t i = 0; i < rep.times.size(); ++i)
    if (rep.times[i] >= 0.5 * horizon && rep.times[i] > 0 && rep.values[i] > 0) {
      ts.push_back(rep.times[i]);
      vs.push_back(rep.values[i]);
    }
  rep.trend = ts.size() >= 2 ? loglog_slope(ts, vs) : 0.0;
  return rep;
}

InteractionReport interaction_residual(const PropagationTable& U, const PropagationTable& Ud,
                                       const DiagonalizationPack& pack, int k_t, int k_s,
                                       const std::vector<double>& orders, double k_band) {
  const Mat D = U.U(k_t, k_s) - pack.T(k_t) * Ud.U(k_t, k_s) * pack.T_inv(k_s);
  InteractionReport rep;
  const SpatialGrid& grid = *pack.model().grid;
  rep.gauge = smoothing_gauge(grid, D, orders);
  rep.fourier_tail = fourier_tail(grid, D, k_band);
  rep.norm = spectral_norm(D);
  return rep;
}

}  // namespace kgd
