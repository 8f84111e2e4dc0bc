#pragma once
// Time-ordered propagation for 2x2 block generators (commutator-free
// fourth-order Magnus with interpolated generators), node propagation tables,
// and the conservation / boundedness / propagation checks.

#include "kgd/diagonalization.hpp"

namespace kgd {

/// Time-indexed 2N x 2N generator, evaluated lazily at grid nodes.
struct BlockOperatorFamily {
  std::string id;
  TimeGrid times;
  int dim = 0;                    ///< 2N
  bool time_independent = false;
  bool diagonal = false;          ///< block-diagonal structure tag
  std::function<Mat(int)> node;   ///< generator at node k
  /// exp(i tau G) for time-independent generators (exact spectral exponential).
  std::function<Mat(double)> static_exp;

  Mat at(int k) const { return node(k); }
};

/// Generator builders.
BlockOperatorFamily full_generator(std::shared_ptr<const ModelOperatorData> model);
BlockOperatorFamily ad_generator(std::shared_ptr<const DiagonalizationPack> pack);
BlockOperatorFamily d_generator(std::shared_ptr<const DiagonalizationPack> pack);
/// diag(eps, -eps) with eps the weighted square root of a (H^ad_out/in).
BlockOperatorFamily asymptotic_ad_generator(const Mat& eps, const RVec& density, const TimeGrid& times,
                                            const std::string& id);
/// [[0, 1], [a, 0]] for a static spatial operator (U_out/in, U_free).
BlockOperatorFamily static_kg_generator(const Mat& a, const RVec& density, const TimeGrid& times,
                                        const std::string& id);
/// Arbitrary explicit slices (tests and negative controls).
BlockOperatorFamily explicit_generator(std::vector<Mat> slices, const TimeGrid& times, const std::string& id);
BlockOperatorFamily constant_generator(const Mat& G, const TimeGrid& times, const std::string& id);

struct Propagator {
  double t = 0.0, s = 0.0;
  Mat block;
  std::string generator_id;
};

struct EvolveOptions {
  double step = 0.0;           ///< substep length; 0 selects it from the generator norm
  double max_norm_step = 0.2;  ///< required bound on ||gen|| * step
  bool validate = true;        ///< test mode may bypass the step validation
};

/// Solves d_t U = i gen(t) U, U(s, s) = 1.
Propagator evolve(const BlockOperatorFamily& gen, double t, double s, const EvolveOptions& opts = {});

/// U(t_k, t_ref) and U(t_ref, t_k) on every node of the generator's grid,
/// computed by one outward sweep from t_ref.
class PropagationTable {
 public:
  PropagationTable(const BlockOperatorFamily& gen, double t_ref = 0.0, const EvolveOptions& opts = {});
  /// Restores a time-dependent table from stored blocks U(t_k, t_ref); the
  /// backward blocks are recomputed exactly as in the sweep.
  PropagationTable(std::string id, const TimeGrid& times, int k_ref, std::vector<Mat> forward_blocks,
                   int substeps = 0);

  bool is_static() const { return static_; }
  /// Stored blocks U(t_k, t_ref) (empty for time-independent generators).
  const std::vector<Mat>& forward_blocks() const { return fwd_; }

  const TimeGrid& times() const { return times_; }
  int ref_index() const { return k_ref_; }
  int substeps() const { return substeps_; }
  const std::string& id() const { return id_; }
  /// U(t_k, t_ref).
  Mat forward(int k) const;
  /// U(t_ref, t_k).
  Mat backward(int k) const;
  /// U(t_k, t_l) = forward(k) backward(l).
  Mat U(int k, int l) const;
  /// Node lookup by time (throws if t is not a node).
  int index(double t) const;
  Propagator propagator(double t, double s) const;

 private:
  std::string id_;
  TimeGrid times_;
  int k_ref_ = 0;
  int substeps_ = 0;
  bool static_ = false;
  std::function<Mat(double)> static_exp_;
  std::vector<Mat> fwd_, bwd_;
};

/// ||U^dagger q U - q|| with the adjoint taken from the t-slice product to the s-slice product.
double symplectic_defect(const Mat& U, const Mat& q, const RVec& density_t, const RVec& density_s);
double symplectic_defect(const Propagator& U, const Mat& q, const RVec& density_t, const RVec& density_s);

struct BoundScanReport {
  std::vector<double> orders;
  std::vector<double> times;
  std::map<double, std::vector<double>> values;  ///< per order m, per time
  std::map<double, double> sup;
  double growth_factor = 3.0;
  bool flagged = false;  ///< some sup exceeds growth_factor
};

/// max_{0 <= t <= horizon} ||<D>^m U(t, 0) <D>^{-m}|| for each m.
BoundScanReport uniform_bound_scan(const PropagationTable& table, const SpatialGrid& grid, double horizon,
                                   const std::vector<double>& orders, double growth_factor = 3.0,
                                   int stride = 1);

struct WeightScanReport {
  std::vector<double> times;
  std::vector<double> values;
  double sup = 0.0;
  double initial = 0.0;
  double ratio = 0.0;   ///< sup / initial
  double trend = 0.0;   ///< log-log slope over the second half of the horizon
};

/// sup_{0 <= t <= horizon} ||<D>^m <x>^k U(0, t) (<x> + <t>)^{-k} <D>^{-m}||.
WeightScanReport weight_propagation_scan(const PropagationTable& table, const SpatialGrid& grid, double m,
                                         double k, double horizon, int stride = 1);

struct InteractionReport {
  SmoothingGauge gauge;
  double fourier_tail = 0.0;
  double norm = 0.0;
};

/// Gauge of U(t, s) - T(t) U^d(t, s) T(s)^{-1} on grid nodes.
InteractionReport interaction_residual(const PropagationTable& U, const PropagationTable& Ud,
                                       const DiagonalizationPack& pack, int k_t, int k_s,
                                       const std::vector<double>& orders, double k_band);

}  // namespace kgd
