#pragma once
// Møller operators comparing the full and asymptotic evolutions, compactness
// diagnostics for [W, pi+], and Fredholm diagnostics of finite truncations.

#include "kgd/states.hpp"

namespace kgd {

struct MollerOperator {
  Direction direction = Direction::out;
  std::string level;              ///< "ad" or "full"
  Mat w;                          ///< U(0, t) U_as(t, 0) at the last horizon
  Mat w_inverse;                  ///< U_as(0, t) U(t, 0) (explicit limit)
  Mat w_adjoint;                  ///< q-adjoint of w from the horizon-slice to the t = 0 product
  double horizon_used = 0.0;
  std::vector<std::pair<double, double>> history;  ///< (t_j, ||W(t_{j+1}) - W(t_j)||)
  double difference_exponent = 0.0;               ///< fitted decay of the history
  std::vector<double> cook_times, cook_integrand; ///< ||U(0,t)(H(t) - H_as)U_as(t,0)||
  double cook_exponent = 0.0;                     ///< fitted decay of the Cook integrand
  double tolerance = 0.0;
  bool converged = false;

  double inverse_defect() const;  ///< ||w w_inverse - 1||
  double adjoint_defect() const;  ///< ||w_inverse - w_adjoint||
};

/// Generic large-time limit of U(0, t) U_as(t, 0) along the horizon schedule.
/// `generator` supplies H(t) for the Cook integrand; `q` is the conserved form;
/// slice densities come from the model.
MollerOperator moller(Direction dir, const PropagationTable& U, const BlockOperatorFamily& generator,
                      const BlockOperatorFamily& asymptotic, const Mat& q, const ModelOperatorData& model,
                      const std::vector<double>& schedule, double tol);

/// W^ad_{out/in} = lim U^ad(0, t) U^ad_{out/in}(t, 0), with U^ad_{out/in} generated by diag(eps, -eps).
MollerOperator moller_ad(Direction dir, std::shared_ptr<const DiagonalizationPack> pack, const PropagationTable& Uad,
                         const std::vector<double>& schedule = {5, 10, 20, 40}, double tol = 1e-2);
/// W_{out/in} = lim U(0, t) U_{out/in}(t, 0), with U_{out/in} generated by [[0, 1], [a_{out/in}, 0]].
MollerOperator moller_full(Direction dir, std::shared_ptr<const ModelOperatorData> model, const PropagationTable& U,
                           const std::vector<double>& schedule = {5, 10, 20, 40}, double tol = 1e-2);

/// W_{out/in} versus T(0) W^ad_{out/in} T_{out/in}^{-1}.
struct ChainReport {
  double finite_horizon_defect = 0.0;  ///< ||U(0,t)U_as(t,0) - T(0)U^ad(0,t)T(t)^{-1}U_as(t,0)||
  double limit_defect = 0.0;           ///< ||W - T(0) W^ad T_as^{-1}|| at the last horizon
  double frame_gap = 0.0;              ///< ||T(t) - T_as|| at the last horizon (drives limit_defect)
};
ChainReport chain_identity(const MollerOperator& w_full, const MollerOperator& w_ad, const DiagonalizationPack& pack,
                           const PropagationTable& U, const PropagationTable& Uad);

/// Sorted singular values with the rank and decay summaries used as compactness certificates.
struct SingularSpectrum {
  RVec sigma;                 ///< descending
  double threshold = 1e-6;    ///< relative to `scale`
  double scale = 1.0;         ///< size of the operator the perturbation is measured against
  int effective_rank = 0;     ///< #{sigma > threshold * scale}
  double decay_orders = 0.0;  ///< log10(sigma_0 / sigma_last)
  static SingularSpectrum of(const Mat& A, double scale = 1.0, double threshold = 1e-6);
};

struct CompactnessReport {
  SingularSpectrum commutator;   ///< [W, pi+]
  SmoothingGauge projector_gauge;///< <D>^m <x>^alpha (W pi+ W^{-1} - pi+) <x>^alpha <D>^m
};
CompactnessReport commutator_compactness(const MollerOperator& w, const SpatialGrid& grid,
                                         const std::vector<double>& orders = {0, 1, 2},
                                         const std::vector<double>& alphas = {0.5});

struct FredholmReport {
  RVec singular_values;  ///< of A, descending
  int kernel_dim = 0;
  int cokernel_dim = 0;
  int index = 0;
  double threshold = 0.0;
  /// sigma_{r+1} / sigma_r across the cut; with trivial kernel, sigma_min / threshold.
  double spectral_gap = 0.0;
  double identity_defect = 0.0;  ///< ||A - 1||
  SingularSpectrum k1, k2;       ///< W_F W_F^dagger - 1 and W_F^dagger W_F - 1
};

/// A = c_minus W_out^{-1} + c_plus W_in^{-1} and the W_F = W_out pi+ + W_in pi- identities.
FredholmReport fredholm_scan(const MollerOperator& w_out, const MollerOperator& w_in, const Mat& c_minus_out,
                             const Mat& c_plus_in, double relative_threshold = 1e-6);
/// Almost-diagonal level: the asymptotic vacuum covariances are pi-+ .
FredholmReport fredholm_scan(const MollerOperator& w_out, const MollerOperator& w_in, double relative_threshold = 1e-6);

}  // namespace kgd
