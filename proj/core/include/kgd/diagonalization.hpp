#pragma once
// Operator square roots, the Riccati fixed-point iteration for b(t), gap
// regularization, the transfer matrices T(t), T(t)^{-1}, and the almost
// diagonal generator H^ad(t) with its diagonal part H^d(t).

#include "kgd/geometry.hpp"

namespace kgd {

/// Positive square root of an operator self-adjoint in the density product.
/// Throws if the spectrum is not strictly positive.
Mat sqrt_operator(const Mat& a, const RVec& density);
OperatorMatrix sqrt_operator(const OperatorMatrix& a);

/// Hard spectral floor of every slice at c0, with a per-slice report of the
/// modification (a finite-rank correction, hence "smoothing").
struct CutoffResult {
  OperatorFamily floored;
  std::vector<double> modification_norm;        ///< ||floored - a|| per slice
  std::vector<SmoothingGauge> modification;     ///< gauge per slice (empty gauge if unmodified)
  int modified_slices = 0;
};
CutoffResult low_freq_cutoff(const OperatorFamily& a, const std::vector<RVec>& density, double c0,
                             const SpatialGrid* grid = nullptr,
                             const std::vector<double>& orders = {0, 1, 2, 3});

struct RiccatiOptions {
  int order = 3;             ///< number p of fixed-point iterations
  double gap_floor = 0.5;    ///< lower bound of Herm(b+ - b-) relative to 2 min eig(eps)
  double cutoff = -1.0;      ///< spectral floor c0 for a(t); negative: half the mass floor
  int fd_order = 4;          ///< order of the time-difference stencils
};

struct RiccatiSolution {
  OperatorFamily b_plus, b_minus, epsilon;
  OperatorFamily residual_plus, residual_minus;  ///< i d_t b - b^2 + a + i r b for b = b+-
  int order = 0;
  int iterations_done = 0;
  double gap_floor = 0.5;
  double achieved_gap = 0.0;        ///< min over slices of lambda_min Herm(b+ - b-) / (2 lambda_min eps)
  bool diverged = false;
  std::vector<double> increments;   ///< max_t ||b_n - b_{n-1}|| per iteration
  double max_cutoff_modification = 0.0;
  std::vector<RVec> density;        ///< slice densities (shared with the model)
};

RiccatiSolution riccati_solve(const ModelOperatorData& model, const RiccatiOptions& opts = {});

/// T(t), T(t)^{-1}, H^ad(t), H^d(t) and the diagonal residuals built from b+-(t).
class DiagonalizationPack {
 public:
  DiagonalizationPack(std::shared_ptr<const ModelOperatorData> model,
                      std::shared_ptr<const RiccatiSolution> sol, int fd_order = 4);

  const TimeGrid& times() const { return model_->times; }
  int dim() const { return n_; }
  bool time_independent() const { return model_->time_independent; }
  const ModelOperatorData& model() const { return *model_; }
  const RiccatiSolution& solution() const { return *sol_; }

  /// Transfer matrix i^{-1} [[1, -1], [b+, -b-]] X^{-1/2}, X = b+ - b-.
  Mat T(int k) const;
  /// Its inverse i X^{-1/2} [[-b-, 1], [-b+, 1]].
  Mat T_inv(int k) const;
  /// Generator of T^{-1} U T, including the residual block coupling.
  const Mat& H_ad(int k) const { return H_ad_.size() == 1 ? H_ad_[0] : H_ad_[k]; }
  /// Diagonal blocks of H^ad made weighted-self-adjoint up to the i r/2 term
  /// forced by the time-dependent density (q^ad-unitary evolution).
  Mat H_d(int k) const;
  const Mat& H_d_block(int k, int j) const;
  /// H^d - H^ad.
  Mat V_ad(int k) const { return H_d(k) - H_ad(k); }
  /// i r + [X^{-1/2}, b+-] - i d_t(X^{-1/2}) X^{1/2}.
  const OperatorFamily& r_b_plus() const { return r_b_plus_; }
  const OperatorFamily& r_b_minus() const { return r_b_minus_; }

  /// Full Klein-Gordon generator [[0, 1], [a, i r]].
  Mat H(int k) const;

  /// Asymptotic data: eps_out/in, T_out/in and H^ad_out/in = diag(eps, -eps).
  const Mat& eps_out() const { return eps_out_; }
  const Mat& eps_in() const { return eps_in_; }
  Mat T_out() const;
  Mat T_out_inv() const;
  Mat T_in() const;
  Mat T_in_inv() const;
  Mat H_ad_out() const;
  Mat H_ad_in() const;

  /// max_k ||T T^{-1} - 1||, ||T^dagger q T - q^ad|| and the weighted
  /// self-adjointness defect of H^d - i r/2.
  double inverse_defect() const;
  double symplectic_form_defect() const;
  double hd_selfadjoint_defect() const;

 private:
  std::shared_ptr<const ModelOperatorData> model_;
  std::shared_ptr<const RiccatiSolution> sol_;
  int n_ = 0;
  std::vector<Mat> x_mhalf_;          ///< X^{-1/2} per slice
  std::vector<Mat> H_ad_;             ///< 2N x 2N per slice
  std::vector<Mat> hd_plus_, hd_minus_;
  OperatorFamily r_b_plus_, r_b_minus_;
  Mat eps_out_, eps_in_;
  const Mat& xm(int k) const { return x_mhalf_.size() == 1 ? x_mhalf_[0] : x_mhalf_[k]; }
};

std::shared_ptr<DiagonalizationPack> build_pack(std::shared_ptr<const RiccatiSolution> sol,
                                                std::shared_ptr<const ModelOperatorData> model);

/// Block helpers.
Mat q_form(int n);      ///< [[0, 1], [1, 0]]
Mat q_ad_form(int n);   ///< diag(1, -1)
Mat pi_plus(int n);     ///< diag(1, 0)
Mat pi_minus(int n);    ///< diag(0, 1)

/// Report of sup_t <t>^delta ||<D>^{-s} (a1^alpha - a2^alpha)||, s = 2(alpha-1) + k.
struct FractionalPowerReport {
  std::vector<double> times;
  std::vector<double> weighted;   ///< <t>^delta * norm per slice
  double sup = 0.0;
  bool bounded = false;           ///< sup finite and the tail does not exceed the sup of the interior
  SmoothingGauge gauge_at_sup;    ///< gauge of the raw difference at the sup slice
};
FractionalPowerReport fractional_power_diff_check(const SpatialGrid& grid, const OperatorFamily& a1,
                                                  const OperatorFamily& a2,
                                                  const std::vector<RVec>& density, double alpha,
                                                  double k, double delta);

}  // namespace kgd
