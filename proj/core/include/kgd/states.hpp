#pragma once
// Covariances of quasi-free states on Cauchy data: reference covariances from
// the transfer matrices, vacuum covariances of static generators, in/out
// covariances by large-time limits, two-point kernels and the Hadamard
// frequency proxy.

#include "kgd/evolution.hpp"

namespace kgd {

enum class Direction { out, in };
std::string to_string(Direction d);

/// Defects of the defining properties of a pair of covariances.
struct CovarianceReport {
  double complement_defect = 0.0;   ///< ||c+ + c- - 1||
  double idempotency_defect = 0.0;  ///< max ||c c - c||
  double min_eig_lambda_plus = 0.0; ///< smallest eigenvalue of q c+ in the slice product
  double min_eig_lambda_minus = 0.0;///< smallest eigenvalue of -q c-
};

/// c+- at a reference time, with the slice density used for adjoints.
struct CovariancePair {
  Mat c_plus, c_minus;
  double reference_time = 0.0;
  std::string provenance;        ///< ref | vacuum | out | in | evolved
  RVec density;                  ///< N-vector slice density at reference_time
  double construction_defect = 0.0;  ///< route cross-check (vacuum pairs)

  CovarianceReport report() const;
};

/// T(t0) pi+- T(t0)^{-1}, with t0 snapped to the nearest node.
CovariancePair reference_covariances(const DiagonalizationPack& pack, double t0);

/// T pi+- T^{-1} for T built from b+ and b- (hand-expanded transfer formula).
std::pair<Mat, Mat> transfer_covariances(const Mat& b_plus, const Mat& b_minus);

/// Spectral projections of [[0, 1], [a, 0]] onto the positive/negative
/// spectrum; construction_defect holds the distance to the transfer-formula
/// route with b+- = +-sqrt(a).
CovariancePair vacuum_covariances(const OperatorMatrix& a_static);
/// Vacuum pair of the out/in asymptotic operator of a model.
CovariancePair vacuum_covariances(const ModelOperatorData& model, Direction dir);

/// U c+- U^{-1}; U must start at the pair's reference time.
CovariancePair evolve_covariances(const CovariancePair& pair, const Propagator& U, const RVec& density_t);

struct ScatteringCovariances {
  CovariancePair limit;             ///< last iterate U(0, t) c^vac U(t, 0)
  std::vector<double> horizons;
  std::vector<double> differences;  ///< ||c^{t_{j+1}} - c^{t_j}||, attributed to t_j
  double fitted_exponent = 0.0;     ///< -(log-log slope of differences against horizons)
  double tolerance = 0.0;
  bool converged = false;
  /// Adiabatic-frame iterates U(0, t) T(t) pi+- T(t)^{-1} U(t, 0): same limit,
  /// but the finite-horizon error is driven by the smoothing coupling only.
  bool has_frame = false;
  CovariancePair frame_limit;
  std::vector<double> frame_differences;
  double estimator_gap = 0.0;       ///< ||limit - frame_limit|| at the last horizon
};

/// U(0, t) c^vac U(t, 0) along the horizon schedule (t -> -t for the in
/// direction); the table must be referenced at t = 0. With a pack, the
/// adiabatic-frame iterates are evaluated alongside.
ScatteringCovariances scattering_covariances(Direction dir, const ModelOperatorData& model,
                                             const PropagationTable& U, const CovariancePair& vacuum,
                                             const std::vector<double>& schedule = {5, 10, 20, 40},
                                             double tol = 1e-2, const DiagonalizationPack* pack = nullptr);

/// Lambda+-(t, s) = +-pi_0 U(t, 0) c+- U(0, s) pi_1^*, sampled on nodes.
struct TwoPointKernel {
  std::vector<double> t_list, s_list;
  std::vector<Mat> blocks;  ///< row-major over (t, s)
  int sign = +1;
  const Mat& at(int i, int j) const { return blocks[static_cast<size_t>(i) * s_list.size() + j]; }
};

TwoPointKernel two_point_kernel(const CovariancePair& pair, const PropagationTable& U,
                                const std::vector<double>& t_list, const std::vector<double>& s_list,
                                int sign);

/// G(t, s) = -i pi_0 U(t, s) pi_1^*.
Mat causal_kernel(const PropagationTable& U, int k_t, int k_s);

/// max over samples of ||Lambda+ - Lambda- - i G||.
double causal_identity_defect(const TwoPointKernel& plus, const TwoPointKernel& minus,
                              const PropagationTable& U);

/// Residual of (d_t^2 + r d_t + a) applied in t to Lambda+-(., s) at interior
/// nodes (stride apart), with central stencils of the given order.
struct KernelResidual {
  double max_residual = 0.0;
  double max_kernel = 0.0;
  int samples = 0;
};
KernelResidual two_point_residual(const CovariancePair& pair, const PropagationTable& U,
                                  const ModelOperatorData& model, const std::vector<double>& s_list,
                                  int sign, int stride = 20, int stencil_order = 8);

/// Spectrum of the Hermitian form sum_{t,s} <f(t), Lambda(t, s) f(s)> on a
/// square sample grid (t_list == s_list).
struct FormSpectrum {
  double min_eig = 0.0;
  double max_eig = 0.0;
  double hermiticity_defect = 0.0;
};
FormSpectrum two_point_form_spectrum(const TwoPointKernel& kernel, const ModelOperatorData& model);

struct HadamardOptions {
  double omega_min = 1.0;        ///< slowest retained frequency (sets the oscillation requirement)
  double min_oscillations = 8.0;
  double resolve_factor = 4.0;   ///< modes with peak frequency >= factor * 2 pi / window are scored
  bool taper = true;             ///< Hann taper
};

struct HadamardReport {
  std::vector<double> wavenumbers;
  std::vector<double> peak_frequency;     ///< |frequency| of the spectral peak per mode
  std::vector<double> positive_fraction;  ///< energy fraction on the half-line selected by the sign
  std::vector<bool> resolved;
  double min_resolved_fraction = 1.0;
  double aggregate_fraction = 1.0;        ///< over all spatial pairs
  double window = 0.0;
  int calibrated_sign = +1;               ///< FFT bin sign of e^{+i w t}
};

/// Tapered FFT of t -> kernel(t, s_0) per Fourier mode (diagonal entries) and
/// over all spatial pairs. The kernel's t_list must be uniform with one s.
HadamardReport hadamard_frequency_proxy(const TwoPointKernel& kernel, const SpatialGrid& grid,
                                        const HadamardOptions& opts = {});

/// Energy fraction of a sampled signal on the positive-frequency half-line
/// (bins of e^{+i w t}), after the optional Hann taper.
double positive_frequency_fraction(const CVec& samples, bool taper = true);

}  // namespace kgd
