#pragma once
// Periodic spatial grid, Fourier spectral calculus, weighted products and the
// numerical gauges used as surrogates for the operator classes.

#include "kgd/linalg.hpp"

#include <map>
#include <optional>

namespace kgd {

/// Periodic 1-d grid x_j = j L / N with FFT-ordered wavenumbers.
struct SpatialGrid {
  int n_points = 0;
  double length = 0.0;
  RVec points;       ///< x_j
  RVec wavenumbers;  ///< k_j in FFT layout: 0, 1, ..., N/2-1, -N/2, ..., -1 (times 2 pi / L)
  Mat fourier;       ///< unitary DFT matrix F, (F u)_k = N^{-1/2} sum_j e^{-i k x_j} u_j
  Mat dx;            ///< spectral first derivative F^H diag(i k) F (skew-Hermitian)

  double spacing() const { return length / n_points; }
  double k_max() const { return wavenumbers.cwiseAbs().maxCoeff(); }
  /// Signed distance of x_j from the grid centre L/2.
  RVec centered_points() const;
};

SpatialGrid build_grid(int n_points, double length);

/// Forward/inverse unitary DFT of a grid vector (FFT based).
CVec fft_forward(const SpatialGrid& grid, const CVec& u);
CVec fft_inverse(const SpatialGrid& grid, const CVec& u);

/// Density samples |h|^{1/2}(x_j) * L / N.
struct WeightedProduct {
  RVec density;
  static WeightedProduct uniform(const SpatialGrid& grid);
  static WeightedProduct from_metric(const SpatialGrid& grid, const RVec& h_samples);
};

/// A dense matrix together with the product in which adjoints are taken.
struct OperatorMatrix {
  Mat entries;
  WeightedProduct product_context;
};

OperatorMatrix weighted_adjoint(const OperatorMatrix& A);

/// <D>^m = F^H diag((1 + k^2)^{m/2}) F (flat reference metric).
Mat sobolev_weight(const SpatialGrid& grid, double m);

/// Diagonal multiplication by <x~_j>^k with x~ the centred coordinate.
Mat position_weight(const SpatialGrid& grid, double k);

/// Table of weighted norms || <D>^m A <D>^m || (and optionally with <x>^k).
struct SmoothingGauge {
  std::vector<double> orders;
  std::map<double, double> values;
  std::map<std::pair<double, double>, double> spatial_orders;
  double k_max = 0.0;

  /// values[m] / <k_max>^{2m}: the fraction of the largest amplification a
  /// band-limited operator could show; decays in m for smoothing operators.
  double normalized(double m) const;
  /// normalized(m_hi) / normalized(m_lo).
  double decay_ratio(double m_lo, double m_hi) const;
};

/// Works for N x N operators and for 2N x 2N block operators (weights act
/// block-diagonally).
SmoothingGauge smoothing_gauge(const SpatialGrid& grid, const Mat& A,
                               const std::vector<double>& orders,
                               const std::vector<double>& spatial_k = {});

/// Largest |entry| of A in the Fourier basis over rows/columns with
/// |k| > k_band (block operators handled per block).
double fourier_tail(const SpatialGrid& grid, const Mat& A, double k_band);

/// Transform a (block) operator to the Fourier basis.
Mat to_fourier(const SpatialGrid& grid, const Mat& A);
Mat from_fourier(const SpatialGrid& grid, const Mat& A_hat);

/// Diagonal-in-Fourier operator with the given symbol values f(k_j).
Mat fourier_multiplier(const SpatialGrid& grid, const std::function<cplx(double)>& symbol);

}  // namespace kgd
