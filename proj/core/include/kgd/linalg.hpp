#pragma once
// Shared numeric vocabulary: complex dense matrices, uniform time grids,
// weighted spectral calculus, finite-difference stencils and interpolation.

#include <Eigen/Dense>

#include <complex>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace kgd {

using cplx = std::complex<double>;
using Mat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RVec = Eigen::VectorXd;
using RMat = Eigen::MatrixXd;

inline const cplx kI{0.0, 1.0};

/// Error raised for violated preconditions and configuration problems.
class KgdError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Uniform time grid t_k = t0 + k*dt, k = 0..count-1.
struct TimeGrid {
  double t0 = 0.0;
  double dt = 1.0;
  int count = 1;

  double at(int k) const { return t0 + dt * k; }
  double t_end() const { return at(count - 1); }
  bool contains(double t, double slack = 1e-12) const {
    return t >= t0 - slack && t <= t_end() + slack;
  }
  /// Index of the node closest to t.
  int nearest(double t) const;
  /// Index k with t_k <= t < t_{k+1}, clamped to [0, count-2].
  int interval(double t) const;
  /// Grid symmetric about zero, [-T, T], with t = 0 a node.
  static TimeGrid symmetric(double T, double dt);
};

/// Operator 2-norm (largest singular value).
double spectral_norm(const Mat& A);

/// Singular values in decreasing order.
RVec singular_values(const Mat& A);

/// Block-diagonal repetition of a vector of densities for 2x2 block operators.
RVec block_density(const RVec& density, int blocks = 2);

/// A^dagger = D^{-1} A^H D for the diagonal density D.
Mat weighted_adjoint(const Mat& A, const RVec& density);

/// Hermitian part (A + A^dagger)/2 in the density product.
Mat weighted_hermitian_part(const Mat& A, const RVec& density);

/// Eigenvalues (ascending) of a density-self-adjoint matrix.
RVec weighted_eigenvalues(const Mat& A, const RVec& density);

/// f(A) for A self-adjoint in the density product, by conjugation with
/// D^{1/2} and Hermitian eigendecomposition.
Mat weighted_function(const Mat& A, const RVec& density,
                      const std::function<double(double)>& f);

/// Complex-valued variant (used for exp(i t eps)).
Mat weighted_function_c(const Mat& A, const RVec& density,
                        const std::function<cplx(double)>& f);

/// Eigendecomposition of a density-self-adjoint matrix, reusable for many
/// functions: f(A) = right * diag(f(values)) * left.
struct WeightedSpectral {
  RVec values;
  Mat right, left;
  static WeightedSpectral of(const Mat& A, const RVec& density);
  Mat apply(const std::function<cplx(double)>& f) const;
};

/// Finite-difference weights (Fornberg) for derivative `deriv` at x0 on nodes.
std::vector<double> fd_weights(const std::vector<double>& nodes, double x0, int deriv);

/// First time derivative of a sampled family by central stencils of the given
/// (even) order; one-sided stencils of the same order near the ends.
std::vector<Mat> time_derivative(const std::vector<Mat>& family, double dt, int order = 4);
std::vector<RVec> time_derivative(const std::vector<RVec>& family, double dt, int order = 4);

/// Stencil (offsets, weights) used at node k of an n-node grid.
struct Stencil {
  std::vector<int> offsets;
  std::vector<double> weights;
};
Stencil derivative_stencil(int k, int n, int deriv, int order);

/// Cubic Lagrange interpolation weights on nodes k-1..k+2 (clamped at ends),
/// returned as (first index, 4 weights).
struct InterpWeights {
  int first = 0;
  double w[4] = {0, 0, 0, 0};
};
InterpWeights cubic_weights(const TimeGrid& grid, double t);

/// <t> = sqrt(1 + t^2).
inline double japanese(double t) { return std::sqrt(1.0 + t * t); }

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace kgd
