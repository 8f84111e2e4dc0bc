#include "kgd/discretization.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>

namespace kgd {

namespace {
bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

// Block-diagonal repetition of an N x N matrix to match A's size.
Mat blockify(const Mat& W, Eigen::Index size) {
  const Eigen::Index n = W.rows();
  if (size == n) return W;
  const Eigen::Index b = size / n;
  Mat out = Mat::Zero(size, size);
  for (Eigen::Index i = 0; i < b; ++i) out.block(i * n, i * n, n, n) = W;
  return out;
}
}  // namespace

RVec SpatialGrid::centered_points() const {
  return points.array() - 0.5 * length;
}

SpatialGrid build_grid(int n_points, double length) {
  if (n_points < 8 || !is_power_of_two(n_points))
    throw KgdError("build_grid: n_points must be a power of two and >= 8 (got " +
                   std::to_string(n_points) + ")");
  if (!(length > 0)) throw KgdError("build_grid: length must be positive");
  SpatialGrid g;
  g.n_points = n_points;
  g.length = length;
  g.points.resize(n_points);
  g.wavenumbers.resize(n_points);
  for (int j = 0; j < n_points; ++j) {
    g.points(j) = j * length / n_points;
    int idx = j < n_points / 2 ? j : j - n_points;
    g.wavenumbers(j) = 2.0 * M_PI * idx / length;
  }
  g.fourier.resize(n_points, n_points);
  const double norm = 1.0 / std::sqrt(static_cast<double>(n_points));
  for (int k = 0; k < n_points; ++k)
    for (int j = 0; j < n_points; ++j) {
      // Index-based phase keeps the matrix exactly consistent with the FFT.
      double phase = -2.0 * M_PI * static_cast<double>((static_cast<long>(k) * j) % n_points) / n_points;
      g.fourier(k, j) = norm * std::polar(1.0, phase);
    }
  CVec ik = (kI * g.wavenumbers.cast<cplx>());
  g.dx = g.fourier.adjoint() * ik.asDiagonal() * g.fourier;
  return g;
}

CVec fft_forward(const SpatialGrid& grid, const CVec& u) {
  Eigen::FFT<double> fft;
  std::vector<cplx> in(u.data(), u.data() + u.size()), out;
  fft.fwd(out, in);
  CVec r = Eigen::Map<CVec>(out.data(), static_cast<Eigen::Index>(out.size()));
  return r / std::sqrt(static_cast<double>(grid.n_points));
}

CVec fft_inverse(const SpatialGrid& grid, const CVec& u) {
  Eigen::FFT<double> fft;
  std::vector<cplx> in(u.data(), u.data() + u.size()), out;
  fft.inv(out, in);
  CVec r = Eigen::Map<CVec>(out.data(), static_cast<Eigen::Index>(out.size()));
  return r * std::sqrt(static_cast<double>(grid.n_points));
}

WeightedProduct WeightedProduct::uniform(const SpatialGrid& grid) {
  return WeightedProduct{RVec::Constant(grid.n_points, grid.spacing())};
}

WeightedProduct WeightedProduct::from_metric(const SpatialGrid& grid, const RVec& h) {
  if ((h.array() <= 0).any()) throw KgdError("metric samples must be positive");
  return WeightedProduct{h.cwiseSqrt() * grid.spacing()};
}

OperatorMatrix weighted_adjoint(const OperatorMatrix& A) {
  return OperatorMatrix{weighted_adjoint(A.entries, A.product_context.density), A.product_context};
}

Mat fourier_multiplier(const SpatialGrid& grid, const std::function<cplx(double)>& symbol) {
  CVec s(grid.n_points);
  for (int j = 0; j < grid.n_points; ++j) s(j) = symbol(grid.wavenumbers(j));
  return grid.fourier.adjoint() * s.asDiagonal() * grid.fourier;
}

Mat sobolev_weight(const SpatialGrid& grid, double m) {
  return fourier_multiplier(grid, [m](double k) { return cplx(std::pow(1.0 + k * k, 0.5 * m), 0.0); });
}

Mat position_weight(const SpatialGrid& grid, double k) {
  RVec xc = grid.centered_points();
  RVec w = xc.unaryExpr([k](double x) { return std::pow(1.0 + x * x, 0.5 * k); });
  return w.cast<cplx>().asDiagonal();
}

Mat to_fourier(const SpatialGrid& grid, const Mat& A) {
  Mat F = blockify(grid.fourier, A.rows());
  return F * A * F.adjoint();
}

Mat from_fourier(const SpatialGrid& grid, const Mat& A_hat) {
  Mat F = blockify(grid.fourier, A_hat.rows());
  return F.adjoint() * A_hat * F;
}

double SmoothingGauge::normalized(double m) const {
  return values.at(m) / std::pow(1.0 + k_max * k_max, m);
}

double SmoothingGauge::decay_ratio(double m_lo, double m_hi) const {
  double lo = normalized(m_lo);
  if (lo == 0.0) return 0.0;
  return normalized(m_hi) / lo;
}

SmoothingGauge smoothing_gauge(const SpatialGrid& grid, const Mat& A, const std::vector<double>& orders,
                               const std::vector<double>& spatial_k) {
  if (orders.empty()) throw KgdError("smoothing_gauge: orders must be nonempty");
  SmoothingGauge g;
  g.orders = orders;
  g.k_max = grid.k_max();
  const Eigen::Index n = grid.n_points;
  const Eigen::Index b = A.rows() / n;
  Mat Ahat = to_fourier(grid, A);
  for (double m : orders) {
    RVec w(A.rows());
    for (Eigen::Index i = 0; i < b; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        double k = grid.wavenumbers(j);
        w(i * n + j) = std::pow(1.0 + k * k, 0.5 * m);
      }
    Mat W = w.cast<cplx>().asDiagonal() * Ahat * w.cast<cplx>().asDiagonal();
    g.values[m] = spectral_norm(W);
    for (double kx : spatial_k) {
      Mat X = blockify(position_weight(grid, kx), A.rows());
      Mat Dm = blockify(sobolev_weight(grid, m), A.rows());
      g.spatial_orders[{m, kx}] = spectral_norm(Dm * X * A * X * Dm);
    }
  }
  return g;
}

double fourier_tail(const SpatialGrid& grid, const Mat& A, double k_band) {
  Mat Ahat = to_fourier(grid, A);
  const Eigen::Index n = grid.n_points;
  double tail = 0.0;
  for (Eigen::Index i = 0; i < Ahat.rows(); ++i)
    for (Eigen::Index j = 0; j < Ahat.cols(); ++j) {
      double ki = std::abs(grid.wavenumbers(i % n)), kj = std::abs(grid.wavenumbers(j % n));
      if (ki > k_band || kj > k_band) tail = std::max(tail, std::abs(Ahat(i, j)));
    }
  return tail;
}

}  // namespace kgd
