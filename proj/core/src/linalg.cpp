#include "kgd/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace kgd {

int TimeGrid::nearest(double t) const {
  int k = static_cast<int>(std::lround((t - t0) / dt));
  return std::clamp(k, 0, count - 1);
}

int TimeGrid::interval(double t) const {
  int k = static_cast<int>(std::floor((t - t0) / dt + 1e-12));
  return std::clamp(k, 0, std::max(0, count - 2));
}

TimeGrid TimeGrid::symmetric(double T, double dt) {
  if (!(T > 0) || !(dt > 0)) throw KgdError("time grid needs T > 0 and dt > 0");
  int half = static_cast<int>(std::lround(T / dt));
  if (std::abs(half * dt - T) > 1e-9 * T)
    throw KgdError("time grid: T must be an integer multiple of dt");
  return TimeGrid{-half * dt, dt, 2 * half + 1};
}

double spectral_norm(const Mat& A) {
  if (A.size() == 0) return 0.0;
  // Largest eigenvalue of the smaller Gram matrix; much cheaper than a full SVD.
  const Mat G = A.rows() >= A.cols() ? Mat(A.adjoint() * A) : Mat(A * A.adjoint());
  Eigen::SelfAdjointEigenSolver<Mat> es(G, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

RVec singular_values(const Mat& A) {
  Eigen::BDCSVD<Mat> svd(A);
  return svd.singularValues();
}

RVec block_density(const RVec& density, int blocks) {
  RVec out(density.size() * blocks);
  for (int b = 0; b < blocks; ++b) out.segment(b * density.size(), density.size()) = density;
  return out;
}

Mat weighted_adjoint(const Mat& A, const RVec& density) {
  const int n = static_cast<int>(density.size());
  if (A.rows() != n || A.cols() != n) {
    // Block operators: repeat the density over the blocks.
    if (A.rows() % n == 0 && A.rows() == A.cols())
      return weighted_adjoint(A, block_density(density, static_cast<int>(A.rows() / n)));
    throw KgdError("weighted_adjoint: shape mismatch");
  }
  return density.cwiseInverse().asDiagonal() * A.adjoint() * density.asDiagonal();
}

Mat weighted_hermitian_part(const Mat& A, const RVec& density) {
  return 0.5 * (A + weighted_adjoint(A, density));
}

namespace {
// Hermitian representative D^{1/2} A D^{-1/2}.
Mat to_hermitian(const Mat& A, const RVec& density, RVec& s) {
  RVec d = density;
  if (A.rows() != d.size()) d = block_density(density, static_cast<int>(A.rows() / density.size()));
  s = d.cwiseSqrt();
  Mat H = s.asDiagonal() * A * s.cwiseInverse().asDiagonal();
  return 0.5 * (H + H.adjoint());
}
}  // namespace

RVec weighted_eigenvalues(const Mat& A, const RVec& density) {
  RVec s;
  Mat H = to_hermitian(A, density, s);
  Eigen::SelfAdjointEigenSolver<Mat> es(H, Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

Mat weighted_function(const Mat& A, const RVec& density, const std::function<double(double)>& f) {
  RVec s;
  Mat H = to_hermitian(A, density, s);
  Eigen::SelfAdjointEigenSolver<Mat> es(H);
  RVec fv = es.eigenvalues().unaryExpr(f);
  Mat R = es.eigenvectors() * fv.asDiagonal() * es.eigenvectors().adjoint();
  return s.cwiseInverse().asDiagonal() * R * s.asDiagonal();
}

Mat weighted_function_c(const Mat& A, const RVec& density, const std::function<cplx(double)>& f) {
  RVec s;
  Mat H = to_hermitian(A, density, s);
  Eigen::SelfAdjointEigenSolver<Mat> es(H);
  CVec fv(es.eigenvalues().size());
  for (int i = 0; i < fv.size(); ++i) fv(i) = f(es.eigenvalues()(i));
  Mat R = es.eigenvectors() * fv.asDiagonal() * es.eigenvectors().adjoint();
  return s.cwiseInverse().asDiagonal() * R * s.asDiagonal();
}

WeightedSpectral WeightedSpectral::of(const Mat& A, const RVec& density) {
  RVec s;
  Mat H = to_hermitian(A, density, s);
  Eigen::SelfAdjointEigenSolver<Mat> es(H);
  WeightedSpectral ws;
  ws.values = es.eigenvalues();
  ws.right = s.cwiseInverse().asDiagonal() * es.eigenvectors();
  ws.left = es.eigenvectors().adjoint() * s.asDiagonal();
  return ws;
}

Mat WeightedSpectral::apply(const std::function<cplx(double)>& f) const {
  CVec fv(values.size());
  for (int i = 0; i < fv.size(); ++i) fv(i) = f(values(i));
  return right * fv.asDiagonal() * left;
}

std::vector<double> fd_weights(const std::vector<double>& x, double x0, int m) {
  // Fornberg (1988) recursion.
  const int n = static_cast<int>(x.size()) - 1;
  std::vector<std::vector<double>> c(n + 1, std::vector<double>(m + 1, 0.0));
  double c1 = 1.0, c4 = x[0] - x0;
  c[0][0] = 1.0;
  for (int i = 1; i <= n; ++i) {
    int mn = std::min(i, m);
    double c2 = 1.0, c5 = c4;
    c4 = x[i] - x0;
    for (int j = 0; j < i; ++j) {
      double c3 = x[i] - x[j];
      c2 *= c3;
      if (j == i - 1) {
        for (int k = mn; k >= 1; --k) c[i][k] = c1 * (k * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
        c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
      }
      for (int k = mn; k >= 1; --k) c[j][k] = (c4 * c[j][k] - k * c[j][k - 1]) / c3;
      c[j][0] = c4 * c[j][0] / c3;
    }
    c1 = c2;
  }
  std::vector<double> w(n + 1);
  for (int i = 0; i <= n; ++i) w[i] = c[i][m];
  return w;
}

Stencil derivative_stencil(int k, int n, int deriv, int order) {
  // Central stencils need (deriv + order - 1) nodes rounded up to odd.
  int width = deriv + order - 1;
  if (width % 2 == 0) ++width;
  if (width > n) throw KgdError("time grid too short for the finite-difference stencil");
  int half = width / 2;
  int first = std::clamp(k - half, 0, n - width);
  Stencil s;
  std::vector<double> nodes;
  for (int i = 0; i < width; ++i) {
    s.offsets.push_back(first + i - k);
    nodes.push_back(static_cast<double>(first + i - k));
  }
  s.weights = fd_weights(nodes, 0.0, deriv);
  return s;
}

template <class T>
static std::vector<T> derivative_impl(const std::vector<T>& f, double dt, int order) {
  const int n = static_cast<int>(f.size());
  std::vector<T> out(n);
  for (int k = 0; k < n; ++k) {
    Stencil s = derivative_stencil(k, n, 1, order);
    T acc = f[k] * 0.0;
    for (size_t i = 0; i < s.offsets.size(); ++i) {
      if (s.weights[i] != 0.0) acc += (s.weights[i] / dt) * f[k + s.offsets[i]];
    }
    out[k] = acc;
  }
  return out;
}

std::vector<Mat> time_derivative(const std::vector<Mat>& family, double dt, int order) {
  return derivative_impl(family, dt, order);
}

std::vector<RVec> time_derivative(const std::vector<RVec>& family, double dt, int order) {
  return derivative_impl(family, dt, order);
}

InterpWeights cubic_weights(const TimeGrid& grid, double t) {
  InterpWeights w;
  if (grid.count < 4) throw KgdError("cubic interpolation needs at least 4 time nodes");
  int k = grid.interval(t);
  w.first = std::clamp(k - 1, 0, grid.count - 4);
  double x[4];
  for (int i = 0; i < 4; ++i) x[i] = grid.at(w.first + i);
  for (int i = 0; i < 4; ++i) {
    double num = 1.0, den = 1.0;
    for (int j = 0; j < 4; ++j) {
      if (j == i) continue;
      num *= (t - x[j]);
      den *= (x[i] - x[j]);
    }
    w.w[i] = num / den;
  }
  return w;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
  if (n < 2 || y.size() != n) throw KgdError("loglog_slope needs at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace kgd
