#pragma once
// Metric scenarios, assembly of the model operator data a(t), r(t), the
// conformal and flow reductions, and the geometric checks (non-trapping,
// positivity of the asymptotic mass term).

#include "kgd/discretization.hpp"

#include <map>
#include <memory>

namespace kgd {

using Field = std::function<double(double t, double x)>;
using Profile = std::function<double(double x)>;

/// Declarative description of g = -c^2 dt^2 + h (dx - b dt)^2 and V.
struct MetricScenario {
  std::string name;
  int spacetime_dim = 2;  ///< n; the grid is always d = 1, n > 2 only for profile checks
  Field h, c, b, V;
  Field dh_dt;  ///< optional analytic time derivative of h
  Profile h_out, h_in, c_out, c_in, V_out, V_in;
  double delta = 2.0;
  double mu_prime = 2.0;
  double mass_floor = 1.0;
  bool lapse_is_one = true;
  bool shift_is_zero = true;
  bool time_independent = false;
  std::string hypothesis = "td";  ///< "static", "td" or "std"
  std::map<std::string, double> params;
};

/// Named scenario presets; parameters override defaults.
std::vector<std::string> preset_names();
MetricScenario make_preset(const std::string& name, const std::map<std::string, double>& params,
                           double length);
/// Default parameters of a preset (for documentation and config echo).
std::map<std::string, double> preset_defaults(const std::string& name);

/// Time-indexed family of N x N matrices.
struct OperatorFamily {
  TimeGrid times;
  std::vector<Mat> slices;
  double declared_order = 0.0;
  double declared_decay = 0.0;
  /// A single stored slice denotes a time-independent family.
  const Mat& operator[](int k) const { return slices.size() == 1 ? slices[0] : slices[k]; }
  int size() const { return static_cast<int>(slices.size()); }
  bool is_constant() const { return slices.size() == 1; }
};

/// a(t), r(t), asymptotic operators and slice densities for P = d_t^2 + r d_t + a.
struct ModelOperatorData {
  std::shared_ptr<const SpatialGrid> grid;
  TimeGrid times;
  OperatorFamily a;
  std::vector<RVec> r;        ///< diagonal friction term per slice
  std::vector<RVec> density;  ///< slice densities |h|^{1/2} dx
  Mat a_out, a_in;
  RVec density_out, density_in;
  double symmetrization_defect = 0.0;  ///< max ||A - A^dagger|| / ||A|| before symmetrization
  double max_dh_dt = 0.0;              ///< max |d_t h| over the sampled window
  bool time_independent = false;
  double mass_floor = 1.0;
  double delta = 2.0;
  std::string hypothesis = "td";
  std::string scenario_name;

  const RVec& dens(int k) const { return density.size() == 1 ? density[0] : density[k]; }
  const RVec& fric(int k) const { return r.size() == 1 ? r[0] : r[k]; }
  WeightedProduct product(int k) const { return WeightedProduct{dens(k)}; }
};

/// Spatial operator -h^{-1/2} d_x h^{-1/2} d_x + V at fixed time (d = 1).
Mat spatial_operator(const SpatialGrid& grid, const RVec& h, const RVec& V);

ModelOperatorData assemble_model(const MetricScenario& scenario, const SpatialGrid& grid,
                                 const TimeGrid& times);

/// Record of the conformal rescaling used to reach the model form.
struct ConformalRecord {
  int spacetime_dim = 2;
  Field c_hat;
  /// Multiplier exponent n/2 - 1 (zero for n = 2).
  double exponent() const { return 0.5 * spacetime_dim - 1.0; }
  /// 2x2 Cauchy-data conversion block c^{n/2-1} [[1,0],[-i(n/2-1) d_t ln c, 1]] at (t, x).
  Eigen::Matrix2cd cauchy_block(double t, double x) const;
};

std::pair<MetricScenario, ConformalRecord> conformal_reduce(const MetricScenario& scenario,
                                                            const SpatialGrid& grid);

/// Flow y(t, 0, x) of the shift vector field and its asymptotic limits.
struct FlowRecord {
  TimeGrid times;
  RVec x;
  RMat y;    ///< y(t_k, 0, x_j)
  RMat y_x;  ///< d_x y(t_k, 0, x_j)
  RVec y_out, y_in;
  double out_rate = 0.0;  ///< fitted exponent of |y(t) - y_out| against t (expected 1 - mu')
  double step = 1e-3;
  Field b;
  /// y(t, 0, x) and d_x y; table lookup on nodes, direct integration otherwise.
  std::pair<double, double> map(double t, double x) const;
};

FlowRecord integrate_flow(const Field& b, const TimeGrid& times, const RVec& x, double step = 1e-3);

std::pair<MetricScenario, FlowRecord> flow_straighten(const MetricScenario& scenario,
                                                      const SpatialGrid& grid, const TimeGrid& times,
                                                      double step = 1e-3);

/// Rectangle in (t, x).
struct Box {
  double t_min = -10, t_max = 10, x_min = -10, x_max = 10;
  double radius() const { return 0.5 * std::max(t_max - t_min, x_max - x_min); }
};

struct NontrappingReport {
  bool trapped = false;
  int n_trapped = 0;
  std::vector<double> escape_times;  ///< elapsed coordinate time |t_exit - t_seed|, -1 if trapped
  std::vector<double> escape_params; ///< affine parameter at exit
  double budget = 0.0;               ///< affine-parameter budget used
};

/// Traces null bicharacteristics of p = -xi_t^2/c^2 + xi_x^2/h from seeds on
/// the line t = t_mid of the box, both spatial directions.
NontrappingReport nontrapping_check(const Field& c, const Field& h, const Box& box, int n_rays,
                                    double budget_factor = 50.0);

struct PositivityReport {
  double min_value = 0.0;
  bool pass = false;
};

/// Scalar curvature of the conformally flat Riemannian metric e^{2 psi(x^1)} delta
/// in d dimensions (psi and derivatives supplied).
double conformally_flat_curvature(int d, double psi, double dpsi, double ddpsi);

/// Evaluates (n-2)/(4(n-1)) (R_{c^-2 h} - c^2 R_g) + c^2 V on the out/in
/// profiles over the grid points (spatial metric h(x) delta_ij, lapse c(x)).
PositivityReport positivity_check(const MetricScenario& scenario, const RVec& x_samples);

}  // namespace kgd
