#pragma once
// Retarded/advanced propagators by quadrature on the propagation grid, the
// Feynman kernel built from the auxiliary diagonal evolution, and the checks
// relating it to P, to positivity, to scattering data and to the reference
// two-point function.

#include "kgd/states.hpp"

namespace kgd {

enum class KernelKind { retarded, advanced, causal, feynman };
enum class KernelLevel { scalar, block };
std::string to_string(KernelKind k);
std::string to_string(KernelLevel l);

/// Kernel blocks sampled on nodes: N x N (scalar) or 2N x 2N (block).
struct KernelOperator {
  KernelKind kind = KernelKind::retarded;
  KernelLevel level = KernelLevel::scalar;
  std::vector<double> t_list, s_list;
  std::vector<Mat> blocks;  ///< row-major over (t, s)
  std::string quadrature = "composite Simpson with Euler-Maclaurin end correction";
  const Mat& at(int i, int j) const { return blocks[static_cast<size_t>(i) * s_list.size() + j]; }
};

/// Values on every node of a propagation grid.
using GridField = std::vector<CVec>;

/// I_k = int_{t_0}^{t_k} g dt by composite Simpson (3/8 closure at the start
/// for odd k), minus the leading Euler-Maclaurin terms built from g''' on nodes <= t_k.
GridField cumulative_simpson(const GridField& g, double dt);

/// Sampled kernels. Scalar: G+(t,s) = -i pi_0 U(t,s) pi_1^* theta(t-s), G- = +i ... theta(s-t).
/// Block: G+(t,s) = i U(t,s) theta(t-s), G- = -i U(t,s) theta(s-t), with theta(0) = 1/2.
/// Causal: G+ - G-.
KernelOperator sample_propagator(KernelKind kind, KernelLevel level, const PropagationTable& U,
                                 const std::vector<double>& t_list, const std::vector<double>& s_list);

/// (G+- f)(t_k) on every node (sign = +1 retarded, -1 advanced). The source
/// must vanish on the first and last `margin` nodes (support overflow otherwise).
GridField retarded_advanced(KernelLevel level, const PropagationTable& U, const GridField& f, int sign,
                            int margin = 4);

/// max ||P u - f|| over interior nodes with P = d_t^2 + r d_t + a (scalar)
/// or P = D_t - gen(t), D_t = -i d_t (block); stencils of the given order.
struct OperatorResidual {
  double max_residual = 0.0;
  double max_source = 0.0;
  double max_solution = 0.0;
  int samples = 0;
};
OperatorResidual scalar_residual(const ModelOperatorData& model, const GridField& u, const GridField& f,
                                 int stencil_order = 8);
OperatorResidual block_residual(const BlockOperatorFamily& gen, const GridField& u, const GridField& f,
                                int stencil_order = 8);

/// max ||D_t G+(t,s) - (D_s G-(s,t))^H|| / max ||D_t G+(t,s)||: G+^* = G- in the
/// space-time product (scalar level; t_list == s_list).
double adjoint_relation_defect(const KernelOperator& plus, const KernelOperator& minus,
                               const ModelOperatorData& model);

/// G^ad_F(t,s) = i theta(t-s) Uf(t,0) pi+ Uf(0,s) - i theta(s-t) Uf(t,0) pi- Uf(0,s),
/// with Uf the diagonal evolution U^d (or U^ad for the reference kernel).
KernelOperator feynman_block(const PropagationTable& Uf, const std::vector<double>& t_list,
                             const std::vector<double>& s_list);
/// G^ad_F f on every node.
GridField feynman_block_apply(const PropagationTable& Uf, const GridField& f, int margin = 4);

/// max_t ||G(t+, t) - G(t-, t) - i 1|| over the nodes.
double feynman_jump_defect(const PropagationTable& Uf, const std::vector<double>& t_list);

/// max_{t != s} ||i^{-1}(G(t,s) - G(s,t)^dagger) - Uf(t,0) q^ad Uf(0,s)||, with the
/// q^ad-adjoint taken between slice products (t_list == s_list).
double feynman_hermitian_defect(const KernelOperator& block, const PropagationTable& Uf,
                                const ModelOperatorData& model);

/// Scattering-data conditions pi- U^ad_out(0, T) u(T) and pi+ U^ad_in(0, -T) u(-T)
/// for u = G^ad_F f at the horizons of the grid, relative to max ||u||.
struct BoundaryReport {
  double out_defect = 0.0;
  double in_defect = 0.0;
  double max_solution = 0.0;
};
BoundaryReport feynman_boundary_conditions(const DiagonalizationPack& pack, const PropagationTable& Uf,
                                           const GridField& f);

/// G_F = -pi_0 T G^ad_F T^{-1} pi_1^*.
KernelOperator feynman_scalar(const KernelOperator& block, const DiagonalizationPack& pack);

/// K(t, s) = (P G_F(., s))(t) at nodes with |t - s| beyond the stencil reach.
struct FeynmanResidual {
  double max_residual = 0.0;
  double max_kernel = 0.0;
  double max_fourier_tail = 0.0;   ///< beyond k_band
  SmoothingGauge gauge;            ///< of the largest residual block
  int samples = 0;
};
FeynmanResidual feynman_scalar_residual(const DiagonalizationPack& pack, const PropagationTable& Uf,
                                        const std::vector<double>& s_list, double k_band, int stride = 20,
                                        int stencil_order = 8, const std::vector<double>& orders = {0, 1, 2});

/// Spectrum of the sampled form i (G_F - G_F^*) (and of i^{-1}(G_F - G_F^*) = its negative)
/// in the space-time product (t_list == s_list).
struct FeynmanPositivity {
  double min_eig_i = 0.0, max_eig_i = 0.0;          ///< i (G_F - G_F^*)
  double min_eig_i_inverse = 0.0;                   ///< i^{-1}(G_F - G_F^*)
};
FeynmanPositivity feynman_positivity(const KernelOperator& g_f, const ModelOperatorData& model);

/// View of a scalar kernel as a two-point kernel for the frequency proxy
/// (sign selects the half-line that is scored).
TwoPointKernel as_two_point(const KernelOperator& k, int sign);

/// c Lambda+_ref + sigma G_{+-} candidates: P-residual on a smooth source and
/// distance to G_F on the sampled kernel grid.
struct FeynmanCandidate {
  std::string label;
  cplx lambda_coefficient;
  int propagator_sign = +1;  ///< +1: G+, -1: G-
  int sigma = +1;            ///< coefficient of G+-
  double p_residual = 0.0;   ///< max ||P u - f|| / max ||f||
  double distance = 0.0;     ///< max ||G_F - candidate|| / max ||G_F||
};
struct FeynmanStateReport {
  std::vector<FeynmanCandidate> candidates;
  int selected = -1;
  double max_difference = 0.0;    ///< at the selected candidate
  SmoothingGauge gauge;           ///< of the largest difference block
  double fourier_tail = 0.0;      ///< beyond k_band, largest over samples
};
FeynmanStateReport feynman_vs_state(const KernelOperator& g_f, const CovariancePair& ref, const PropagationTable& U,
                                    const ModelOperatorData& model, const GridField& source, double k_band,
                                    double p_tol = 1e-6, const std::vector<double>& orders = {0, 1, 2});

}  // namespace kgd
