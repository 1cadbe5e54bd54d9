#ifndef METRON_FE_SOLVER_HPP
#define METRON_FE_SOLVER_HPP

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "metron/bundle.hpp"
#include "metron/tolerances.hpp"
#include "metron/transport.hpp"

namespace metron {

/// Hom-curvature operator Phi -> R_ij Phi - Phi R*_ij at x, as an r^2 x r^2
/// matrix on row-major vectorisations. Values of FE(nabla nabla*) solutions
/// lie in its kernel.
Eigen::MatrixXd homCurvatureAction(const Connection& nabla, const Connection& nablaStar, const Eigen::VectorXd& x,
                                   int i, int j);

struct ConstraintSubspace {
  Eigen::MatrixXd basis;           // r^2 x k, orthonormal columns (canonical order)
  std::vector<int> dimsPerOrder;   // dim K_0, dim K_1, ...
  bool stabilized = false;
  int stabilizedOrder = -1;        // first n with dim K_{n+1} == dim K_n (or K_n == 0)
  int dimension() const { return static_cast<int>(basis.cols()); }
};

/// Intersects the kernels of the Hom-curvature and its successive derivatives
/// along the flow at x0. `ambient`, when given, restricts the search to its
/// column span (r^2 x d).
ConstraintSubspace stabilizedConstraintSubspace(const Connection& nabla, const Connection& nablaStar,
                                                const Eigen::VectorXd& x0, int maxOrder = 3,
                                                const std::optional<Eigen::MatrixXd>& ambient = std::nullopt,
                                                double kernelCutoff = 1e-8);

struct FeOptions {
  Tolerances tol;
  std::optional<Eigen::VectorXd> basePoint;  // snapped to the nearest grid node; default: domain centre
  std::optional<int> gridPerAxis;            // default: domain.gridPerAxis
};

struct SolutionSpace {
  Eigen::VectorXd basePoint;
  int baseNode = -1;
  SampleGrid grid{{0.0}, {1.0}, 1};
  std::vector<Eigen::MatrixXd> basis;                   // values at basePoint, orthonormal (Frobenius)
  std::vector<std::vector<Eigen::MatrixXd>> extensions; // [basis element][grid node]
  int dimension = 0;
  double certifiedResidual = 0.0;  // worst non-tree gap / max(1, max |extension value|)
  int rejected = 0;                // constraint directions dropped by the extension check
  ConstraintSubspace constraints;
  bool stabilized() const { return constraints.stabilized; }
};

SolutionSpace solveFE(const Connection& nabla, const Connection& nablaStar, const FeOptions& opts = {});

/// nabla-parallel symmetric or antisymmetric bilinear forms.
SolutionSpace solveParallelForms(const Connection& nabla, FormSymmetry symmetry, const FeOptions& opts = {});

/// Max over grid nodes, axes and entries of |d_i phi - (Gamma_i phi - phi Gamma*_i)|
/// for an extension field, divided by max(1, max |phi|). d_i phi is taken by
/// central differences of values transported in from a neighbouring node.
double substitutionResidual(const Connection& nabla, const Connection& nablaStar, const SampleGrid& grid,
                            const std::vector<Eigen::MatrixXd>& field, int steps = 64, double delta = 1e-4);

}  // namespace metron

#endif  // METRON_FE_SOLVER_HPP
