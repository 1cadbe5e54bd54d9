#ifndef METRON_TRANSPORT_HPP
#define METRON_TRANSPORT_HPP

#include <array>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "metron/bundle.hpp"

namespace metron {

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PolylinePath {
  std::vector<Eigen::VectorXd> vertices;
  int stepsPerSegment = 32;

  static PolylinePath segment(const Eigen::VectorXd& a, const Eigen::VectorXd& b, int steps = 32);
  bool closed() const;
  PolylinePath reversed() const;
  /// Throws TransportError for too few steps, repeated vertices or points outside the box.
  void validate(const ChartDomain& domain) const;
};

struct TransportResult {
  Eigen::MatrixXd endFrame;
  double localTruncationEstimate = 0.0;  // |RK4(n) - RK4(2n)| * 16/15
};

/// Linear flow of Hom(E, E) along curves: along x(t),
///   dPhi/dt = sum_i x'^i(t) (Gamma_i Phi - Phi Gamma*_i),
/// which is the condition D^{nabla nabla*} Phi (x', .) = 0 written for
/// Phi(alpha, beta) = phi_alpha^beta. Integrated with classical RK4.
class HomFlow {
 public:
  HomFlow(const Connection& source, const Connection& target);

  int rank() const { return rank_; }
  int dim() const { return dim_; }

  /// Transports every matrix in `frames` along the straight segment a -> b.
  void segment(const Eigen::VectorXd& a, const Eigen::VectorXd& b, int steps,
               std::vector<Eigen::MatrixXd>& frames) const;
  void path(const PolylinePath& p, std::vector<Eigen::MatrixXd>& frames) const;

  /// Gamma_i Phi - Phi Gamma*_i at x.
  Eigen::MatrixXd derivative(const Eigen::VectorXd& x, int axis, const Eigen::MatrixXd& phi) const;

 private:
  CompiledMatrices source_;
  CompiledMatrices target_;
  int dim_;
  int rank_;

  void directional(const Eigen::VectorXd& x, const Eigen::VectorXd& dir, Eigen::MatrixXd& m,
                   Eigen::MatrixXd& mstar) const;
};

TransportResult transportHom(const Connection& nabla, const Connection& nablaStar, const PolylinePath& path,
                             const Eigen::MatrixXd& phi0);

/// Parallel transport of a section's component vector in E.
TransportResult transportVector(const Connection& nabla, const PolylinePath& path, const Eigen::VectorXd& v0);

/// Parallel transport of a bilinear form Q(alpha, beta) = Q(s_alpha, s_beta).
TransportResult transportForm(const Connection& nabla, const PolylinePath& path, const Eigen::MatrixXd& q0);

/// Operator phi0 -> transport of phi0 around a closed loop, as an r^2 x r^2
/// matrix acting on row-major vectorisations.
Eigen::MatrixXd loopHolonomyHom(const Connection& nabla, const Connection& nablaStar, const PolylinePath& loop);

/// BFS spanning tree of the grid graph rooted at `root`; neighbours are
/// visited axis by axis, lower index first.
struct SpanningTree {
  std::vector<int> parent;  // -1 at the root
  std::vector<int> order;   // BFS order, root first
  std::vector<std::pair<int, int>> nonTreeEdges;

  static SpanningTree build(const SampleGrid& grid, int root);
};

struct GridExtension {
  int baseNode = -1;
  std::vector<Eigen::MatrixXd> values;  // one per grid node
  double pathIndependenceResidual = 0.0;
};

/// Extends several base values at once. `discrepancy` stacks, per candidate
/// (column), the entrywise gaps along every non-tree edge.
struct BatchExtension {
  std::vector<std::vector<Eigen::MatrixXd>> values;  // [candidate][node]
  Eigen::MatrixXd discrepancy;
};

BatchExtension extendBatch(const HomFlow& flow, const SampleGrid& grid, int root,
                           const std::vector<Eigen::MatrixXd>& candidates, int stepsPerEdge);

GridExtension spanningTreeExtend(const Connection& nabla, const Connection& nablaStar, const Eigen::VectorXd& x0,
                                 const Eigen::MatrixXd& phi0, const SampleGrid& grid, int stepsPerEdge = 64);

/// Field values at x +- delta e_axis and x +- 2 delta e_axis, produced by
/// transporting the value stored at a neighbouring node (along another axis
/// when dim > 1). Order: -2, -1, +1, +2.
struct Stencil {
  std::array<Eigen::VectorXd, 4> points;
  std::array<Eigen::MatrixXd, 4> values;
};
Stencil transportStencil(const HomFlow& flow, const SampleGrid& grid, const std::vector<Eigen::MatrixXd>& field,
                         int node, int axis, double delta, int steps);

/// Fourth-order central difference from a stencil's samples.
Eigen::MatrixXd centralDifference(const std::array<Eigen::MatrixXd, 4>& v, double delta);

}  // namespace metron

#endif  // METRON_TRANSPORT_HPP
