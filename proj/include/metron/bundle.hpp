#ifndef METRON_BUNDLE_HPP
#define METRON_BUNDLE_HPP

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "metron/expr.hpp"
#include "metron/tolerances.hpp"

namespace metron {

/// Uniform cell-centred grid strictly inside a box: node k on an axis sits at
/// lower + (k + 1/2) * (upper - lower) / n.
class SampleGrid {
 public:
  SampleGrid(std::vector<double> lower, std::vector<double> upper, int perAxis);

  int dim() const { return static_cast<int>(lower_.size()); }
  int perAxis() const { return perAxis_; }
  int size() const { return size_; }
  double spacing(int axis) const { return (upper_[axis] - lower_[axis]) / perAxis_; }

  Eigen::VectorXd point(int node) const;
  std::vector<int> multiIndex(int node) const;
  int node(const std::vector<int>& index) const;
  /// Node whose coordinates equal x within tol, or -1.
  int findNode(const Eigen::VectorXd& x, double tol = 1e-12) const;
  int nearestNode(const Eigen::VectorXd& x) const;

 private:
  std::vector<double> lower_;
  std::vector<double> upper_;
  int perAxis_;
  int size_;
};

struct ChartDomain {
  std::vector<double> lower;
  std::vector<double> upper;
  int gridPerAxis = 9;

  int dim() const { return static_cast<int>(lower.size()); }
  void validate() const;
  Eigen::VectorXd center() const;
  bool contains(const Eigen::VectorXd& x) const;
  SampleGrid grid() const { return SampleGrid(lower, upper, gridPerAxis); }
  SampleGrid grid(int perAxis) const { return SampleGrid(lower, upper, perAxis); }
};

/// Dense matrix of expressions.
class ExprMatrix {
 public:
  ExprMatrix() = default;
  ExprMatrix(int rows, int cols) : rows_(rows), cols_(cols), data_(rows * cols) {}

  static ExprMatrix identity(int n);
  static ExprMatrix constant(const Eigen::MatrixXd& m);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  Expr& operator()(int i, int j) { return data_[i * cols_ + j]; }
  const Expr& operator()(int i, int j) const { return data_[i * cols_ + j]; }
  std::span<const Expr> entries() const { return data_; }

  ExprMatrix transpose() const;
  ExprMatrix derivative(int k) const;
  bool isZero() const;
  Eigen::MatrixXd evaluate(std::span<const double> x) const;

  friend ExprMatrix operator+(const ExprMatrix& a, const ExprMatrix& b);
  friend ExprMatrix operator-(const ExprMatrix& a, const ExprMatrix& b);
  friend ExprMatrix operator*(const ExprMatrix& a, const ExprMatrix& b);
  friend ExprMatrix operator*(const Expr& s, const ExprMatrix& a);
  friend ExprMatrix operator-(const ExprMatrix& a);

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<Expr> data_;
};

/// Laplace expansion; intended for n <= 4.
Expr determinant(const ExprMatrix& m);
ExprMatrix adjugate(const ExprMatrix& m);
/// Cofactor inverse adj(m) / det(m).
ExprMatrix inverse(const ExprMatrix& m);

/// Several expression matrices compiled into one tape.
class CompiledMatrices {
 public:
  CompiledMatrices() = default;
  explicit CompiledMatrices(std::span<const ExprMatrix> ms);
  std::vector<Eigen::MatrixXd> evaluate(std::span<const double> x) const;
  void evaluate(std::span<const double> x, std::vector<Eigen::MatrixXd>& out) const;
  const Tape& tape() const { return tape_; }

 private:
  Tape tape_;
  std::vector<std::pair<int, int>> shapes_;
};

/// Koszul connection in a trivialised rank-r bundle over a chart:
/// nabla_{d/dx_i} s_alpha = sum_beta gamma[i](alpha, beta) s_beta.
struct Connection {
  ChartDomain domain;
  int rank = 0;
  std::vector<ExprMatrix> gamma;

  int dim() const { return domain.dim(); }
  void validate() const;
  static Connection zero(const ChartDomain& domain, int rank);
};

enum class FormSymmetry { Symmetric, Antisymmetric };

/// Constant-rank bilinear form field; g(alpha, beta) = g(s_alpha, s_beta).
struct MetricField {
  ChartDomain domain;
  int rank = 0;
  ExprMatrix g;
  int declaredRank = 0;
  FormSymmetry symmetry = FormSymmetry::Symmetric;

  bool regular() const { return declaredRank == rank; }
  static MetricField constant(const ChartDomain& domain, const Eigen::MatrixXd& g);
};

/// phi(s_alpha) = sum_beta phi(alpha, beta) s_beta.
struct GaugeTransform {
  ChartDomain domain;
  int rank = 0;
  ExprMatrix phi;

  static GaugeTransform identity(const ChartDomain& domain, int rank);
};

struct CurvatureField {
  int dim = 0;
  int rank = 0;
  std::vector<ExprMatrix> components;  // index i * dim + j

  const ExprMatrix& at(int i, int j) const { return components[i * dim + j]; }
};

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class SingularMetricError : public GeometryError {
 public:
  using GeometryError::GeometryError;
};
class NonInvertibleGaugeError : public GeometryError {
 public:
  using GeometryError::GeometryError;
};

/// R_ij = d_i Gamma_j - d_j Gamma_i + Gamma_j Gamma_i - Gamma_i Gamma_j.
CurvatureField curvature(const Connection& nabla);

/// Connection g.nabla defined by g(g.nabla_X s, s') = X g(s, s') - g(s, nabla_X s').
Connection amariDual(const MetricField& g, const Connection& nabla, const Tolerances& tol = {});

/// phi^* nabla, with (phi^* nabla)_X s = phi(nabla_X phi^{-1} s).
Connection gaugeAct(const GaugeTransform& phi, const Connection& nabla, const Tolerances& tol = {});

GaugeTransform inverse(const GaugeTransform& phi, const Tolerances& tol = {});

/// phi_* g (s, s') = g(phi^{-1} s, phi^{-1} s').
MetricField pushforwardMetric(const GaugeTransform& phi, const MetricField& g, const Tolerances& tol = {});

struct MetricDerivative {
  std::vector<ExprMatrix> components;  // (nabla g)_i
  double residual = 0.0;               // max |entry| over the sample grid
};
MetricDerivative covariantDerivativeOfMetric(const Connection& nabla, const MetricField& g);

/// Max coefficient gap between phi^*(g.nabla) and (phi_* g).(phi^* nabla).
double quasiCommutativityCheck(const GaugeTransform& phi, const MetricField& g, const Connection& nabla,
                               const Tolerances& tol = {});

/// Levi-Civita connection of a regular metric on the tangent bundle (rank == dim).
Connection leviCivita(const MetricField& g, const Tolerances& tol = {});

/// Connection on E* written in the target slot of FE so that its solutions are
/// the nabla-parallel bilinear forms: Gamma*_i = -Gamma_i^T.
Connection bilinearFormTarget(const Connection& nabla);

/// Max absolute coefficient difference over the sample grid.
double coefficientDistance(const Connection& a, const Connection& b);

/// Throws SingularMetricError unless |det G| and cond(G) pass the regularity gates at every sample point.
void requireRegular(const MetricField& g, const Tolerances& tol = {});
/// SVD rank at every sample point; throws GeometryError if it deviates from declaredRank.
void requireDeclaredRank(const MetricField& g, const Tolerances& tol = {});
void requireInvertible(const GaugeTransform& phi, const Tolerances& tol = {});

}  // namespace metron

#endif  // METRON_BUNDLE_HPP
