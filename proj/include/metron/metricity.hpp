#ifndef METRON_METRICITY_HPP
#define METRON_METRICITY_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "metron/bundle.hpp"
#include "metron/fe_solver.hpp"

namespace metron {

enum class Verdict { RegularlyMetric, SingularMetricOnly, NotMetric };
const char* verdictName(Verdict v);

struct MetricityOptions {
  FeOptions fe;
  std::uint64_t seed = 20240601;
  int randomDraws = 64;
};

struct SplitPhi {
  Eigen::MatrixXd sym;   // Phi
  Eigen::MatrixXd skew;  // Phi*
};

/// g-symmetric and g-antisymmetric parts of phi at a point.
SplitPhi splitPhi(const Eigen::MatrixXd& g, const Eigen::MatrixXd& phi);

struct InducedForms {
  Eigen::MatrixXd q;
  Eigen::MatrixXd omega;
};
InducedForms inducedForms(const Eigen::MatrixXd& g, const SplitPhi& parts);

struct Prop3Result {
  double nablaQ = 0.0;
  double nablaOmega = 0.0;
  std::vector<int> ranks;  // rank of Phi per grid node
  bool rankConstant = true;
};

/// Covariant derivatives of q and omega built from an FE(nabla, g.nabla)
/// solution field on `grid`, by central differences of transported values.
Prop3Result prop3Check(const Connection& nabla, const MetricField& g, const SampleGrid& grid,
                       const std::vector<Eigen::MatrixXd>& phiField, const Tolerances& tol = {}, int steps = 64,
                       double delta = 1e-4);

struct MetricityCertificate {
  Verdict verdict = Verdict::NotMetric;
  int maxRank = 0;
  std::optional<MetricField> witness;  // closed form, when the parallel form is constant
  Eigen::MatrixXd witnessAtBase;       // empty when NotMetric
  std::vector<Eigen::MatrixXd> witnessField;
  bool witnessDefinite = false;
  bool witnessRankConstant = true;
  double witnessMinAbsDet = 0.0;
  int dimS2 = 0;
  int dimOmega2 = 0;
  int dimJ = 0;
  bool exactSequence = false;
  double residualS2 = 0.0;
  double residualOmega2 = 0.0;
  double residualJ = 0.0;
  double witnessResidual = 0.0;
  std::vector<int> dimsPerOrderS2;
  bool stabilized = false;
  bool certified = false;
  std::string note;
  Eigen::VectorXd basePoint;
  std::vector<Eigen::MatrixXd> s2Basis;
  std::vector<Eigen::MatrixXd> omega2Basis;
  Tolerances tol;
};

MetricityCertificate decideMetricity(const Connection& nabla, const MetricityOptions& opts = {});

struct GaugeIndexResult {
  int sb = 0;
  bool emptyJ = false;
  int dimJ = 0;
  bool certified = false;
};

/// Minimal corank of Phi over the solutions of FE(nabla, g.nabla).
GaugeIndexResult gaugeIndex(const Connection& nabla, const MetricField& g, const MetricityOptions& opts = {});

enum class IndexDecision { Zero, AtLeastOne };
const char* indexDecisionName(IndexDecision d);

struct IndexReport {
  int sbGivenG = 0;  // for the first family member (identity if the family is empty)
  int sb = 0;
  IndexDecision ind = IndexDecision::AtLeastOne;
  int maxParallelMetricRank = 0;
  std::vector<int> sbPerMetric;
  std::vector<bool> emptyJPerMetric;
  int familySize = 0;
  bool certified = false;
  MetricityCertificate certificate;
};

/// Constant regular metrics used to widen a declared family: O diag(+-l) O^T with l in [0.5, 2].
std::vector<MetricField> randomConstantMetrics(const ChartDomain& domain, int rank, int count, std::uint64_t seed);

/// The declared family, then the identity, then 8 seeded random constant metrics.
std::vector<MetricField> metricFamily(const Connection& nabla, const std::vector<MetricField>& declared,
                                      std::uint64_t seed);

IndexReport indexReport(const Connection& nabla, const std::vector<MetricField>& declared,
                        const MetricityOptions& opts = {});

struct SplitGeometry {
  Eigen::MatrixXd kernel;
  Eigen::MatrixXd image;
  bool direct = false;
};
struct PointDecomposition {
  SplitGeometry sym;
  SplitGeometry skew;
};
struct Decompositions {
  std::vector<PointDecomposition> points;
  bool direct = true;
  bool ranksConstant = true;
};

/// ker/im of Phi and Phi* per grid node for a positive-definite g. Throws GeometryError otherwise.
Decompositions decompositions(const MetricField& g, const SampleGrid& grid, const std::vector<Eigen::MatrixXd>& phi,
                              const Tolerances& tol = {});

/// Checks that nabla and g.nabla agree on being regularly metric for every g.
bool theorem3Check(const Connection& nabla, const std::vector<MetricField>& gList, const MetricityOptions& opts = {});

}  // namespace metron

#endif  // METRON_METRICITY_HPP
