#ifndef METRON_STAT_MODELS_HPP
#define METRON_STAT_MODELS_HPP

#include <optional>
#include <string>
#include <vector>

#include "metron/bundle.hpp"
#include "metron/metricity.hpp"

namespace metron {

enum class FamilyName { Gaussian1d, Bernoulli, Poisson, Exponential };

/// Built-in exponential families. Coordinates: gaussian1d (x1 = mu, x2 = sigma);
/// bernoulli (x1 = p); poisson and exponential (x1 = lambda).
struct StatisticalFamily {
  FamilyName name = FamilyName::Gaussian1d;
  ChartDomain parameterDomain;

  int dim() const { return parameterDomain.dim(); }
  std::string label() const;

  static StatisticalFamily builtin(FamilyName name);
  /// Throws std::invalid_argument for unknown names.
  static StatisticalFamily builtin(const std::string& name);
  static std::vector<std::string> names();
};

MetricField fisherMetric(const StatisticalFamily& f);

/// Totally symmetric T_ijk = E[d_i l d_j l d_k l].
struct Tensor3 {
  int m = 0;
  std::vector<Expr> t;

  Expr& at(int i, int j, int k) { return t[(i * m + j) * m + k]; }
  const Expr& at(int i, int j, int k) const { return t[(i * m + j) * m + k]; }
};
Tensor3 amariChentsovTensor(const StatisticalFamily& f);

/// Gamma^alpha_{ij}^k = LC_{ij}^k - (alpha/2) g^{kl} T_{ijl}, stored as gamma[i](j, k).
Connection alphaConnection(const StatisticalFamily& f, double alpha);

struct AlphaScanReport {
  std::vector<double> alphas;
  std::vector<MetricityCertificate> perAlpha;
  bool theorem4Consistent = true;
  std::optional<double> counterWitness;  // an alpha that breaks the implication
};

AlphaScanReport alphaScan(const StatisticalFamily& f, std::vector<double> alphas, const MetricityOptions& opts = {});

}  // namespace metron

#endif  // METRON_STAT_MODELS_HPP
