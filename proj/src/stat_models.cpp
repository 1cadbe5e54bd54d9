#include "metron/stat_models.hpp"

#include <algorithm>
#include <stdexcept>

namespace metron {

namespace {

struct Builtin {
  FamilyName name;
  const char* label;
  std::vector<double> lower;
  std::vector<double> upper;
};

const std::vector<Builtin>& table() {
  static const std::vector<Builtin> t = {
      {FamilyName::Gaussian1d, "gaussian1d", {-1.0, 0.5}, {1.0, 2.0}},
      {FamilyName::Bernoulli, "bernoulli", {0.2}, {0.8}},
      {FamilyName::Poisson, "poisson", {0.5}, {3.0}},
      {FamilyName::Exponential, "exponential", {0.5}, {3.0}},
  };
  return t;
}

const Builtin& lookup(FamilyName name) {
  for (const auto& b : table()) {
    if (b.name == name) return b;
  }
  throw std::invalid_argument("unknown family");
}

}  // namespace

std::string StatisticalFamily::label() const { return lookup(name).label; }

StatisticalFamily StatisticalFamily::builtin(FamilyName name) {
  const Builtin& b = lookup(name);
  StatisticalFamily f;
  f.name = name;
  f.parameterDomain = ChartDomain{b.lower, b.upper, 9};
  return f;
}

StatisticalFamily StatisticalFamily::builtin(const std::string& name) {
  for (const auto& b : table()) {
    if (name == b.label) return builtin(b.name);
  }
  throw std::invalid_argument("unknown family '" + name + "'");
}

std::vector<std::string> StatisticalFamily::names() {
  std::vector<std::string> out;
  for (const auto& b : table()) out.emplace_back(b.label);
  return out;
}

MetricField fisherMetric(const StatisticalFamily& f) {
  MetricField g;
  g.domain = f.parameterDomain;
  g.rank = f.dim();
  g.declaredRank = g.rank;
  g.g = ExprMatrix(g.rank, g.rank);
  switch (f.name) {
    case FamilyName::Gaussian1d:
      g.g(0, 0) = parse("1/x2^2");
      g.g(1, 1) = parse("2/x2^2");
      break;
    case FamilyName::Bernoulli:
      g.g(0, 0) = parse("1/(x1*(1-x1))");
      break;
    case FamilyName::Poisson:
      g.g(0, 0) = parse("1/x1");
      break;
    case FamilyName::Exponential:
      g.g(0, 0) = parse("1/x1^2");
      break;
  }
  return g;
}

Tensor3 amariChentsovTensor(const StatisticalFamily& f) {
  Tensor3 T;
  T.m = f.dim();
  T.t.assign(static_cast<std::size_t>(T.m) * T.m * T.m, Expr());
  switch (f.name) {
    case FamilyName::Gaussian1d: {
      const Expr c = parse("2/x2^3");
      T.at(0, 0, 1) = c;
      T.at(0, 1, 0) = c;
      T.at(1, 0, 0) = c;
      T.at(1, 1, 1) = parse("8/x2^3");
      break;
    }
    case FamilyName::Bernoulli:
      T.at(0, 0, 0) = parse("(1-2*x1)/(x1*(1-x1))^2");
      break;
    case FamilyName::Poisson:
      T.at(0, 0, 0) = parse("1/x1^2");
      break;
    case FamilyName::Exponential:
      T.at(0, 0, 0) = parse("-2/x1^3");
      break;
  }
  return T;
}

Connection alphaConnection(const StatisticalFamily& f, double alpha) {
  const MetricField g = fisherMetric(f);
  Connection c = leviCivita(g);
  if (alpha == 0.0) return c;
  const ExprMatrix ginv = inverse(g.g);
  const Tensor3 T = amariChentsovTensor(f);
  const int m = f.dim();
  const Expr half(-0.5 * alpha);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      for (int k = 0; k < m; ++k) {
        Expr s;
        for (int l = 0; l < m; ++l) {
          if (ginv(k, l).isZero() || T.at(i, j, l).isZero()) continue;
          s = s + ginv(k, l) * T.at(i, j, l);
        }
        if (!s.isZero()) c.gamma[i](j, k) = c.gamma[i](j, k) + half * s;
      }
    }
  }
  return c;
}

AlphaScanReport alphaScan(const StatisticalFamily& f, std::vector<double> alphas, const MetricityOptions& opts) {
  std::sort(alphas.begin(), alphas.end());
  AlphaScanReport rep;
  rep.alphas = alphas;
  for (double a : alphas) rep.perAlpha.push_back(decideMetricity(alphaConnection(f, a), opts));
  bool anyPositive = false;
  bool positivesRegular = true;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (alphas[i] > 0) {
      anyPositive = true;
      positivesRegular = positivesRegular && rep.perAlpha[i].verdict == Verdict::RegularlyMetric;
    }
  }
  if (anyPositive && positivesRegular) {
    for (std::size_t i = 0; i < alphas.size(); ++i) {
      if (rep.perAlpha[i].verdict != Verdict::RegularlyMetric) {
        rep.theorem4Consistent = false;
        rep.counterWitness = alphas[i];
        break;
      }
    }
  }
  return rep;
}

}  // namespace metron
