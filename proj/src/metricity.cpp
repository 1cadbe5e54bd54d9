#include "metron/metricity.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "metron/linalg.hpp"
#include "metron/transport.hpp"

namespace metron {

const char* verdictName(Verdict v) {
  switch (v) {
    case Verdict::RegularlyMetric:
      return "RegularlyMetric";
    case Verdict::SingularMetricOnly:
      return "SingularMetricOnly";
    case Verdict::NotMetric:
      return "NotMetric";
  }
  return "?";
}

const char* indexDecisionName(IndexDecision d) { return d == IndexDecision::Zero ? "Zero" : "AtLeastOne"; }

SplitPhi splitPhi(const Eigen::MatrixXd& g, const Eigen::MatrixXd& phi) {
  if (g.rows() != g.cols() || g.rows() != phi.rows() || phi.rows() != phi.cols()) {
    throw std::invalid_argument("splitPhi: shape mismatch");
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(g);
  if (!lu.isInvertible()) throw SingularMetricError("splitPhi needs a regular metric");
  const Eigen::MatrixXd a = phi * g;
  const Eigen::MatrixXd at = a.transpose();
  // X G^{-1} = (G^{-T} X^T)^T, G symmetric
  SplitPhi s;
  s.sym = lu.solve((0.5 * (a + at)).transpose()).transpose();
  s.skew = lu.solve((0.5 * (a - at)).transpose()).transpose();
  return s;
}

InducedForms inducedForms(const Eigen::MatrixXd& g, const SplitPhi& parts) {
  InducedForms f;
  f.q = parts.sym * g;
  f.omega = parts.skew * g;
  return f;
}

Prop3Result prop3Check(const Connection& nabla, const MetricField& g, const SampleGrid& grid,
                       const std::vector<Eigen::MatrixXd>& phiField, const Tolerances& tol, int steps, double delta) {
  const Connection dual = amariDual(g, nabla, tol);
  const HomFlow flow(nabla, dual);
  const CompiledMatrices gm(std::span<const ExprMatrix>(&g.g, 1));
  const CompiledMatrices gam(nabla.gamma);
  Prop3Result out;
  auto at = [](const Eigen::VectorXd& x) { return std::span<const double>(x.data(), x.size()); };
  for (int node = 0; node < grid.size(); ++node) {
    const Eigen::VectorXd x = grid.point(node);
    const Eigen::MatrixXd G = gm.evaluate(at(x))[0];
    const InducedForms here = inducedForms(G, splitPhi(G, phiField[node]));
    out.ranks.push_back(linalg::numericalRank(splitPhi(G, phiField[node]).sym, tol.rank, phiField[node].norm()));
    const std::vector<Eigen::MatrixXd> gammas = gam.evaluate(at(x));
    for (int axis = 0; axis < grid.dim(); ++axis) {
      const Stencil st = transportStencil(flow, grid, phiField, node, axis, delta, steps);
      std::array<Eigen::MatrixXd, 4> qs;
      std::array<Eigen::MatrixXd, 4> ws;
      for (int k = 0; k < 4; ++k) {
        const Eigen::MatrixXd Gk = gm.evaluate(at(st.points[k]))[0];
        const InducedForms f = inducedForms(Gk, splitPhi(Gk, st.values[k]));
        qs[k] = f.q;
        ws[k] = f.omega;
      }
      const Eigen::MatrixXd& Gi = gammas[axis];
      const Eigen::MatrixXd dq = centralDifference(qs, delta) - Gi * here.q - here.q * Gi.transpose();
      const Eigen::MatrixXd dw = centralDifference(ws, delta) - Gi * here.omega - here.omega * Gi.transpose();
      out.nablaQ = std::max(out.nablaQ, linalg::maxAbs(dq));
      out.nablaOmega = std::max(out.nablaOmega, linalg::maxAbs(dw));
    }
  }
  out.rankConstant = std::adjacent_find(out.ranks.begin(), out.ranks.end(), std::not_equal_to<>()) == out.ranks.end();
  return out;
}

namespace {

// Candidate coefficient vectors over a basis of k elements: projection of the
// identity, each basis element, then seeded random draws.
std::vector<Eigen::VectorXd> candidateCoefficients(const std::vector<Eigen::MatrixXd>& basis, int draws,
                                                   std::uint64_t seed) {
  const int k = static_cast<int>(basis.size());
  std::vector<Eigen::VectorXd> out;
  if (k == 0) return out;
  const int r = static_cast<int>(basis[0].rows());
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(r, r);
  Eigen::VectorXd proj(k);
  for (int j = 0; j < k; ++j) proj(j) = (basis[j].array() * I.array()).sum();
  if (proj.norm() > 1e-12) out.push_back(proj);
  for (int j = 0; j < k; ++j) out.push_back(Eigen::VectorXd::Unit(k, j));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int d = 0; d < draws; ++d) {
    Eigen::VectorXd c(k);
    for (int j = 0; j < k; ++j) c(j) = normal(rng);
    out.push_back(c);
  }
  return out;
}

Eigen::MatrixXd combine(const std::vector<Eigen::MatrixXd>& basis, const Eigen::VectorXd& c) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(basis[0].rows(), basis[0].cols());
  for (int j = 0; j < c.size(); ++j) m += c(j) * basis[j];
  return m;
}

bool isDefinite(const Eigen::MatrixXd& q, double cutoff) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (q + q.transpose()));
  const auto& ev = es.eigenvalues();
  const double scale = std::max(1e-300, ev.cwiseAbs().maxCoeff());
  return ev.minCoeff() > cutoff * scale || ev.maxCoeff() < -cutoff * scale;
}

}  // namespace

MetricityCertificate decideMetricity(const Connection& nabla, const MetricityOptions& opts) {
  nabla.validate();
  const int r = nabla.rank;
  const Tolerances& tol = opts.fe.tol;
  MetricityCertificate cert;
  cert.tol = tol;

  const SolutionSpace s2 = solveParallelForms(nabla, FormSymmetry::Symmetric, opts.fe);
  const SolutionSpace o2 = solveParallelForms(nabla, FormSymmetry::Antisymmetric, opts.fe);
  const MetricField identity = MetricField::constant(nabla.domain, Eigen::MatrixXd::Identity(r, r));
  const SolutionSpace j = solveFE(nabla, amariDual(identity, nabla, tol), opts.fe);

  cert.basePoint = s2.basePoint;
  cert.dimS2 = s2.dimension;
  cert.dimOmega2 = o2.dimension;
  cert.dimJ = j.dimension;
  cert.exactSequence = cert.dimJ == cert.dimS2 + cert.dimOmega2;
  cert.residualS2 = s2.certifiedResidual;
  cert.residualOmega2 = o2.certifiedResidual;
  cert.residualJ = j.certifiedResidual;
  cert.dimsPerOrderS2 = s2.constraints.dimsPerOrder;
  cert.s2Basis = s2.basis;
  cert.omega2Basis = o2.basis;
  cert.stabilized = s2.stabilized() && o2.stabilized() && j.stabilized();

  if (cert.dimS2 == 0) {
    cert.verdict = Verdict::NotMetric;
  } else {
    int bestRank = -1;
    bool bestDefinite = false;
    Eigen::VectorXd best;
    for (const Eigen::VectorXd& c : candidateCoefficients(s2.basis, opts.randomDraws, opts.seed)) {
      const Eigen::MatrixXd q = combine(s2.basis, c);
      const int rk = linalg::numericalRank(q, tol.rank);
      const bool def = rk == r && isDefinite(q, tol.rank);
      if (rk > bestRank || (rk == bestRank && def && !bestDefinite)) {
        bestRank = rk;
        bestDefinite = def;
        best = c;
      }
    }
    cert.maxRank = bestRank;
    cert.verdict = bestRank == r ? Verdict::RegularlyMetric
                                 : (bestRank > 0 ? Verdict::SingularMetricOnly : Verdict::NotMetric);

    Eigen::MatrixXd base = combine(s2.basis, best);
    std::vector<Eigen::MatrixXd> field;
    for (int n = 0; n < s2.grid.size(); ++n) {
      Eigen::MatrixXd v = Eigen::MatrixXd::Zero(r, r);
      for (int b = 0; b < best.size(); ++b) v += best(b) * s2.extensions[b][n];
      field.push_back(std::move(v));
    }
    const double unit = (base.trace() < 0 ? -1.0 : 1.0) / base.norm();
    base *= unit;
    for (auto& v : field) v *= unit;
    cert.witnessAtBase = base;
    cert.witnessDefinite = bestDefinite;

    double drift = 0.0;
    double minDet = INFINITY;
    std::vector<int> ranks;
    for (const auto& v : field) {
      drift = std::max(drift, linalg::maxAbs(v - base));
      minDet = std::min(minDet, std::abs(v.determinant()));
      ranks.push_back(linalg::numericalRank(v, tol.rank));
    }
    cert.witnessMinAbsDet = minDet;
    cert.witnessRankConstant =
        std::all_of(ranks.begin(), ranks.end(), [&](int k) { return k == bestRank; });
    if (drift <= 1e-10 * std::max(1.0, linalg::maxAbs(base))) {
      MetricField w = MetricField::constant(nabla.domain, base);
      w.declaredRank = bestRank;
      cert.witnessResidual = covariantDerivativeOfMetric(nabla, w).residual;
      cert.witness = std::move(w);
    } else {
      cert.witnessResidual = substitutionResidual(nabla, bilinearFormTarget(nabla), s2.grid, field,
                                                  tol.stepsPerEdge);
    }
    cert.witnessField = std::move(field);
  }

  const double worst = std::max({cert.residualS2, cert.residualOmega2, cert.residualJ});
  const bool consistent = s2.rejected == 0 && o2.rejected == 0 && j.rejected == 0;
  cert.certified = cert.stabilized && worst <= tol.transport && consistent;
  if (!cert.stabilized) {
    cert.note = "prolongation did not stabilize within maxOrder; lower-bound evidence only";
  } else if (!consistent) {
    cert.note = "extension rejected directions allowed by the curvature constraints";
  } else if (!cert.certified) {
    cert.note = "extension residual above tolerance";
  }
  return cert;
}

GaugeIndexResult gaugeIndex(const Connection& nabla, const MetricField& g, const MetricityOptions& opts) {
  const Tolerances& tol = opts.fe.tol;
  const SolutionSpace j = solveFE(nabla, amariDual(g, nabla, tol), opts.fe);
  GaugeIndexResult out;
  out.dimJ = j.dimension;
  out.certified = j.stabilized() && j.certifiedResidual <= tol.transport && j.rejected == 0;
  const int r = nabla.rank;
  if (j.dimension == 0) {
    out.sb = r;
    out.emptyJ = true;
    return out;
  }
  const CompiledMatrices gm(std::span<const ExprMatrix>(&g.g, 1));
  const Eigen::MatrixXd G = gm.evaluate(std::span<const double>(j.basePoint.data(), j.basePoint.size()))[0];
  int best = 0;
  for (const Eigen::VectorXd& c : candidateCoefficients(j.basis, opts.randomDraws, opts.seed)) {
    const Eigen::MatrixXd phi = combine(j.basis, c);
    const SplitPhi parts = splitPhi(G, phi);
    best = std::max(best, linalg::numericalRank(parts.sym, tol.rank, phi.norm()));
    if (best == r) break;
  }
  out.sb = r - best;
  return out;
}

std::vector<MetricField> randomConstantMetrics(const ChartDomain& domain, int rank, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> scale(0.5, 2.0);
  std::bernoulli_distribution flip(0.3);
  std::vector<MetricField> out;
  for (int c = 0; c < count; ++c) {
    Eigen::MatrixXd a(rank, rank);
    for (int i = 0; i < rank; ++i) {
      for (int j = 0; j < rank; ++j) a(i, j) = normal(rng);
    }
    const Eigen::MatrixXd O = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
    Eigen::VectorXd d(rank);
    for (int i = 0; i < rank; ++i) d(i) = (flip(rng) ? -1.0 : 1.0) * scale(rng);
    Eigen::MatrixXd G = O * d.asDiagonal() * O.transpose();
    G = (0.5 * (G + G.transpose())).eval();
    out.push_back(MetricField::constant(domain, G));
  }
  return out;
}

std::vector<MetricField> metricFamily(const Connection& nabla, const std::vector<MetricField>& declared,
                                      std::uint64_t seed) {
  std::vector<MetricField> family = declared;
  family.push_back(MetricField::constant(nabla.domain, Eigen::MatrixXd::Identity(nabla.rank, nabla.rank)));
  for (auto& g : randomConstantMetrics(nabla.domain, nabla.rank, 8, seed ^ 0x9e3779b97f4a7c15ULL)) {
    family.push_back(std::move(g));
  }
  return family;
}

IndexReport indexReport(const Connection& nabla, const std::vector<MetricField>& declared,
                        const MetricityOptions& opts) {
  IndexReport rep;
  rep.certificate = decideMetricity(nabla, opts);
  rep.maxParallelMetricRank = rep.certificate.maxRank;
  rep.ind = rep.certificate.verdict == Verdict::RegularlyMetric ? IndexDecision::Zero : IndexDecision::AtLeastOne;
  const std::vector<MetricField> family = metricFamily(nabla, declared, opts.seed);
  rep.familySize = static_cast<int>(family.size());
  rep.certified = rep.certificate.certified;
  rep.sb = nabla.rank;
  for (const auto& g : family) {
    const GaugeIndexResult gi = gaugeIndex(nabla, g, opts);
    rep.sbPerMetric.push_back(gi.sb);
    rep.emptyJPerMetric.push_back(gi.emptyJ);
    rep.sb = std::min(rep.sb, gi.sb);
    rep.certified = rep.certified && gi.certified;
  }
  rep.sbGivenG = rep.sbPerMetric.front();
  return rep;
}

namespace {

SplitGeometry splitGeometry(const Eigen::MatrixXd& a, double cutoff, double scale) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  const int n = static_cast<int>(a.rows());
  int rk = 0;
  const double top = std::max(scale, s.size() > 0 ? s(0) : 0.0);
  for (int i = 0; i < s.size(); ++i) {
    if (s(i) > cutoff * top && top > 0) ++rk;
  }
  SplitGeometry g;
  // the endomorphism acts on components from the right: v -> v^T A
  g.image = svd.matrixV().leftCols(rk);
  g.kernel = svd.matrixU().rightCols(n - rk);
  Eigen::MatrixXd both(n, n);
  both << g.kernel, g.image;
  g.direct = linalg::numericalRank(both, 1e-8) == n;
  return g;
}

}  // namespace

Decompositions decompositions(const MetricField& g, const SampleGrid& grid, const std::vector<Eigen::MatrixXd>& phi,
                              const Tolerances& tol) {
  const CompiledMatrices gm(std::span<const ExprMatrix>(&g.g, 1));
  Decompositions out;
  int symRank = -1;
  int skewRank = -1;
  for (int node = 0; node < grid.size(); ++node) {
    const Eigen::VectorXd x = grid.point(node);
    const Eigen::MatrixXd G = gm.evaluate(std::span<const double>(x.data(), x.size()))[0];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (G + G.transpose()));
    if (es.eigenvalues().minCoeff() < 1e-8) throw GeometryError("decompositions need a positive-definite metric");
    const SplitPhi parts = splitPhi(G, phi[node]);
    const double scale = phi[node].norm();
    PointDecomposition pd{splitGeometry(parts.sym, tol.rank, scale), splitGeometry(parts.skew, tol.rank, scale)};
    out.direct = out.direct && pd.sym.direct && pd.skew.direct;
    const int rs = static_cast<int>(pd.sym.image.cols());
    const int rw = static_cast<int>(pd.skew.image.cols());
    if (symRank >= 0 && (rs != symRank || rw != skewRank)) out.ranksConstant = false;
    symRank = rs;
    skewRank = rw;
    out.points.push_back(std::move(pd));
  }
  return out;
}

bool theorem3Check(const Connection& nabla, const std::vector<MetricField>& gList, const MetricityOptions& opts) {
  const bool base = decideMetricity(nabla, opts).verdict == Verdict::RegularlyMetric;
  for (const auto& g : gList) {
    const bool dual = decideMetricity(amariDual(g, nabla, opts.fe.tol), opts).verdict == Verdict::RegularlyMetric;
    if (dual != base) return false;
  }
  return true;
}

}  // namespace metron
