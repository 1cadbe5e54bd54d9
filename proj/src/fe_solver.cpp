#include "metron/fe_solver.hpp"

#include <algorithm>
#include <cmath>

#include "metron/linalg.hpp"

namespace metron {

namespace {

// Square matrix of Taylor polynomials acting on vec(Phi).
struct JetMatrix {
  int n = 0;
  std::vector<TaylorPolynomial> e;
  std::vector<char> nonzero;

  JetMatrix(int size, const std::shared_ptr<const TaylorPolynomial::Basis>& basis)
      : n(size), e(static_cast<std::size_t>(size) * size, TaylorPolynomial(basis)),
        nonzero(static_cast<std::size_t>(size) * size, 0) {}

  TaylorPolynomial& at(int p, int q) { return e[p * n + q]; }
  const TaylorPolynomial& at(int p, int q) const { return e[p * n + q]; }

  void refresh() {
    for (std::size_t k = 0; k < e.size(); ++k) nonzero[k] = e[k].isZero() ? 0 : 1;
  }
  bool isZero() const {
    return std::none_of(nonzero.begin(), nonzero.end(), [](char c) { return c != 0; });
  }

  JetMatrix derivative(int k) const {
    JetMatrix d(n, e[0].basisPtr());
    for (std::size_t i = 0; i < e.size(); ++i) {
      if (nonzero[i]) d.e[i] = e[i].derivative(k);
    }
    d.refresh();
    return d;
  }

  Eigen::MatrixXd constantTerm() const {
    Eigen::MatrixXd c(n, n);
    for (int p = 0; p < n; ++p) {
      for (int q = 0; q < n; ++q) c(p, q) = at(p, q).constant();
    }
    return c;
  }
};

// a * b + acc, skipping structurally zero entries
void multiplyAdd(const JetMatrix& a, const JetMatrix& b, double sign, JetMatrix& acc) {
  const int n = a.n;
  for (int p = 0; p < n; ++p) {
    for (int l = 0; l < n; ++l) {
      if (!a.nonzero[p * n + l]) continue;
      for (int q = 0; q < n; ++q) {
        if (!b.nonzero[l * n + q]) continue;
        TaylorPolynomial prod = a.at(p, l) * b.at(l, q);
        if (sign != 1.0) prod *= sign;
        acc.at(p, q) += prod;
      }
    }
  }
  acc.refresh();
}

JetMatrix add(const JetMatrix& a, const JetMatrix& b, double sign) {
  JetMatrix c = a;
  for (std::size_t k = 0; k < c.e.size(); ++k) {
    if (!b.nonzero[k]) continue;
    if (sign == 1.0) {
      c.e[k] += b.e[k];
    } else {
      c.e[k] -= b.e[k];
    }
  }
  c.refresh();
  return c;
}

}  // namespace

Eigen::MatrixXd homCurvatureAction(const Connection& nabla, const Connection& nablaStar, const Eigen::VectorXd& x,
                                   int i, int j) {
  const int r = nabla.rank;
  const CurvatureField R = curvature(nabla);
  const CurvatureField Rs = curvature(nablaStar);
  const std::span<const double> p(x.data(), x.size());
  const Eigen::MatrixXd rij = R.at(i, j).evaluate(p);
  const Eigen::MatrixXd rsij = Rs.at(i, j).evaluate(p);
  Eigen::MatrixXd op = Eigen::MatrixXd::Zero(r * r, r * r);
  for (int a = 0; a < r; ++a) {
    for (int b = 0; b < r; ++b) {
      for (int c = 0; c < r; ++c) {
        op(a * r + b, c * r + b) += rij(a, c);
        op(a * r + b, a * r + c) -= rsij(c, b);
      }
    }
  }
  return op;
}

ConstraintSubspace stabilizedConstraintSubspace(const Connection& nabla, const Connection& nablaStar,
                                                const Eigen::VectorXd& x0, int maxOrder,
                                                const std::optional<Eigen::MatrixXd>& ambient,
                                                double kernelCutoff) {
  if (maxOrder < 0) throw std::invalid_argument("maxOrder must be non-negative");
  const int r = nabla.rank;
  const int m = nabla.dim();
  const int n = r * r;
  const Eigen::MatrixXd B = ambient ? *ambient : Eigen::MatrixXd::Identity(n, n);

  std::vector<Expr> all;
  for (const auto* c : {&nabla, &nablaStar}) {
    for (const auto& g : c->gamma) all.insert(all.end(), g.entries().begin(), g.entries().end());
  }
  const Tape tape(all);
  const std::vector<TaylorPolynomial> jets = tape.taylor(std::span<const double>(x0.data(), x0.size()), maxOrder + 1);
  const auto basis = jets.front().basisPtr();
  auto gammaJet = [&](int which, int i, int a, int b) -> const TaylorPolynomial& {
    return jets[static_cast<std::size_t>(which) * m * r * r + static_cast<std::size_t>(i) * r * r + a * r + b];
  };

  std::vector<JetMatrix> flow;
  for (int k = 0; k < m; ++k) {
    JetMatrix A(n, basis);
    for (int a = 0; a < r; ++a) {
      for (int b = 0; b < r; ++b) {
        for (int c = 0; c < r; ++c) {
          A.at(a * r + b, c * r + b) += gammaJet(0, k, a, c);
          A.at(a * r + b, a * r + c) -= gammaJet(1, k, c, b);
        }
      }
    }
    A.refresh();
    flow.push_back(std::move(A));
  }

  // integrability: (d_j A_i - d_i A_j + A_i A_j - A_j A_i) v = 0
  std::vector<JetMatrix> level;
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      JetMatrix K = add(flow[i].derivative(j), flow[j].derivative(i), -1.0);
      multiplyAdd(flow[i], flow[j], 1.0, K);
      multiplyAdd(flow[j], flow[i], -1.0, K);
      if (!K.isZero()) level.push_back(std::move(K));
    }
  }

  ConstraintSubspace out;
  Eigen::MatrixXd rows(0, n);
  Eigen::MatrixXd kernel;
  for (int order = 0; order <= maxOrder; ++order) {
    if (order > 0) {
      // d_k (T v) = (d_k T + T A_k) v along solutions
      std::vector<JetMatrix> next;
      for (const auto& T : level) {
        for (int k = 0; k < m; ++k) {
          JetMatrix D = T.derivative(k);
          multiplyAdd(T, flow[k], 1.0, D);
          if (!D.isZero()) next.push_back(std::move(D));
        }
      }
      level = std::move(next);
    }
    for (const auto& T : level) {
      Eigen::MatrixXd c = T.constantTerm();
      Eigen::MatrixXd grown(rows.rows() + n, n);
      grown << rows, c;
      rows = std::move(grown);
    }
    kernel = linalg::nullSpace(rows * B, kernelCutoff, static_cast<int>(B.cols()));
    out.dimsPerOrder.push_back(static_cast<int>(kernel.cols()));
    const int dim = out.dimsPerOrder.back();
    if (dim == 0) {
      out.stabilized = true;
      out.stabilizedOrder = order;
      break;
    }
    if (order > 0 && dim == out.dimsPerOrder[order - 1]) {
      out.stabilized = true;
      out.stabilizedOrder = order - 1;
      break;
    }
    if (level.empty()) {
      // every further derivative vanishes identically
      out.stabilized = true;
      out.stabilizedOrder = order;
      break;
    }
  }
  out.basis = linalg::canonicalBasis(B * kernel);
  return out;
}

namespace {

SolutionSpace solveWithin(const Connection& nabla, const Connection& nablaStar, const FeOptions& opts,
                          const std::optional<Eigen::MatrixXd>& ambient) {
  nabla.validate();
  nablaStar.validate();
  if (nabla.rank != nablaStar.rank || nabla.dim() != nablaStar.dim()) {
    throw std::invalid_argument("FE needs connections of equal shape");
  }
  const int r = nabla.rank;
  SolutionSpace s;
  s.grid = nabla.domain.grid(opts.gridPerAxis.value_or(nabla.domain.gridPerAxis));
  if (s.grid.perAxis() < 3) throw TransportError("extension grid needs at least 3 nodes per axis");
  s.baseNode = s.grid.nearestNode(opts.basePoint.value_or(nabla.domain.center()));
  s.basePoint = s.grid.point(s.baseNode);

  s.constraints = stabilizedConstraintSubspace(nabla, nablaStar, s.basePoint, opts.tol.maxOrder, ambient,
                                               opts.tol.kernel);
  const Eigen::MatrixXd& K = s.constraints.basis;
  const int k = static_cast<int>(K.cols());
  if (k == 0) return s;

  std::vector<Eigen::MatrixXd> candidates;
  for (int j = 0; j < k; ++j) candidates.push_back(linalg::unvec(K.col(j), r));
  const HomFlow flow(nabla, nablaStar);
  BatchExtension batch = extendBatch(flow, s.grid, s.baseNode, candidates, opts.tol.stepsPerEdge);
  const Eigen::MatrixXd& D = batch.discrepancy;
  // residuals are measured relative to the size of the transported values
  double scale = 1.0;
  for (const auto& field : batch.values) {
    for (const auto& v : field) scale = std::max(scale, linalg::maxAbs(v));
  }

  // coefficients (in the K basis) of the retained directions
  Eigen::MatrixXd coeffs = Eigen::MatrixXd::Identity(k, k);
  if (D.rows() > 0) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(D, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    std::vector<int> keep;
    for (int j = 0; j < k; ++j) {
      const double sigma = j < sv.size() ? sv(j) : 0.0;
      if (sigma <= opts.tol.transport * scale) keep.push_back(j);
    }
    if (static_cast<int>(keep.size()) < k) {
      Eigen::MatrixXd kept(k, keep.size());
      for (std::size_t c = 0; c < keep.size(); ++c) kept.col(c) = svd.matrixV().col(keep[c]);
      const Eigen::MatrixXd canon = linalg::canonicalBasis(K * kept);
      coeffs = K.transpose() * canon;
    }
  }

  for (int j = 0; j < coeffs.cols(); ++j) {
    const Eigen::VectorXd c = coeffs.col(j);
    s.basis.push_back(linalg::unvec(K * c, r));
    std::vector<Eigen::MatrixXd> field(s.grid.size(), Eigen::MatrixXd::Zero(r, r));
    for (int n = 0; n < s.grid.size(); ++n) {
      for (int l = 0; l < k; ++l) field[n] += c(l) * batch.values[l][n];
    }
    s.extensions.push_back(std::move(field));
    if (D.rows() > 0) {
      s.certifiedResidual = std::max(s.certifiedResidual, (D * c).cwiseAbs().maxCoeff() / scale);
    }
  }
  s.dimension = static_cast<int>(s.basis.size());
  s.rejected = k - s.dimension;
  return s;
}

}  // namespace

SolutionSpace solveFE(const Connection& nabla, const Connection& nablaStar, const FeOptions& opts) {
  return solveWithin(nabla, nablaStar, opts, std::nullopt);
}

SolutionSpace solveParallelForms(const Connection& nabla, FormSymmetry symmetry, const FeOptions& opts) {
  const Eigen::MatrixXd ambient = symmetry == FormSymmetry::Symmetric ? linalg::symmetricBasis(nabla.rank)
                                                                      : linalg::antisymmetricBasis(nabla.rank);
  if (ambient.cols() == 0) {
    SolutionSpace s;
    s.grid = nabla.domain.grid(opts.gridPerAxis.value_or(nabla.domain.gridPerAxis));
    s.baseNode = s.grid.nearestNode(opts.basePoint.value_or(nabla.domain.center()));
    s.basePoint = s.grid.point(s.baseNode);
    s.constraints.basis = Eigen::MatrixXd(nabla.rank * nabla.rank, 0);
    s.constraints.dimsPerOrder = {0};
    s.constraints.stabilized = true;
    s.constraints.stabilizedOrder = 0;
    return s;
  }
  return solveWithin(nabla, bilinearFormTarget(nabla), opts, ambient);
}

double substitutionResidual(const Connection& nabla, const Connection& nablaStar, const SampleGrid& grid,
                            const std::vector<Eigen::MatrixXd>& field, int steps, double delta) {
  const HomFlow flow(nabla, nablaStar);
  double worst = 0.0;
  for (int node = 0; node < grid.size(); ++node) {
    const Eigen::VectorXd x = grid.point(node);
    for (int axis = 0; axis < grid.dim(); ++axis) {
      const Stencil st = transportStencil(flow, grid, field, node, axis, delta, steps);
      const Eigen::MatrixXd lhs = centralDifference(st.values, delta);
      const Eigen::MatrixXd rhs = flow.derivative(x, axis, field[node]);
      worst = std::max(worst, linalg::maxAbs(lhs - rhs));
    }
  }
  double scale = 1.0;
  for (const auto& v : field) scale = std::max(scale, linalg::maxAbs(v));
  return worst / scale;
}

}  // namespace metron
