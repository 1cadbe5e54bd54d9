#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "metron/fe_solver.hpp"
#include "metron/linalg.hpp"

using namespace metron;

namespace {

const ChartDomain kSquare{{-1, -1}, {1, 1}, 5};

std::span<const double> at(const Eigen::VectorXd& x) { return {x.data(), static_cast<std::size_t>(x.size())}; }

Connection nilpotent() {
  Connection c = Connection::zero(kSquare, 2);
  c.gamma[1](0, 1) = parse("x1");
  return c;
}

Connection hyperbolicLeviCivita() {
  const ChartDomain h{{-1, 1}, {1, 2}, 5};
  MetricField g{h, 2, ExprMatrix(2, 2), 2, FormSymmetry::Symmetric};
  g.g(0, 0) = parse("1/x2^2");
  g.g(1, 1) = parse("1/x2^2");
  return leviCivita(g);
}

Expr randomPoly(std::mt19937_64& rng, int m, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Expr e(u(rng));
  for (int i = 0; i < m; ++i) {
    e = e + Expr(u(rng)) * Expr::variable(i);
    for (int j = i; j < m; ++j) e = e + Expr(u(rng)) * Expr::variable(i) * Expr::variable(j);
  }
  return e;
}

Connection randomConnection(std::mt19937_64& rng, const ChartDomain& d, int r) {
  Connection c = Connection::zero(d, r);
  for (auto& g : c.gamma)
    for (int a = 0; a < r; ++a)
      for (int b = 0; b < r; ++b) g(a, b) = randomPoly(rng, d.dim(), 1.0);
  return c;
}

// Flow operator on row-major vec(Phi), assembled entry by entry.
ExprMatrix flowOperator(const Connection& src, const Connection& dst, int k) {
  const int r = src.rank;
  ExprMatrix A(r * r, r * r);
  for (int a = 0; a < r; ++a)
    for (int b = 0; b < r; ++b)
      for (int c = 0; c < r; ++c)
        for (int d = 0; d < r; ++d) {
          Expr e;
          if (b == d) e = e + src.gamma[k](a, c);
          if (a == c) e = e - dst.gamma[k](d, b);
          A(a * r + b, c * r + d) = e;
        }
  return A;
}

int kernelDim(const Eigen::MatrixXd& rows, int n) {
  if (rows.rows() == 0) return n;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(rows);
  const auto& s = svd.singularValues();
  const double cut = 1e-8 * std::max(1.0, s(0));
  int rank = 0;
  for (int i = 0; i < s.size(); ++i) rank += s(i) > cut;
  return n - rank;
}

// Kernel dimensions of the prolonged integrability conditions, by symbolic differentiation.
std::vector<int> symbolicConstraintDims(const Connection& src, const Connection& dst, const Eigen::VectorXd& x0,
                                        int maxOrder) {
  const int m = src.dim();
  const int n = src.rank * src.rank;
  std::vector<ExprMatrix> A;
  for (int k = 0; k < m; ++k) A.push_back(flowOperator(src, dst, k));
  std::vector<ExprMatrix> level;
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j)
      level.push_back(A[j].derivative(i) - A[i].derivative(j) + A[j] * A[i] - A[i] * A[j]);
  std::vector<int> dims;
  Eigen::MatrixXd rows(0, n);
  for (int order = 0; order <= maxOrder; ++order) {
    if (order > 0) {
      std::vector<ExprMatrix> next;
      for (const auto& T : level)
        for (int k = 0; k < m; ++k) next.push_back(T.derivative(k) + T * A[k]);
      level = std::move(next);
    }
    for (const auto& T : level) {
      Eigen::MatrixXd grown(rows.rows() + n, n);
      grown << rows, T.evaluate(at(x0));
      rows = std::move(grown);
    }
    dims.push_back(kernelDim(rows, n));
  }
  return dims;
}

bool inSpan(const std::vector<Eigen::MatrixXd>& basis, const Eigen::MatrixXd& m, double tol = 1e-8) {
  Eigen::MatrixXd B(m.size(), basis.size());
  for (std::size_t j = 0; j < basis.size(); ++j) B.col(j) = linalg::vec(basis[j]);
  const Eigen::VectorXd v = linalg::vec(m);
  if (basis.empty()) return v.norm() <= tol;
  const Eigen::VectorXd c = B.colPivHouseholderQr().solve(v);
  return (B * c - v).norm() <= tol * std::max(1.0, v.norm());
}

}  // namespace

TEST_CASE("hom curvature action examples") {
  const Eigen::Vector2d x0(0.3, -0.2);
  const Connection z = Connection::zero(kSquare, 2);
  CHECK(homCurvatureAction(z, z, x0, 0, 1).isZero());
  const Connection n = nilpotent();
  // Phi -> N Phi - Phi N, written out by hand on (phi11, phi12, phi21, phi22)
  Eigen::MatrixXd want(4, 4);
  want << 0, 0, 1, 0,
          -1, 0, 0, 1,
          0, 0, 0, 0,
          0, 0, -1, 0;
  CHECK(linalg::maxAbs(homCurvatureAction(n, n, x0, 0, 1) - want) == 0.0);
  CHECK(linalg::maxAbs(homCurvatureAction(n, n, x0, 1, 0) + want) == 0.0);
  const Eigen::MatrixXd K = linalg::nullSpace(want, 1e-10);
  CHECK(K.cols() == 2);
  CHECK(inSpan({linalg::unvec(K.col(0), 2), linalg::unvec(K.col(1), 2)}, Eigen::MatrixXd::Identity(2, 2)));
  CHECK(inSpan({linalg::unvec(K.col(0), 2), linalg::unvec(K.col(1), 2)},
               (Eigen::MatrixXd(2, 2) << 0, 1, 0, 0).finished()));
}

TEST_CASE("hom curvature action agrees with curvatures and the vec flow operator") {
  std::mt19937_64 rng(11);
  const ChartDomain d{{-1, -1, -1}, {1, 1, 1}, 3};
  for (int trial = 0; trial < 3; ++trial) {
    const Connection a = randomConnection(rng, d, 2);
    const Connection b = randomConnection(rng, d, 2);
    const CurvatureField Ra = curvature(a);
    const CurvatureField Rb = curvature(b);
    const Eigen::VectorXd x = Eigen::Vector3d(0.1, -0.3, 0.6);
    std::vector<ExprMatrix> A;
    for (int k = 0; k < 3; ++k) A.push_back(flowOperator(a, b, k));
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        const Eigen::MatrixXd h = homCurvatureAction(a, b, x, i, j);
        const Eigen::MatrixXd phi = Eigen::MatrixXd::Random(2, 2);
        const Eigen::MatrixXd direct = Ra.at(i, j).evaluate(at(x)) * phi - phi * Rb.at(i, j).evaluate(at(x));
        CHECK(linalg::maxAbs(h * linalg::vec(phi) - linalg::vec(direct)) < 1e-10);
        const ExprMatrix K = A[i].derivative(j) - A[j].derivative(i) + A[i] * A[j] - A[j] * A[i];
        CHECK(linalg::maxAbs(K.evaluate(at(x)) + h) < 1e-10);
      }
    }
  }
}

TEST_CASE("constraint subspace dimensions") {
  const Eigen::Vector2d x0(0.0, 0.0);
  const Connection z = Connection::zero(kSquare, 2);
  const auto flat = stabilizedConstraintSubspace(z, z, x0);
  CHECK(flat.dimension() == 4);
  CHECK(flat.stabilized);
  CHECK(flat.stabilizedOrder == 0);
  const Connection n = nilpotent();
  const auto nil = stabilizedConstraintSubspace(n, n, x0);
  CHECK(nil.dimension() == 2);
  CHECK(nil.stabilized);
  std::mt19937_64 rng(12);
  const Connection a = randomConnection(rng, kSquare, 2);
  const Connection b = randomConnection(rng, kSquare, 2);
  const auto generic = stabilizedConstraintSubspace(a, b, x0);
  CHECK(generic.dimension() == 0);
  CHECK(generic.stabilized);
  const auto self = stabilizedConstraintSubspace(a, a, x0);
  CHECK(self.dimension() >= 1);
  const Eigen::VectorXd id = linalg::vec(Eigen::MatrixXd::Identity(2, 2));
  CHECK((self.basis * (self.basis.transpose() * id) - id).norm() < 1e-8);
}

TEST_CASE("jet prolongation matches symbolic prolongation") {
  std::mt19937_64 rng(13);
  const Eigen::Vector2d x0(0.2, -0.4);
  std::vector<std::pair<Connection, Connection>> cases = {{nilpotent(), nilpotent()}};
  const Connection h = hyperbolicLeviCivita();
  for (int trial = 0; trial < 3; ++trial) {
    const Connection a = randomConnection(rng, kSquare, 2);
    cases.emplace_back(a, a);
    cases.emplace_back(a, randomConnection(rng, kSquare, 2));
  }
  for (const auto& [a, b] : cases) {
    const auto jet = stabilizedConstraintSubspace(a, b, x0, 2);
    const auto sym = symbolicConstraintDims(a, b, x0, static_cast<int>(jet.dimsPerOrder.size()) - 1);
    CHECK(jet.dimsPerOrder == sym);
  }
  const Eigen::Vector2d y0(0.1, 1.4);
  const auto jet = stabilizedConstraintSubspace(h, h, y0, 2);
  CHECK(jet.dimsPerOrder == symbolicConstraintDims(h, h, y0, static_cast<int>(jet.dimsPerOrder.size()) - 1));
}

TEST_CASE("truncated prolongation is reported as not stabilized") {
  std::mt19937_64 rng(14);
  const Connection a = randomConnection(rng, kSquare, 2);
  const auto c = stabilizedConstraintSubspace(a, a, Eigen::Vector2d(0.0, 0.0), 0);
  REQUIRE(c.dimsPerOrder.size() == 1);
  if (c.dimsPerOrder[0] > 0) {
    CHECK_FALSE(c.stabilized);
  }
  Connection curved = Connection::zero(kSquare, 2);
  curved.gamma[1](0, 1) = parse("exp(x1)");
  curved.gamma[0](1, 0) = parse("x2");
  const auto t = stabilizedConstraintSubspace(curved, curved, Eigen::Vector2d(0.0, 0.0), 0);
  CHECK(t.dimsPerOrder[0] > 0);
  CHECK_FALSE(t.stabilized);
  FeOptions opts;
  opts.tol.maxOrder = 0;
  CHECK_FALSE(solveFE(curved, curved, opts).stabilized());
  CHECK(solveFE(curved, curved).stabilized());
}

TEST_CASE("solution spaces of FE") {
  const Connection z = Connection::zero(kSquare, 2);
  const SolutionSpace flat = solveFE(z, z);
  CHECK(flat.dimension == 4);
  CHECK(flat.certifiedResidual == 0.0);
  const Connection n = nilpotent();
  const SolutionSpace nil = solveFE(n, n);
  CHECK(nil.dimension == 2);
  CHECK(nil.certifiedResidual <= 1e-7);
  CHECK(inSpan(nil.basis, Eigen::MatrixXd::Identity(2, 2)));
  CHECK(inSpan(nil.basis, (Eigen::MatrixXd(2, 2) << 0, 1, 0, 0).finished()));
  for (const auto& e : nil.extensions) CHECK(substitutionResidual(n, n, nil.grid, e) <= 1e-6);
  std::mt19937_64 rng(15);
  const Connection a = randomConnection(rng, kSquare, 2);
  const Connection b = randomConnection(rng, kSquare, 2);
  CHECK(solveFE(a, b).dimension == 0);
  const SolutionSpace self = solveFE(a, a);
  CHECK(self.dimension >= 1);
  CHECK(inSpan(self.basis, Eigen::MatrixXd::Identity(2, 2)));
  for (const auto& e : self.extensions) CHECK(substitutionResidual(a, a, self.grid, e) <= 1e-6);
}

TEST_CASE("solution bases are orthonormal and deterministic") {
  std::mt19937_64 rng(16);
  const Connection a = randomConnection(rng, kSquare, 3);
  const SolutionSpace s1 = solveFE(a, a);
  const SolutionSpace s2 = solveFE(a, a);
  REQUIRE(s1.dimension == s2.dimension);
  for (int i = 0; i < s1.dimension; ++i) {
    CHECK(linalg::maxAbs(s1.basis[i] - s2.basis[i]) == 0.0);
    for (int j = 0; j < s1.dimension; ++j) {
      const double ip = (s1.basis[i].array() * s1.basis[j].array()).sum();
      CHECK(ip == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-10));
    }
  }
}

TEST_CASE("extension values are parallel along grid edges") {
  const Connection h = hyperbolicLeviCivita();
  const SolutionSpace s = solveFE(h, h);
  REQUIRE(s.dimension >= 1);
  const SampleGrid& g = s.grid;
  const HomFlow flow(h, h);
  for (const auto& field : s.extensions) {
    for (int node = 0; node + 1 < g.size(); ++node) {
      const auto idx = g.multiIndex(node);
      auto nb = idx;
      nb[0] += 1;
      const int other = g.node(nb);
      if (other < 0) continue;
      std::vector<Eigen::MatrixXd> frames{field[node]};
      flow.segment(g.point(node), g.point(other), 128, frames);
      CHECK(linalg::maxAbs(frames[0] - field[other]) < 1e-8);
    }
  }
}

TEST_CASE("parallel bilinear forms") {
  const Connection n = nilpotent();
  const SolutionSpace sym = solveParallelForms(n, FormSymmetry::Symmetric);
  CHECK(sym.dimension == 1);
  CHECK(inSpan(sym.basis, (Eigen::MatrixXd(2, 2) << 1, 0, 0, 0).finished()));
  const SolutionSpace skew = solveParallelForms(n, FormSymmetry::Antisymmetric);
  CHECK(skew.dimension == 1);
  CHECK(inSpan(skew.basis, (Eigen::MatrixXd(2, 2) << 0, 1, -1, 0).finished()));

  const Connection h = hyperbolicLeviCivita();
  const SolutionSpace hs = solveParallelForms(h, FormSymmetry::Symmetric);
  REQUIRE(hs.dimension == 1);
  const double y = hs.basePoint(1);
  CHECK(inSpan(hs.basis, Eigen::MatrixXd::Identity(2, 2) / (y * y)));
  for (int node = 0; node < hs.grid.size(); ++node) {
    const Eigen::MatrixXd q = hs.extensions[0][node];
    const double yn = hs.grid.point(node)(1);
    CHECK(q(0, 0) * yn * yn == doctest::Approx(hs.basis[0](0, 0) * y * y).epsilon(1e-8));
    CHECK(std::abs(q(0, 1)) < 1e-9);
  }
  CHECK(solveParallelForms(h, FormSymmetry::Antisymmetric).dimension == 1);

  Connection r1 = Connection::zero(ChartDomain{{-1}, {1}, 5}, 1);
  r1.gamma[0](0, 0) = parse("x1");
  CHECK(solveParallelForms(r1, FormSymmetry::Antisymmetric).dimension == 0);
  const SolutionSpace line = solveParallelForms(r1, FormSymmetry::Symmetric);
  REQUIRE(line.dimension == 1);
  // q' = 2 x q, so q = c exp(x^2)
  for (int node = 0; node < line.grid.size(); ++node) {
    const double x = line.grid.point(node)(0);
    const double x0 = line.basePoint(0);
    CHECK(line.extensions[0][node](0, 0) ==
          doctest::Approx(line.basis[0](0, 0) * std::exp(x * x - x0 * x0)).epsilon(1e-8));
  }
}

TEST_CASE("FE dimensions are gauge invariant") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  const Connection n = nilpotent();
  for (int trial = 0; trial < 4; ++trial) {
    GaugeTransform phi = GaugeTransform::identity(kSquare, 2);
    GaugeTransform psi = GaugeTransform::identity(kSquare, 2);
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        phi.phi(a, b) = phi.phi(a, b) + Expr(u(rng)) * Expr::variable(a) + Expr(u(rng)) * Expr::variable(b);
        psi.phi(a, b) = psi.phi(a, b) + Expr(u(rng)) * Expr::variable(b);
      }
    const SolutionSpace moved = solveFE(gaugeAct(phi, n), gaugeAct(phi, n));
    CHECK(moved.dimension == 2);
    const Connection h = hyperbolicLeviCivita();
    GaugeTransform chi{h.domain, 2, phi.phi};
    CHECK(solveParallelForms(gaugeAct(chi, h), FormSymmetry::Symmetric).dimension == 1);
    const Connection a = randomConnection(rng, kSquare, 2);
    const int base = solveFE(a, a).dimension;
    CHECK(solveFE(gaugeAct(phi, a), gaugeAct(psi, a)).dimension == base);
    CHECK(solveFE(gaugeAct(phi, a), gaugeAct(phi, a)).dimension == base);
  }
}

TEST_CASE("base point is snapped to the grid") {
  const Connection n = nilpotent();
  FeOptions opts;
  opts.basePoint = Eigen::Vector2d(0.37, -0.41);
  const SolutionSpace s = solveFE(n, n, opts);
  CHECK(s.basePoint(0) == doctest::Approx(0.4));
  CHECK(s.basePoint(1) == doctest::Approx(-0.4));
  CHECK(s.dimension == 2);
}
