#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "metron/bundle.hpp"
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
  for (auto& g : c.gamma) {
    for (int a = 0; a < r; ++a) {
      for (int b = 0; b < r; ++b) g(a, b) = randomPoly(rng, d.dim(), 1.0);
    }
  }
  return c;
}

GaugeTransform randomGauge(std::mt19937_64& rng, const ChartDomain& d, int r) {
  GaugeTransform p = GaugeTransform::identity(d, r);
  for (int a = 0; a < r; ++a) {
    for (int b = 0; b < r; ++b) p.phi(a, b) = p.phi(a, b) + Expr(0.25) * randomPoly(rng, d.dim(), 0.5);
  }
  return p;
}

Eigen::MatrixXd randomRegularConstant(std::mt19937_64& rng, int r) {
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd a(r, r);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) a(i, j) = n(rng);
  return a * a.transpose() + Eigen::MatrixXd::Identity(r, r);
}

// Central difference of an expression matrix along axis k.
Eigen::MatrixXd fdMatrix(const ExprMatrix& m, const Eigen::VectorXd& x, int k, double h = 1e-5) {
  Eigen::VectorXd xp = x, xm = x;
  xp(k) += h;
  xm(k) -= h;
  return (m.evaluate(at(xp)) - m.evaluate(at(xm))) / (2 * h);
}

}  // namespace

TEST_CASE("sample grid and domain") {
  const SampleGrid g = kSquare.grid();
  CHECK(g.size() == 25);
  CHECK(g.point(0)(0) == doctest::Approx(-0.8));
  CHECK(g.point(12).norm() == doctest::Approx(0.0));
  CHECK(g.findNode(g.point(7)) == 7);
  CHECK(g.node({5, 0}) == -1);
  CHECK(g.nearestNode(Eigen::Vector2d(0.05, -0.05)) == 12);
  ChartDomain bad{{0, 1}, {1, 0}, 5};
  CHECK_THROWS(bad.validate());
}

TEST_CASE("curvature examples") {
  CHECK(curvature(Connection::zero(kSquare, 2)).at(0, 1).isZero());
  const CurvatureField R = curvature(nilpotent());
  const Eigen::MatrixXd N = (Eigen::MatrixXd(2, 2) << 0, 1, 0, 0).finished();
  for (double x : {-0.5, 0.3}) {
    const Eigen::VectorXd p = Eigen::Vector2d(x, 0.7);
    CHECK(linalg::maxAbs(R.at(0, 1).evaluate(at(p)) - N) == 0.0);
    CHECK(linalg::maxAbs(R.at(1, 0).evaluate(at(p)) + N) == 0.0);
  }
  // constant gauge of the zero connection stays flat
  GaugeTransform phi{kSquare, 2, ExprMatrix::constant((Eigen::MatrixXd(2, 2) << 2, 1, 0, 3).finished())};
  const Connection moved = gaugeAct(phi, Connection::zero(kSquare, 2));
  CHECK(coefficientDistance(moved, Connection::zero(kSquare, 2)) == 0.0);
  CHECK(curvature(moved).at(0, 1).isZero());
}

TEST_CASE("curvature matches the coordinate formula evaluated by finite differences") {
  std::mt19937_64 rng(3);
  const ChartDomain d{{-1, -1, -1}, {1, 1, 1}, 3};
  const Connection c = randomConnection(rng, d, 2);
  const CurvatureField R = curvature(c);
  const Eigen::VectorXd x = Eigen::Vector3d(0.2, -0.4, 0.5);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const Eigen::MatrixXd Gi = c.gamma[i].evaluate(at(x));
      const Eigen::MatrixXd Gj = c.gamma[j].evaluate(at(x));
      Eigen::MatrixXd want = fdMatrix(c.gamma[j], x, i) - fdMatrix(c.gamma[i], x, j);
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          for (int l = 0; l < 2; ++l) want(a, b) += Gj(a, l) * Gi(l, b) - Gi(a, l) * Gj(l, b);
      CHECK(linalg::maxAbs(R.at(i, j).evaluate(at(x)) - want) < 1e-8);
    }
  }
}

TEST_CASE("amari dual satisfies its defining relation") {
  std::mt19937_64 rng(4);
  const Connection c = randomConnection(rng, kSquare, 2);
  MetricField g{kSquare, 2, ExprMatrix(2, 2), 2, FormSymmetry::Symmetric};
  g.g(0, 0) = parse("2 + x1^2");
  g.g(0, 1) = parse("0.3*x2");
  g.g(1, 0) = parse("0.3*x2");
  g.g(1, 1) = parse("1 + 0.5*x1*x2 + x2^2");
  const Connection dual = amariDual(g, c);
  const Eigen::VectorXd x = Eigen::Vector2d(0.3, -0.6);
  const Eigen::MatrixXd G = g.g.evaluate(at(x));
  for (int i = 0; i < 2; ++i) {
    // g(dual_i s_a, s_b) = d_i g(s_a, s_b) - g(s_a, nabla_i s_b)
    const Eigen::MatrixXd lhs = dual.gamma[i].evaluate(at(x)) * G;
    const Eigen::MatrixXd rhs = fdMatrix(g.g, x, i) - G * c.gamma[i].evaluate(at(x)).transpose();
    CHECK(linalg::maxAbs(lhs - rhs) < 1e-8);
  }
  CHECK(coefficientDistance(amariDual(g, dual), c) < 1e-9);
}

TEST_CASE("amari dual examples") {
  const MetricField I = MetricField::constant(kSquare, Eigen::MatrixXd::Identity(2, 2));
  CHECK(coefficientDistance(amariDual(I, Connection::zero(kSquare, 2)), Connection::zero(kSquare, 2)) == 0.0);
  // hyperbolic Levi-Civita is its own dual
  const ChartDomain h{{-1, 1}, {1, 2}, 5};
  MetricField g{h, 2, ExprMatrix(2, 2), 2, FormSymmetry::Symmetric};
  g.g(0, 0) = parse("1/x2^2");
  g.g(1, 1) = parse("1/x2^2");
  const Connection lc = leviCivita(g);
  CHECK(coefficientDistance(amariDual(g, lc), lc) < 1e-9);
  MetricField singular = MetricField::constant(kSquare, (Eigen::MatrixXd(2, 2) << 1, 0, 0, 0).finished());
  CHECK(singular.declaredRank == 1);
  CHECK_THROWS_AS(amariDual(singular, Connection::zero(kSquare, 2)), SingularMetricError);
  MetricField nearlySingular = MetricField::constant(kSquare, (Eigen::MatrixXd(2, 2) << 1, 0, 0, 1e-10).finished());
  nearlySingular.declaredRank = 2;
  CHECK_THROWS_AS(requireRegular(nearlySingular), SingularMetricError);
}

TEST_CASE("levi-civita of the hyperbolic metric matches hand-derived symbols") {
  const ChartDomain h{{-1, 1}, {1, 2}, 5};
  MetricField g{h, 2, ExprMatrix(2, 2), 2, FormSymmetry::Symmetric};
  g.g(0, 0) = parse("1/x2^2");
  g.g(1, 1) = parse("1/x2^2");
  const Connection lc = leviCivita(g);
  // Gamma_{12}^1 = Gamma_{21}^1 = -1/y, Gamma_{11}^2 = 1/y, Gamma_{22}^2 = -1/y
  for (double y : {1.2, 1.7}) {
    const Eigen::VectorXd x = Eigen::Vector2d(0.1, y);
    const Eigen::MatrixXd G1 = lc.gamma[0].evaluate(at(x));
    const Eigen::MatrixXd G2 = lc.gamma[1].evaluate(at(x));
    CHECK(G1(0, 0) == doctest::Approx(0.0));
    CHECK(G1(0, 1) == doctest::Approx(1 / y));
    CHECK(G1(1, 0) == doctest::Approx(-1 / y));
    CHECK(G1(1, 1) == doctest::Approx(0.0));
    CHECK(G2(0, 0) == doctest::Approx(-1 / y));
    CHECK(G2(0, 1) == doctest::Approx(0.0));
    CHECK(G2(1, 0) == doctest::Approx(0.0));
    CHECK(G2(1, 1) == doctest::Approx(-1 / y));
  }
  CHECK(covariantDerivativeOfMetric(lc, g).residual <= 1e-9);
}

TEST_CASE("covariant derivative of a metric") {
  const MetricField I = MetricField::constant(kSquare, Eigen::MatrixXd::Identity(2, 2));
  CHECK(covariantDerivativeOfMetric(Connection::zero(kSquare, 2), I).residual == 0.0);
  MetricField g{kSquare, 2, ExprMatrix(2, 2), 2, FormSymmetry::Symmetric};
  g.g(0, 0) = parse("1 + x1");
  g.g(1, 1) = Expr(1.0);
  CHECK(covariantDerivativeOfMetric(Connection::zero(kSquare, 2), g).residual == doctest::Approx(1.0));
}

TEST_CASE("fixed points of the dual are exactly the metric connections") {
  std::mt19937_64 rng(5);
  const MetricField I = MetricField::constant(kSquare, Eigen::MatrixXd::Identity(2, 2));
  Connection skew = Connection::zero(kSquare, 2);
  skew.gamma[0](0, 1) = parse("x2^2 + 1");
  skew.gamma[0](1, 0) = parse("-(x2^2 + 1)");
  CHECK(covariantDerivativeOfMetric(skew, I).residual <= 1e-12);
  CHECK(coefficientDistance(amariDual(I, skew), skew) <= 1e-12);
  const Connection c = randomConnection(rng, kSquare, 2);
  CHECK(covariantDerivativeOfMetric(c, I).residual > 1e-3);
  CHECK(coefficientDistance(amariDual(I, c), c) > 1e-3);
}

TEST_CASE("gauge action satisfies its defining relation") {
  std::mt19937_64 rng(6);
  const Connection c = randomConnection(rng, kSquare, 2);
  const GaugeTransform phi = randomGauge(rng, kSquare, 2);
  const Connection moved = gaugeAct(phi, c);
  const Eigen::VectorXd x = Eigen::Vector2d(-0.4, 0.25);
  const Eigen::MatrixXd P = phi.phi.evaluate(at(x));
  const Eigen::MatrixXd Pinv = P.inverse();
  for (int i = 0; i < 2; ++i) {
    // component rows of nabla_i(phi^{-1} s_a), then mapped by phi
    Eigen::VectorXd xp = x, xm = x;
    xp(i) += 1e-5;
    xm(i) -= 1e-5;
    const Eigen::MatrixXd dPinv =
        (phi.phi.evaluate(at(xp)).inverse() - phi.phi.evaluate(at(xm)).inverse()) / 2e-5;
    const Eigen::MatrixXd want = (dPinv + Pinv * c.gamma[i].evaluate(at(x))) * P;
    CHECK(linalg::maxAbs(moved.gamma[i].evaluate(at(x)) - want) < 1e-8);
  }
  CHECK(coefficientDistance(gaugeAct(inverse(phi), moved), c) < 1e-9);
  CHECK(coefficientDistance(gaugeAct(GaugeTransform::identity(kSquare, 2), c), c) == 0.0);
}

TEST_CASE("curvature of a gauge-transformed connection is conjugated") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const Connection c = randomConnection(rng, kSquare, 2);
    const GaugeTransform phi = randomGauge(rng, kSquare, 2);
    const CurvatureField R = curvature(c);
    const CurvatureField Rm = curvature(gaugeAct(phi, c));
    const SampleGrid grid = kSquare.grid(3);
    for (int n = 0; n < grid.size(); ++n) {
      const Eigen::VectorXd x = grid.point(n);
      const Eigen::MatrixXd P = phi.phi.evaluate(at(x));
      CHECK(linalg::maxAbs(Rm.at(0, 1).evaluate(at(x)) - P.inverse() * R.at(0, 1).evaluate(at(x)) * P) < 1e-8);
    }
  }
}

TEST_CASE("pushforward of metrics") {
  const MetricField I = MetricField::constant(kSquare, Eigen::MatrixXd::Identity(2, 2));
  const MetricField same = pushforwardMetric(GaugeTransform::identity(kSquare, 2), I);
  CHECK(linalg::maxAbs(same.g.evaluate(std::vector<double>{0, 0}) - Eigen::MatrixXd::Identity(2, 2)) == 0.0);
  GaugeTransform two{kSquare, 2, ExprMatrix::constant(2.0 * Eigen::MatrixXd::Identity(2, 2))};
  const MetricField quarter = pushforwardMetric(two, I);
  CHECK(linalg::maxAbs(quarter.g.evaluate(std::vector<double>{0.3, 0.1}) - 0.25 * Eigen::MatrixXd::Identity(2, 2)) <
        1e-15);
  std::mt19937_64 rng(8);
  MetricField rank1 = MetricField::constant(kSquare, (Eigen::MatrixXd(2, 2) << 1, 1, 1, 1).finished());
  const MetricField moved = pushforwardMetric(randomGauge(rng, kSquare, 2), rank1);
  CHECK(moved.declaredRank == 1);
  CHECK_NOTHROW(requireDeclaredRank(moved));
}

TEST_CASE("quasi-commutativity") {
  std::mt19937_64 rng(9);
  const MetricField I = MetricField::constant(kSquare, Eigen::MatrixXd::Identity(2, 2));
  CHECK(quasiCommutativityCheck(GaugeTransform::identity(kSquare, 2), I, nilpotent()) == 0.0);
  GaugeTransform c{kSquare, 2, ExprMatrix::constant((Eigen::MatrixXd(2, 2) << 1, 2, -1, 3).finished())};
  CHECK(quasiCommutativityCheck(c, I, Connection::zero(kSquare, 2)) <= 1e-12);
  for (int trial = 0; trial < 5; ++trial) {
    const MetricField g = MetricField::constant(kSquare, randomRegularConstant(rng, 2));
    CHECK(quasiCommutativityCheck(randomGauge(rng, kSquare, 2), g, randomConnection(rng, kSquare, 2)) <= 1e-8);
  }
}

TEST_CASE("gauge transforms must be invertible") {
  GaugeTransform bad{ChartDomain{{-1, -1}, {1, 1}, 4}, 2, ExprMatrix(2, 2)};
  bad.phi(0, 0) = parse("x1");
  bad.phi(1, 1) = Expr(1.0);
  CHECK_NOTHROW(requireInvertible(bad));  // x1 never vanishes on an even cell-centred grid
  GaugeTransform worse{kSquare, 2, bad.phi};
  CHECK_THROWS_AS(requireInvertible(worse), NonInvertibleGaugeError);
  CHECK_THROWS_AS(gaugeAct(worse, Connection::zero(worse.domain, 2)), NonInvertibleGaugeError);
}

TEST_CASE("symbolic inverse and determinant") {
  std::mt19937_64 rng(10);
  for (int r = 1; r <= 4; ++r) {
    ExprMatrix m(r, r);
    for (int a = 0; a < r; ++a)
      for (int b = 0; b < r; ++b) m(a, b) = randomPoly(rng, 2, 1.0) + Expr(a == b ? 3.0 : 0.0);
    const std::vector<double> x{0.2, 0.4};
    const Eigen::MatrixXd M = m.evaluate(x);
    CHECK(evaluate(determinant(m), x) == doctest::Approx(M.determinant()));
    CHECK(linalg::maxAbs(inverse(m).evaluate(x) - M.inverse()) < 1e-10);
  }
}
