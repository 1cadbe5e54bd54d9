#include "metron/bundle.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "metron/linalg.hpp"

namespace metron {

// ---------------------------------------------------------------------------
// Grid and domain

SampleGrid::SampleGrid(std::vector<double> lower, std::vector<double> upper, int perAxis)
    : lower_(std::move(lower)), upper_(std::move(upper)), perAxis_(perAxis), size_(1) {
  if (perAxis_ < 1) throw std::invalid_argument("grid needs at least one node per axis");
  for (int k = 0; k < dim(); ++k) size_ *= perAxis_;
}

Eigen::VectorXd SampleGrid::point(int node) const {
  Eigen::VectorXd x(dim());
  const auto idx = multiIndex(node);
  for (int k = 0; k < dim(); ++k) x(k) = lower_[k] + (idx[k] + 0.5) * spacing(k);
  return x;
}

std::vector<int> SampleGrid::multiIndex(int node) const {
  std::vector<int> idx(dim());
  for (int k = dim() - 1; k >= 0; --k) {
    idx[k] = node % perAxis_;
    node /= perAxis_;
  }
  return idx;
}

int SampleGrid::node(const std::vector<int>& index) const {
  int n = 0;
  for (int k = 0; k < dim(); ++k) {
    if (index[k] < 0 || index[k] >= perAxis_) return -1;
    n = n * perAxis_ + index[k];
  }
  return n;
}

int SampleGrid::findNode(const Eigen::VectorXd& x, double tol) const {
  const int n = nearestNode(x);
  return (point(n) - x).cwiseAbs().maxCoeff() <= tol * std::max(1.0, x.cwiseAbs().maxCoeff()) ? n : -1;
}

int SampleGrid::nearestNode(const Eigen::VectorXd& x) const {
  std::vector<int> idx(dim());
  for (int k = 0; k < dim(); ++k) {
    const double t = (x(k) - lower_[k]) / spacing(k) - 0.5;
    idx[k] = std::clamp(static_cast<int>(std::lround(t)), 0, perAxis_ - 1);
  }
  return node(idx);
}

void ChartDomain::validate() const {
  if (lower.empty()) throw std::invalid_argument("domain has dimension 0");
  if (lower.size() != upper.size()) throw std::invalid_argument("domain bounds differ in length");
  for (std::size_t k = 0; k < lower.size(); ++k) {
    if (!(lower[k] < upper[k])) {
      throw std::invalid_argument("domain axis " + std::to_string(k + 1) + " has lower >= upper");
    }
  }
  if (gridPerAxis < 1) throw std::invalid_argument("gridPerAxis must be positive");
}

Eigen::VectorXd ChartDomain::center() const {
  Eigen::VectorXd c(dim());
  for (int k = 0; k < dim(); ++k) c(k) = 0.5 * (lower[k] + upper[k]);
  return c;
}

bool ChartDomain::contains(const Eigen::VectorXd& x) const {
  if (x.size() != dim()) return false;
  for (int k = 0; k < dim(); ++k) {
    if (x(k) < lower[k] || x(k) > upper[k]) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Expression matrices

ExprMatrix ExprMatrix::identity(int n) {
  ExprMatrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = Expr(1.0);
  return m;
}

ExprMatrix ExprMatrix::constant(const Eigen::MatrixXd& c) {
  ExprMatrix m(static_cast<int>(c.rows()), static_cast<int>(c.cols()));
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) m(i, j) = Expr(c(i, j));
  }
  return m;
}

ExprMatrix ExprMatrix::transpose() const {
  ExprMatrix t(cols_, rows_);
  for (int i = 0; i < rows_; ++i) {
    for (int j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  }
  return t;
}

ExprMatrix ExprMatrix::derivative(int k) const {
  ExprMatrix d(rows_, cols_);
  d.data_ = differentiate(std::span<const Expr>(data_), k);
  return d;
}

bool ExprMatrix::isZero() const {
  return std::all_of(data_.begin(), data_.end(), [](const Expr& e) { return e.isZero(); });
}

Eigen::MatrixXd ExprMatrix::evaluate(std::span<const double> x) const {
  Tape tape(data_);
  const auto v = tape.evaluate(x);
  Eigen::MatrixXd m(rows_, cols_);
  for (int i = 0; i < rows_; ++i) {
    for (int j = 0; j < cols_; ++j) m(i, j) = v[i * cols_ + j];
  }
  return m;
}

ExprMatrix operator+(const ExprMatrix& a, const ExprMatrix& b) {
  ExprMatrix c(a.rows_, a.cols_);
  for (std::size_t k = 0; k < a.data_.size(); ++k) c.data_[k] = a.data_[k] + b.data_[k];
  return c;
}

ExprMatrix operator-(const ExprMatrix& a, const ExprMatrix& b) {
  ExprMatrix c(a.rows_, a.cols_);
  for (std::size_t k = 0; k < a.data_.size(); ++k) c.data_[k] = a.data_[k] - b.data_[k];
  return c;
}

ExprMatrix operator*(const ExprMatrix& a, const ExprMatrix& b) {
  if (a.cols_ != b.rows_) throw std::invalid_argument("ExprMatrix shape mismatch");
  ExprMatrix c(a.rows_, b.cols_);
  for (int i = 0; i < a.rows_; ++i) {
    for (int j = 0; j < b.cols_; ++j) {
      Expr s;
      for (int k = 0; k < a.cols_; ++k) {
        if (a(i, k).isZero() || b(k, j).isZero()) continue;
        s = s + a(i, k) * b(k, j);
      }
      c(i, j) = s;
    }
  }
  return c;
}

ExprMatrix operator*(const Expr& s, const ExprMatrix& a) {
  ExprMatrix c(a.rows_, a.cols_);
  for (std::size_t k = 0; k < a.data_.size(); ++k) c.data_[k] = s * a.data_[k];
  return c;
}

ExprMatrix operator-(const ExprMatrix& a) {
  ExprMatrix c(a.rows_, a.cols_);
  for (std::size_t k = 0; k < a.data_.size(); ++k) c.data_[k] = -a.data_[k];
  return c;
}

namespace {

ExprMatrix minor(const ExprMatrix& m, int row, int col) {
  const int n = m.rows();
  ExprMatrix out(n - 1, n - 1);
  for (int i = 0, oi = 0; i < n; ++i) {
    if (i == row) continue;
    for (int j = 0, oj = 0; j < n; ++j) {
      if (j == col) continue;
      out(oi, oj++) = m(i, j);
    }
    ++oi;
  }
  return out;
}

}  // namespace

Expr determinant(const ExprMatrix& m) {
  const int n = m.rows();
  if (n != m.cols()) throw std::invalid_argument("determinant of a non-square matrix");
  if (n == 0) return Expr(1.0);
  if (n == 1) return m(0, 0);
  if (n == 2) return m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  Expr det;
  for (int j = 0; j < n; ++j) {
    if (m(0, j).isZero()) continue;
    const Expr term = m(0, j) * determinant(minor(m, 0, j));
    det = (j % 2 == 0) ? det + term : det - term;
  }
  return det;
}

ExprMatrix adjugate(const ExprMatrix& m) {
  const int n = m.rows();
  ExprMatrix adj(n, n);
  if (n == 1) {
    adj(0, 0) = Expr(1.0);
    return adj;
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const Expr c = determinant(minor(m, i, j));
      adj(j, i) = ((i + j) % 2 == 0) ? c : -c;
    }
  }
  return adj;
}

ExprMatrix inverse(const ExprMatrix& m) {
  if (m.rows() > 4) throw std::invalid_argument("symbolic inverse supports rank <= 4");
  const Expr det = determinant(m);
  ExprMatrix adj = adjugate(m);
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) adj(i, j) = adj(i, j) / det;
  }
  return adj;
}

CompiledMatrices::CompiledMatrices(std::span<const ExprMatrix> ms) {
  std::vector<Expr> all;
  for (const auto& m : ms) {
    shapes_.emplace_back(m.rows(), m.cols());
    all.insert(all.end(), m.entries().begin(), m.entries().end());
  }
  tape_ = Tape(all);
}

void CompiledMatrices::evaluate(std::span<const double> x, std::vector<Eigen::MatrixXd>& out) const {
  thread_local std::vector<double> buf;
  buf.resize(tape_.outputCount());
  tape_.evaluate(x, buf);
  out.resize(shapes_.size());
  std::size_t k = 0;
  for (std::size_t s = 0; s < shapes_.size(); ++s) {
    auto [r, c] = shapes_[s];
    out[s].resize(r, c);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) out[s](i, j) = buf[k++];
    }
  }
}

std::vector<Eigen::MatrixXd> CompiledMatrices::evaluate(std::span<const double> x) const {
  std::vector<Eigen::MatrixXd> out;
  evaluate(x, out);
  return out;
}

// ---------------------------------------------------------------------------
// Bundle objects

void Connection::validate() const {
  domain.validate();
  if (rank < 1) throw std::invalid_argument("connection rank must be positive");
  if (static_cast<int>(gamma.size()) != dim()) {
    throw std::invalid_argument("connection needs one coefficient matrix per coordinate");
  }
  for (const auto& g : gamma) {
    if (g.rows() != rank || g.cols() != rank) throw std::invalid_argument("coefficient matrix is not r x r");
    for (const auto& e : g.entries()) {
      if (maxVariable(e) >= dim()) throw std::invalid_argument("coefficient uses a coordinate beyond the chart");
    }
  }
}

Connection Connection::zero(const ChartDomain& domain, int rank) {
  Connection c{domain, rank, {}};
  c.gamma.assign(domain.dim(), ExprMatrix(rank, rank));
  return c;
}

MetricField MetricField::constant(const ChartDomain& domain, const Eigen::MatrixXd& g) {
  MetricField f;
  f.domain = domain;
  f.rank = static_cast<int>(g.rows());
  f.g = ExprMatrix::constant(g);
  f.declaredRank = linalg::numericalRank(g, 1e-8);
  f.symmetry = FormSymmetry::Symmetric;
  return f;
}

GaugeTransform GaugeTransform::identity(const ChartDomain& domain, int rank) {
  return GaugeTransform{domain, rank, ExprMatrix::identity(rank)};
}

namespace {

std::string describePoint(const Eigen::VectorXd& x) {
  std::ostringstream os;
  os << '(';
  for (int k = 0; k < x.size(); ++k) os << (k ? ", " : "") << x(k);
  os << ')';
  return os.str();
}

template <typename F>
void forEachGridPoint(const ChartDomain& domain, F&& f) {
  const SampleGrid grid = domain.grid();
  for (int n = 0; n < grid.size(); ++n) {
    const Eigen::VectorXd x = grid.point(n);
    f(x);
  }
}

}  // namespace

void requireRegular(const MetricField& g, const Tolerances& tol) {
  if (!g.regular()) throw SingularMetricError("metric is declared singular (rank " +
                                              std::to_string(g.declaredRank) + " < " + std::to_string(g.rank) + ")");
  const ExprMatrix* mats = &g.g;
  CompiledMatrices cm(std::span<const ExprMatrix>(mats, 1));
  forEachGridPoint(g.domain, [&](const Eigen::VectorXd& x) {
    const Eigen::MatrixXd G = cm.evaluate(std::span<const double>(x.data(), x.size()))[0];
    const double det = G.determinant();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(G);
    const auto& s = svd.singularValues();
    const double cond = s(s.size() - 1) > 0 ? s(0) / s(s.size() - 1) : INFINITY;
    if (std::abs(det) < tol.regularDet || cond > tol.regularCond) {
      throw SingularMetricError("metric is not regular at " + describePoint(x));
    }
  });
}

void requireDeclaredRank(const MetricField& g, const Tolerances& tol) {
  const ExprMatrix* mats = &g.g;
  CompiledMatrices cm(std::span<const ExprMatrix>(mats, 1));
  forEachGridPoint(g.domain, [&](const Eigen::VectorXd& x) {
    const Eigen::MatrixXd G = cm.evaluate(std::span<const double>(x.data(), x.size()))[0];
    const int rk = linalg::numericalRank(G, tol.rank);
    if (rk != g.declaredRank) {
      throw GeometryError("metric has rank " + std::to_string(rk) + " at " + describePoint(x) +
                          ", declared " + std::to_string(g.declaredRank));
    }
  });
}

void requireInvertible(const GaugeTransform& phi, const Tolerances& tol) {
  const ExprMatrix* mats = &phi.phi;
  CompiledMatrices cm(std::span<const ExprMatrix>(mats, 1));
  forEachGridPoint(phi.domain, [&](const Eigen::VectorXd& x) {
    const Eigen::MatrixXd P = cm.evaluate(std::span<const double>(x.data(), x.size()))[0];
    if (std::abs(P.determinant()) < tol.regularDet) {
      throw NonInvertibleGaugeError("gauge transformation is not invertible at " + describePoint(x));
    }
  });
}

CurvatureField curvature(const Connection& nabla) {
  const int m = nabla.dim();
  CurvatureField R{m, nabla.rank, std::vector<ExprMatrix>(m * m, ExprMatrix(nabla.rank, nabla.rank))};
  // d_i Gamma_j for all i, j
  std::vector<std::vector<ExprMatrix>> d(m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) d[i].push_back(nabla.gamma[j].derivative(i));
  }
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      const ExprMatrix& Gi = nabla.gamma[i];
      const ExprMatrix& Gj = nabla.gamma[j];
      ExprMatrix rij = d[i][j] - d[j][i] + Gj * Gi - Gi * Gj;
      R.components[i * m + j] = rij;
      R.components[j * m + i] = -rij;
    }
  }
  return R;
}

Connection amariDual(const MetricField& g, const Connection& nabla, const Tolerances& tol) {
  if (g.rank != nabla.rank) throw std::invalid_argument("metric and connection ranks differ");
  requireRegular(g, tol);
  const ExprMatrix ginv = inverse(g.g);
  Connection out{nabla.domain, nabla.rank, {}};
  for (int i = 0; i < nabla.dim(); ++i) {
    // Gamma*_i G = d_i G - G Gamma_i^T
    out.gamma.push_back((g.g.derivative(i) - g.g * nabla.gamma[i].transpose()) * ginv);
  }
  return out;
}

GaugeTransform inverse(const GaugeTransform& phi, const Tolerances& tol) {
  requireInvertible(phi, tol);
  return GaugeTransform{phi.domain, phi.rank, inverse(phi.phi)};
}

Connection gaugeAct(const GaugeTransform& phi, const Connection& nabla, const Tolerances& tol) {
  if (phi.rank != nabla.rank) throw std::invalid_argument("gauge and connection ranks differ");
  requireInvertible(phi, tol);
  const ExprMatrix pinv = inverse(phi.phi);
  Connection out{nabla.domain, nabla.rank, {}};
  for (int i = 0; i < nabla.dim(); ++i) {
    out.gamma.push_back(pinv * (nabla.gamma[i] * phi.phi - phi.phi.derivative(i)));
  }
  return out;
}

MetricField pushforwardMetric(const GaugeTransform& phi, const MetricField& g, const Tolerances& tol) {
  requireInvertible(phi, tol);
  const ExprMatrix pinv = inverse(phi.phi);
  MetricField out = g;
  out.g = pinv * g.g * pinv.transpose();
  return out;
}

MetricDerivative covariantDerivativeOfMetric(const Connection& nabla, const MetricField& g) {
  MetricDerivative out;
  for (int i = 0; i < nabla.dim(); ++i) {
    const ExprMatrix& Gi = nabla.gamma[i];
    out.components.push_back(g.g.derivative(i) - Gi * g.g - g.g * Gi.transpose());
  }
  CompiledMatrices cm(out.components);
  forEachGridPoint(nabla.domain, [&](const Eigen::VectorXd& x) {
    for (const auto& m : cm.evaluate(std::span<const double>(x.data(), x.size()))) {
      out.residual = std::max(out.residual, linalg::maxAbs(m));
    }
  });
  return out;
}

double coefficientDistance(const Connection& a, const Connection& b) {
  if (a.rank != b.rank || a.dim() != b.dim()) throw std::invalid_argument("connection shapes differ");
  CompiledMatrices ca(a.gamma);
  CompiledMatrices cb(b.gamma);
  double worst = 0.0;
  forEachGridPoint(a.domain, [&](const Eigen::VectorXd& x) {
    const std::span<const double> p(x.data(), x.size());
    const auto va = ca.evaluate(p);
    const auto vb = cb.evaluate(p);
    for (std::size_t i = 0; i < va.size(); ++i) worst = std::max(worst, linalg::maxAbs(va[i] - vb[i]));
  });
  return worst;
}

double quasiCommutativityCheck(const GaugeTransform& phi, const MetricField& g, const Connection& nabla,
                               const Tolerances& tol) {
  const Connection lhs = gaugeAct(phi, amariDual(g, nabla, tol), tol);
  const Connection rhs = amariDual(pushforwardMetric(phi, g, tol), gaugeAct(phi, nabla, tol), tol);
  return coefficientDistance(lhs, rhs);
}

Connection leviCivita(const MetricField& g, const Tolerances& tol) {
  const int m = g.domain.dim();
  if (g.rank != m) throw std::invalid_argument("Levi-Civita needs a metric on the tangent bundle");
  requireRegular(g, tol);
  const ExprMatrix ginv = inverse(g.g);
  std::vector<ExprMatrix> dg;
  for (int l = 0; l < m; ++l) dg.push_back(g.g.derivative(l));
  Connection out{g.domain, m, std::vector<ExprMatrix>(m, ExprMatrix(m, m))};
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      // first-kind symbols [ij, l]
      std::vector<Expr> first(m);
      for (int l = 0; l < m; ++l) first[l] = Expr(0.5) * (dg[i](j, l) + dg[j](i, l) - dg[l](i, j));
      for (int k = 0; k < m; ++k) {
        Expr s;
        for (int l = 0; l < m; ++l) {
          if (ginv(k, l).isZero() || first[l].isZero()) continue;
          s = s + ginv(k, l) * first[l];
        }
        out.gamma[i](j, k) = s;
      }
    }
  }
  return out;
}

Connection bilinearFormTarget(const Connection& nabla) {
  Connection out{nabla.domain, nabla.rank, {}};
  for (const auto& g : nabla.gamma) out.gamma.push_back(-g.transpose());
  return out;
}

}  // namespace metron
