#include "metron/transport.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "metron/linalg.hpp"

namespace metron {

PolylinePath PolylinePath::segment(const Eigen::VectorXd& a, const Eigen::VectorXd& b, int steps) {
  return PolylinePath{{a, b}, steps};
}

bool PolylinePath::closed() const {
  return vertices.size() >= 2 && (vertices.front() - vertices.back()).cwiseAbs().maxCoeff() == 0.0;
}

PolylinePath PolylinePath::reversed() const {
  PolylinePath r = *this;
  std::reverse(r.vertices.begin(), r.vertices.end());
  return r;
}

void PolylinePath::validate(const ChartDomain& domain) const {
  if (stepsPerSegment < 8) throw TransportError("stepsPerSegment must be at least 8");
  if (vertices.size() < 2) throw TransportError("path needs at least two vertices");
  for (std::size_t k = 0; k < vertices.size(); ++k) {
    if (!domain.contains(vertices[k])) {
      throw TransportError("path vertex " + std::to_string(k) + " lies outside the chart domain");
    }
    if (k > 0 && (vertices[k] - vertices[k - 1]).cwiseAbs().maxCoeff() == 0.0) {
      throw TransportError("path has repeated consecutive vertex " + std::to_string(k));
    }
  }
}

HomFlow::HomFlow(const Connection& source, const Connection& target)
    : source_(source.gamma), target_(target.gamma), dim_(source.dim()), rank_(source.rank) {
  if (source.rank != target.rank || source.dim() != target.dim()) {
    throw std::invalid_argument("source and target connections have different shapes");
  }
}

void HomFlow::directional(const Eigen::VectorXd& x, const Eigen::VectorXd& dir, Eigen::MatrixXd& m,
                          Eigen::MatrixXd& mstar) const {
  thread_local std::vector<Eigen::MatrixXd> gs;
  thread_local std::vector<Eigen::MatrixXd> gt;
  const std::span<const double> p(x.data(), x.size());
  source_.evaluate(p, gs);
  target_.evaluate(p, gt);
  m.setZero(rank_, rank_);
  mstar.setZero(rank_, rank_);
  for (int i = 0; i < dim_; ++i) {
    if (dir(i) == 0.0) continue;
    m.noalias() += dir(i) * gs[i];
    mstar.noalias() += dir(i) * gt[i];
  }
}

Eigen::MatrixXd HomFlow::derivative(const Eigen::VectorXd& x, int axis, const Eigen::MatrixXd& phi) const {
  Eigen::VectorXd dir = Eigen::VectorXd::Zero(dim_);
  dir(axis) = 1.0;
  Eigen::MatrixXd m, ms;
  directional(x, dir, m, ms);
  return m * phi - phi * ms;
}

void HomFlow::segment(const Eigen::VectorXd& a, const Eigen::VectorXd& b, int steps,
                      std::vector<Eigen::MatrixXd>& frames) const {
  const Eigen::VectorXd dir = b - a;
  const double h = 1.0 / steps;
  Eigen::MatrixXd m0, s0, m1, s1, m2, s2;
  directional(a, dir, m0, s0);
  for (int n = 0; n < steps; ++n) {
    const double t = n * h;
    directional(a + (t + 0.5 * h) * dir, dir, m1, s1);
    directional(n + 1 == steps ? b : Eigen::VectorXd(a + (t + h) * dir), dir, m2, s2);
    for (auto& phi : frames) {
      const Eigen::MatrixXd k1 = m0 * phi - phi * s0;
      const Eigen::MatrixXd p2 = phi + 0.5 * h * k1;
      const Eigen::MatrixXd k2 = m1 * p2 - p2 * s1;
      const Eigen::MatrixXd p3 = phi + 0.5 * h * k2;
      const Eigen::MatrixXd k3 = m1 * p3 - p3 * s1;
      const Eigen::MatrixXd p4 = phi + h * k3;
      const Eigen::MatrixXd k4 = m2 * p4 - p4 * s2;
      phi += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    m0.swap(m2);
    s0.swap(s2);
  }
}

void HomFlow::path(const PolylinePath& p, std::vector<Eigen::MatrixXd>& frames) const {
  for (std::size_t k = 1; k < p.vertices.size(); ++k) {
    segment(p.vertices[k - 1], p.vertices[k], p.stepsPerSegment, frames);
  }
}

namespace {

TransportResult runWithEstimate(const HomFlow& flow, const PolylinePath& path, const Eigen::MatrixXd& phi0) {
  std::vector<Eigen::MatrixXd> coarse{phi0};
  flow.path(path, coarse);
  PolylinePath fine = path;
  fine.stepsPerSegment *= 2;
  std::vector<Eigen::MatrixXd> refined{phi0};
  flow.path(fine, refined);
  return TransportResult{coarse[0], linalg::maxAbs(coarse[0] - refined[0]) * 16.0 / 15.0};
}

void requireShape(const Eigen::MatrixXd& m, int r) {
  if (m.rows() != r || m.cols() != r) throw TransportError("initial frame has the wrong shape");
}

}  // namespace

TransportResult transportHom(const Connection& nabla, const Connection& nablaStar, const PolylinePath& path,
                             const Eigen::MatrixXd& phi0) {
  path.validate(nabla.domain);
  requireShape(phi0, nabla.rank);
  return runWithEstimate(HomFlow(nabla, nablaStar), path, phi0);
}

TransportResult transportVector(const Connection& nabla, const PolylinePath& path, const Eigen::VectorXd& v0) {
  path.validate(nabla.domain);
  if (v0.size() != nabla.rank) throw TransportError("initial vector has the wrong length");
  // rows of Phi evolve as dv^T/dt = -v^T Gamma(x'), i.e. the flow with source 0 and target nabla
  Eigen::MatrixXd phi0 = Eigen::MatrixXd::Zero(nabla.rank, nabla.rank);
  phi0.row(0) = v0.transpose();
  TransportResult r = runWithEstimate(HomFlow(Connection::zero(nabla.domain, nabla.rank), nabla), path, phi0);
  r.endFrame = Eigen::MatrixXd(r.endFrame.row(0).transpose());
  return r;
}

TransportResult transportForm(const Connection& nabla, const PolylinePath& path, const Eigen::MatrixXd& q0) {
  path.validate(nabla.domain);
  requireShape(q0, nabla.rank);
  return runWithEstimate(HomFlow(nabla, bilinearFormTarget(nabla)), path, q0);
}

Eigen::MatrixXd loopHolonomyHom(const Connection& nabla, const Connection& nablaStar, const PolylinePath& loop) {
  loop.validate(nabla.domain);
  if (!loop.closed()) throw TransportError("holonomy needs a closed loop");
  const int r = nabla.rank;
  std::vector<Eigen::MatrixXd> frames;
  for (int p = 0; p < r * r; ++p) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(r * r);
    e(p) = 1.0;
    frames.push_back(linalg::unvec(e, r));
  }
  HomFlow(nabla, nablaStar).path(loop, frames);
  Eigen::MatrixXd h(r * r, r * r);
  for (int p = 0; p < r * r; ++p) h.col(p) = linalg::vec(frames[p]);
  return h;
}

SpanningTree SpanningTree::build(const SampleGrid& grid, int root) {
  SpanningTree t;
  const int n = grid.size();
  t.parent.assign(n, -2);
  t.parent[root] = -1;
  std::deque<int> queue{root};
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    t.order.push_back(u);
    const auto idx = grid.multiIndex(u);
    for (int k = 0; k < grid.dim(); ++k) {
      for (int s : {-1, 1}) {
        auto nb = idx;
        nb[k] += s;
        const int v = grid.node(nb);
        if (v < 0 || t.parent[v] != -2) continue;
        t.parent[v] = u;
        queue.push_back(v);
      }
    }
  }
  for (int u = 0; u < n; ++u) {
    const auto idx = grid.multiIndex(u);
    for (int k = 0; k < grid.dim(); ++k) {
      auto nb = idx;
      ++nb[k];
      const int v = grid.node(nb);
      if (v < 0) continue;
      if (t.parent[v] == u || t.parent[u] == v) continue;
      t.nonTreeEdges.emplace_back(u, v);
    }
  }
  return t;
}

BatchExtension extendBatch(const HomFlow& flow, const SampleGrid& grid, int root,
                           const std::vector<Eigen::MatrixXd>& candidates, int stepsPerEdge) {
  if (grid.perAxis() < 3) throw TransportError("extension grid needs at least 3 nodes per axis");
  if (stepsPerEdge < 8) throw TransportError("stepsPerEdge must be at least 8");
  const int r = flow.rank();
  const int c = static_cast<int>(candidates.size());
  const SpanningTree tree = SpanningTree::build(grid, root);

  // [node][candidate] while integrating, transposed at the end
  std::vector<std::vector<Eigen::MatrixXd>> byNode(grid.size());
  byNode[root] = candidates;
  for (std::size_t k = 1; k < tree.order.size(); ++k) {
    const int v = tree.order[k];
    const int u = tree.parent[v];
    std::vector<Eigen::MatrixXd> frames = byNode[u];
    flow.segment(grid.point(u), grid.point(v), stepsPerEdge, frames);
    byNode[v] = std::move(frames);
  }

  BatchExtension out;
  out.discrepancy = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(tree.nonTreeEdges.size()) * r * r, c);
  for (std::size_t e = 0; e < tree.nonTreeEdges.size(); ++e) {
    const auto [u, v] = tree.nonTreeEdges[e];
    std::vector<Eigen::MatrixXd> frames = byNode[u];
    flow.segment(grid.point(u), grid.point(v), stepsPerEdge, frames);
    for (int j = 0; j < c; ++j) {
      out.discrepancy.block(static_cast<Eigen::Index>(e) * r * r, j, r * r, 1) =
          linalg::vec(frames[j] - byNode[v][j]);
    }
  }
  out.values.assign(c, std::vector<Eigen::MatrixXd>(grid.size()));
  for (int n = 0; n < grid.size(); ++n) {
    for (int j = 0; j < c; ++j) out.values[j][n] = std::move(byNode[n][j]);
  }
  return out;
}

GridExtension spanningTreeExtend(const Connection& nabla, const Connection& nablaStar, const Eigen::VectorXd& x0,
                                 const Eigen::MatrixXd& phi0, const SampleGrid& grid, int stepsPerEdge) {
  requireShape(phi0, nabla.rank);
  const int root = grid.findNode(x0);
  if (root < 0) throw TransportError("base point is not a grid node");
  const HomFlow flow(nabla, nablaStar);
  BatchExtension b = extendBatch(flow, grid, root, {phi0}, stepsPerEdge);
  GridExtension g;
  g.baseNode = root;
  g.values = std::move(b.values[0]);
  g.pathIndependenceResidual = linalg::maxAbs(b.discrepancy);
  return g;
}

Stencil transportStencil(const HomFlow& flow, const SampleGrid& grid, const std::vector<Eigen::MatrixXd>& field,
                         int node, int axis, double delta, int steps) {
  const int m = grid.dim();
  const int other = m > 1 ? (axis + 1) % m : axis;
  auto idx = grid.multiIndex(node);
  auto nb = idx;
  nb[other] += (idx[other] + 1 < grid.perAxis()) ? 1 : -1;
  const int source = grid.node(nb);
  const Eigen::VectorXd y = grid.point(source);
  const Eigen::VectorXd x = grid.point(node);

  Stencil s;
  static constexpr int offsets[4] = {-2, -1, 1, 2};
  for (int k = 0; k < 4; ++k) {
    Eigen::VectorXd p = x;
    p(axis) += offsets[k] * delta;
    std::vector<Eigen::MatrixXd> frames{field[source]};
    flow.segment(y, p, steps, frames);
    s.points[k] = p;
    s.values[k] = frames[0];
  }
  return s;
}

Eigen::MatrixXd centralDifference(const std::array<Eigen::MatrixXd, 4>& v, double delta) {
  return (v[0] - 8.0 * v[1] + 8.0 * v[2] - v[3]) / (12.0 * delta);
}

}  // namespace metron
