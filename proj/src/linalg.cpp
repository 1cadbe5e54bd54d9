#include "metron/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace metron::linalg {

int numericalRank(const Eigen::MatrixXd& a, double relCutoff, double floor) {
  if (a.size() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& s = svd.singularValues();
  if (s.size() == 0) return 0;
  const double cut = relCutoff * std::max(floor, s(0));
  int rank = 0;
  for (int i = 0; i < s.size(); ++i) {
    if (s(i) > cut) ++rank;
  }
  return rank;
}

Eigen::MatrixXd nullSpace(const Eigen::MatrixXd& a, double cutoff, int cols) {
  const int n = cols >= 0 ? cols : static_cast<int>(a.cols());
  if (a.rows() == 0 || a.cols() == 0) return Eigen::MatrixXd::Identity(n, n);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  const double cut = cutoff * std::max(1.0, s.size() ? s(0) : 0.0);
  int rank = 0;
  for (int i = 0; i < s.size(); ++i) {
    if (s(i) > cut) ++rank;
  }
  return svd.matrixV().rightCols(n - rank);
}

Eigen::MatrixXd canonicalBasis(const Eigen::MatrixXd& basis, double tol) {
  const int n = static_cast<int>(basis.rows());
  const int k = static_cast<int>(basis.cols());
  if (k == 0) return Eigen::MatrixXd(n, 0);
  // rows of `r` span the subspace; reduce with partial pivoting
  Eigen::MatrixXd r = basis.transpose();
  int row = 0;
  std::vector<int> pivots;
  for (int col = 0; col < n && row < k; ++col) {
    int best = row;
    for (int i = row + 1; i < k; ++i) {
      if (std::abs(r(i, col)) > std::abs(r(best, col))) best = i;
    }
    if (std::abs(r(best, col)) <= tol) continue;
    r.row(row).swap(r.row(best));
    r.row(row) /= r(row, col);
    for (int i = 0; i < k; ++i) {
      if (i != row) r.row(i) -= r(i, col) * r.row(row);
    }
    pivots.push_back(col);
    ++row;
  }
  Eigen::MatrixXd q(n, row);
  for (int i = 0; i < row; ++i) {
    Eigen::VectorXd v = r.row(i).transpose();
    for (int j = 0; j < i; ++j) v -= q.col(j).dot(v) * q.col(j);
    q.col(i) = v.normalized();
  }
  return q;
}

Eigen::VectorXd vec(const Eigen::MatrixXd& m) {
  Eigen::VectorXd v(m.size());
  for (int a = 0; a < m.rows(); ++a) {
    for (int b = 0; b < m.cols(); ++b) v(a * m.cols() + b) = m(a, b);
  }
  return v;
}

Eigen::MatrixXd unvec(const Eigen::VectorXd& v, int r) {
  Eigen::MatrixXd m(r, r);
  for (int a = 0; a < r; ++a) {
    for (int b = 0; b < r; ++b) m(a, b) = v(a * r + b);
  }
  return m;
}

Eigen::MatrixXd symmetricBasis(int r) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(r * r, r * (r + 1) / 2);
  int c = 0;
  for (int a = 0; a < r; ++a) {
    for (int b = a; b < r; ++b) {
      if (a == b) {
        out(a * r + a, c) = 1.0;
      } else {
        out(a * r + b, c) = out(b * r + a, c) = 1.0 / std::sqrt(2.0);
      }
      ++c;
    }
  }
  return out;
}

Eigen::MatrixXd antisymmetricBasis(int r) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(r * r, r * (r - 1) / 2);
  int c = 0;
  for (int a = 0; a < r; ++a) {
    for (int b = a + 1; b < r; ++b) {
      out(a * r + b, c) = 1.0 / std::sqrt(2.0);
      out(b * r + a, c) = -1.0 / std::sqrt(2.0);
      ++c;
    }
  }
  return out;
}

double maxAbs(const Eigen::MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace metron::linalg
