#ifndef METRON_TESTS_QUADRATURE_HPP
#define METRON_TESTS_QUADRATURE_HPP

#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "metron/stat_models.hpp"

namespace metron::testing {

// One quadrature node: probability weight, score d_i l and Hessian d_i d_j l.
struct Sample {
  double w;
  Eigen::VectorXd score;
  Eigen::MatrixXd hess;
};

// Golub-Welsch nodes and weights of a probability measure from its Jacobi matrix.
inline std::vector<std::pair<double, double>> golubWelsch(const Eigen::VectorXd& diag, const Eigen::VectorXd& off) {
  const int n = static_cast<int>(diag.size());
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  J.diagonal() = diag;
  for (int k = 0; k + 1 < n; ++k) J(k, k + 1) = J(k + 1, k) = off(k);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  std::vector<std::pair<double, double>> out;
  for (int k = 0; k < n; ++k) out.emplace_back(es.eigenvalues()(k), std::pow(es.eigenvectors()(0, k), 2));
  return out;
}

inline std::vector<Sample> samples(FamilyName name, const Eigen::VectorXd& x) {
  std::vector<Sample> out;
  auto push = [&](double w, std::vector<double> s, std::vector<double> h) {
    const int m = static_cast<int>(s.size());
    out.push_back({w, Eigen::Map<Eigen::VectorXd>(s.data(), m), Eigen::Map<Eigen::MatrixXd>(h.data(), m, m)});
  };
  switch (name) {
    case FamilyName::Gaussian1d: {
      const int n = 12;
      Eigen::VectorXd off(n - 1);
      for (int k = 0; k < n - 1; ++k) off(k) = std::sqrt(k + 1.0);
      const double sg = x(1);
      for (auto [z, w] : golubWelsch(Eigen::VectorXd::Zero(n), off)) {
        push(w, {z / sg, (z * z - 1) / sg},
             {-1 / (sg * sg), -2 * z / (sg * sg), -2 * z / (sg * sg), (1 - 3 * z * z) / (sg * sg)});
      }
      break;
    }
    case FamilyName::Bernoulli: {
      const double p = x(0);
      push(p, {1 / p}, {-1 / (p * p)});
      push(1 - p, {-1 / (1 - p)}, {-1 / ((1 - p) * (1 - p))});
      break;
    }
    case FamilyName::Poisson: {
      const double l = x(0);
      double w = std::exp(-l);
      for (int k = 0; k < 120; ++k) {
        push(w, {k / l - 1}, {-k / (l * l)});
        w *= l / (k + 1);
      }
      break;
    }
    case FamilyName::Exponential: {
      const int n = 8;
      Eigen::VectorXd diag(n), off(n - 1);
      for (int k = 0; k < n; ++k) diag(k) = 2 * k + 1;
      for (int k = 0; k < n - 1; ++k) off(k) = k + 1;
      const double l = x(0);
      for (auto [t, w] : golubWelsch(diag, off)) push(w, {1 / l - t / l}, {-1 / (l * l)});
      break;
    }
  }
  return out;
}

inline Eigen::MatrixXd fisherOracle(FamilyName name, const Eigen::VectorXd& x) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(x.size(), x.size());
  for (const auto& s : samples(name, x)) g += s.w * s.score * s.score.transpose();
  return g;
}

inline double tensorOracle(FamilyName name, const Eigen::VectorXd& x, int i, int j, int k) {
  double t = 0;
  for (const auto& s : samples(name, x)) t += s.w * s.score(i) * s.score(j) * s.score(k);
  return t;
}

// Christoffel symbols of the first kind E[(d_i d_j l + (1 - alpha)/2 d_i l d_j l) d_k l], as (j, k) for fixed i.
inline Eigen::MatrixXd firstKindOracle(FamilyName name, const Eigen::VectorXd& x, double alpha, int i) {
  const int m = static_cast<int>(x.size());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m, m);
  for (const auto& s : samples(name, x))
    for (int j = 0; j < m; ++j)
      for (int k = 0; k < m; ++k)
        out(j, k) += s.w * (s.hess(i, j) + 0.5 * (1 - alpha) * s.score(i) * s.score(j)) * s.score(k);
  return out;
}

}  // namespace metron::testing

#endif  // METRON_TESTS_QUADRATURE_HPP
