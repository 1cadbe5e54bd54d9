#ifndef METRON_LINALG_HPP
#define METRON_LINALG_HPP

#include <Eigen/Dense>

namespace metron::linalg {

/// Singular values below relCutoff * max(floor, largest) count as zero.
int numericalRank(const Eigen::MatrixXd& a, double relCutoff, double floor = 0.0);

/// Orthonormal basis (columns) of the numerical null space of `a`.
/// A singular value is treated as zero when it is <= cutoff * max(1, largest).
Eigen::MatrixXd nullSpace(const Eigen::MatrixXd& a, double cutoff, int cols = -1);

/// Reduced row echelon form of the column span of `basis`, re-orthonormalised
/// in pivot order. Gives a canonical, sign-stable basis for a subspace.
Eigen::MatrixXd canonicalBasis(const Eigen::MatrixXd& basis, double tol = 1e-10);

/// Row-major vectorisation of an r x r matrix and its inverse.
Eigen::VectorXd vec(const Eigen::MatrixXd& m);
Eigen::MatrixXd unvec(const Eigen::VectorXd& v, int r);

/// Basis (columns, orthonormal) of symmetric or antisymmetric r x r matrices in vec form.
Eigen::MatrixXd symmetricBasis(int r);
Eigen::MatrixXd antisymmetricBasis(int r);

double maxAbs(const Eigen::MatrixXd& m);

}  // namespace metron::linalg

#endif  // METRON_LINALG_HPP
