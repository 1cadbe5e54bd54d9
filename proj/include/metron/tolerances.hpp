#ifndef METRON_TOLERANCES_HPP
#define METRON_TOLERANCES_HPP

namespace metron {

struct Tolerances {
  double kernel = 1e-8;       // relative singular-value cutoff for constraint kernels
  double transport = 1e-7;    // path-independence residual on the extension grid
  double rank = 1e-8;         // relative singular-value cutoff for ranks of forms/endomorphisms
  double regularDet = 1e-8;   // |det G| floor for regular metrics and gauge transforms
  double regularCond = 1e8;   // condition-number ceiling for regular metrics
  int maxOrder = 3;           // prolongation depth
  int stepsPerEdge = 64;      // RK4 steps per grid edge during extension
};

}  // namespace metron

#endif  // METRON_TOLERANCES_HPP
