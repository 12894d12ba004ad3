#include "eirm/quadrature.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "eirm/errors.hpp"

namespace eirm {

GaussHermite gauss_hermite(int n) {
  if (n < 1) throw ConfigError("quadrature rule needs at least 1 node");
  // Golub-Welsch: nodes are eigenvalues of the Jacobi matrix for the Hermite
  // recurrence, weights come from the first eigenvector components.
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double off = std::sqrt(k / 2.0);
    J(k, k - 1) = off;
    J(k - 1, k) = off;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  if (es.info() != Eigen::Success) throw NumericError("Hermite eigenproblem failed");
  const double sqrt_pi = std::sqrt(M_PI);
  GaussHermite gh;
  gh.nodes.resize(static_cast<std::size_t>(n));
  gh.weights.resize(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    gh.nodes[static_cast<std::size_t>(k)] = es.eigenvalues()(k);
    const double v0 = es.eigenvectors()(0, k);
    gh.weights[static_cast<std::size_t>(k)] = sqrt_pi * v0 * v0;
  }
  return gh;
}

}  // namespace eirm
