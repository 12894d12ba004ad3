#pragma once

#include <vector>

namespace eirm {

// Gauss-Hermite rule for the weight e^{-t^2}: sum_k w_k f(t_k) approximates
// the integral of f(t) e^{-t^2} dt. Weights sum to sqrt(pi).
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;
};

GaussHermite gauss_hermite(int n);

// E[f(m + s*Z)] for Z standard normal, via the rule above.
template <typename F>
double gauss_hermite_normal_mean(const GaussHermite& gh, double m, double s, F&& f) {
  constexpr double inv_sqrt_pi = 0.5641895835477562869480794515607726;
  double acc = 0.0;
  for (std::size_t k = 0; k < gh.nodes.size(); ++k) {
    acc += gh.weights[k] * f(m + s * 1.4142135623730950488016887242097 * gh.nodes[k]);
  }
  return acc * inv_sqrt_pi;
}

}  // namespace eirm
