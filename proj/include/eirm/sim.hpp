#pragma once

#include <cstdint>
#include <vector>

#include "eirm/table.hpp"

namespace eirm {

// Generating model: logit Pr(Y = 1) = beta0 + beta1*T + beta2*X
//   + beta3*T*X + eps_person + b_item + zeta_item*T,
// with eps ~ N(0, sigma_theta^2), (b, zeta) bivariate normal with sds
// (sigma_b, sigma_zeta) and correlation rho, X ~ N(0, 1), and treatment
// assigned by complete randomization: exactly floor(n_persons / 2) persons
// treated, the remainder control.
struct SimConfig {
  int n_persons = 0;
  int n_items = 0;
  double beta0 = 0.0;
  double beta1 = 0.0;
  double beta2 = 0.0;
  double beta3 = 0.0;
  double sigma_b = 1.0;
  double sigma_zeta = 0.0;
  double rho = 0.0;
  double sigma_theta = 1.0;
  std::uint64_t seed = 1;

  void validate() const;  // throws ConfigError
};

// Realized draws, in canonical (id-sorted) order so they line up with fit
// output; oracle comparisons condition on these, not on the population values.
struct TrueParams {
  SimConfig config;
  std::vector<double> person_treatment;
  std::vector<double> person_x;
  std::vector<double> person_eps;  // ability residual, before covariate terms
  std::vector<double> item_b;
  std::vector<double> item_zeta;
};

struct SimResult {
  ResponseTable table;
  TrueParams truth;
};

// Deterministic per seed, bit for bit. Ids are zero padded (p000, i00, ...)
// so lexical order equals draw order. The draw sequence is fixed: treatment
// permutation, person covariates, person residuals, item pairs (both normals
// are consumed even when sigma_zeta is zero, so the item bank is unchanged
// when only the slope sd differs), then responses person-major.
SimResult simulate_dataset(const SimConfig& cfg);

// Expected sum score at each covariate value for one treatment group,
// integrating the person residual by Gauss-Hermite quadrature over the
// realized items. n_nodes defaults high enough that doubling it moves the
// curve by well under 1e-6.
std::vector<double> expected_sumscore_curve(const TrueParams& truth,
                                            const std::vector<double>& x_grid,
                                            int treatment_group,
                                            int n_nodes = 21);

// A pair of scenarios whose expected sum-score curves nearly coincide even
// though the treatment effect is person-driven in one (beta3 != 0, no item
// slopes) and item-driven in the other (beta3 = 0, slopes proportional to
// difficulty). The person-side coefficients are calibrated by least squares
// against the item-dependent curve on x_grid.
struct CalibratedPair {
  SimConfig person_dependent;
  SimConfig item_dependent;
  double max_gap = 0.0;  // largest pointwise curve difference after calibration
};

CalibratedPair calibrate_confound_pair(const SimConfig& item_dependent,
                                       const std::vector<double>& x_grid,
                                       int n_nodes = 21);

}  // namespace eirm
