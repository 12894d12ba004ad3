#pragma once

#include <optional>
#include <string>
#include <vector>

#include "eirm/fit.hpp"

namespace eirm {

// Default critical value for the interval formulas. Callers can override it,
// but every default path uses exactly 1.96.
inline constexpr double kDefaultZ = 1.96;

// ---- standardization -------------------------------------------------------

struct StdEffect {
  std::string name;
  double estimate = 0.0;
  double se = 0.0;
};

struct StdEffects {
  double sigma_theta_ref = 0.0;        // divisor used throughout
  std::vector<StdEffect> effects;      // fixed effects on the reference scale
  double sigma_zeta_std = 0.0;
  std::vector<double> eb_item_b_std;   // canonical item order
  std::vector<double> eb_item_zeta_std;
};

// Rescales a fit's fixed effects, their standard errors, the item slope sd and
// the empirical Bayes item effects by a reference person sd (typically the
// person sd from a treatment-only fit of the same data).
StdEffects standardize_effects(const FitResult& fr, double sigma_theta_ref);

// ---- interval diagnostics --------------------------------------------------

// Standard error of the average effect once item-by-treatment variation with
// sd sigma_zeta is acknowledged: sqrt(V + sigma_zeta^2 / n_items), where V is
// the sampling variance from the random-intercepts fit.
double se_inflation(double var_ri, double sigma_zeta, int n_items);

struct GammaResult {
  std::optional<double> value;  // empty when the threshold does not exist
  std::string note;             // reason when empty
};

// Largest item-slope sd under which the average effect would still clear the
// z criterion: sqrt(n_items * ((beta1/z)^2 - V)). When beta1 is already
// insignificant at sigma_zeta = 0 there is nothing to cross, and the result
// carries a note instead of a value.
GammaResult sensitivity_gamma(double beta1, double var_ri, int n_items,
                              double z = kDefaultZ);

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

// Range covering the central share of item-level effects:
// beta1 +/- z * sqrt(var_beta1 + sigma_zeta^2).
Interval prediction_interval(double beta1, double var_beta1, double sigma_zeta,
                             double z = kDefaultZ);

// Same interval with var_beta1 assembled from its random-intercepts part and
// the sigma_zeta^2 / n_items inflation term.
Interval prediction_interval_decomposed(double beta1, double var_ri,
                                        double sigma_zeta, int n_items,
                                        double z = kDefaultZ);

// ---- sum-score confounding -------------------------------------------------

// Person-side sd of item difficulty as experienced by the treatment group:
// sqrt(sigma_b^2 + sigma_zeta^2 + 2 rho sigma_b sigma_zeta).
double treatment_group_item_sd(double sigma_b, double sigma_zeta, double rho);

// Expected slope of a sum-score regression implied by a logit-scale
// coefficient when item difficulties have sd sigma_b. The 0.346 deflation
// constant comes from the probit-logit variance matching underlying the
// marginalization and is fixed on purpose.
double sumscore_slope(double beta_logit, double sigma_b);

// How far the sum-score slope moves when correlated item slopes stretch the
// difficulty sd from sigma_b to the treatment-group value.
double confound_gap(double beta_logit, double sigma_b, double sigma_zeta,
                    double rho);

// Measurement-error attenuation fix for a standardized two-step effect:
// divide by the square root of the score reliability.
double attenuation_correct(double std_effect, double reliability);

// ---- interaction comparison ------------------------------------------------

struct InteractionComparison {
  double beta3_plain = 0.0;   // interaction estimate, no item slopes
  double se_plain = 0.0;
  double beta3_ilhte = 0.0;   // interaction estimate with item slopes
  double se_ilhte = 0.0;
  double difference = 0.0;    // plain minus ilhte
  double sigma_b = 0.0;       // from the item-slope fit
  double sigma_b_star = 0.0;
  double sd_ratio = 0.0;      // sigma_b_star / sigma_b
  double rho = 0.0;
};

// Side-by-side view of the treatment-by-covariate interaction from a fit
// without item slopes and one with them, on the same data. Throws when the
// fits disagree about the data or lack the required terms.
InteractionComparison interaction_comparison(const FitResult& plain,
                                             const FitResult& with_slopes);

// ---- combined report --------------------------------------------------------

struct AnalysisInputs {
  const FitResult* reference = nullptr;   // treatment-only fit, sets the scale
  const FitResult* intercepts = nullptr;  // random-intercepts fit
  const FitResult* ilhte = nullptr;       // item-slope fit
  std::optional<double> twostep_std_effect;
  std::optional<double> reliability;      // e.g. Cronbach's alpha
  double z = kDefaultZ;
};

struct AnalysisReport {
  double sigma_theta_ref = 0.0;
  std::vector<StdEffect> std_effects;  // from the item-slope fit
  double sigma_zeta_std = 0.0;
  double se_ratio_model = 0.0;    // ilhte treatment SE over intercepts SE
  double se_ratio_formula = 0.0;  // same ratio from the inflation formula
  GammaResult gamma;              // on the standardized scale
  Interval pi;                    // standardized prediction interval
  double sigma_b_star = 0.0;      // logit scale
  double sd_ratio = 0.0;
  std::optional<double> corrected_twostep_effect;
};

// Assembles the one-row summary the command line tools write out. All three
// fits must come from the same data.
AnalysisReport build_analysis(const AnalysisInputs& in);

}  // namespace eirm
