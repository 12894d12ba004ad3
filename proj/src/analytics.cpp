#include "eirm/analytics.hpp"

#include <cmath>
#include <limits>

#include "eirm/errors.hpp"

namespace eirm {

namespace {

// Deflation constant for marginalizing a logit coefficient over item
// difficulties; see sumscore_slope.
constexpr double kDifficultyDeflation = 0.346;

void require_positive_sd(double sd, const char* what) {
  if (!(sd > 0.0) || !std::isfinite(sd)) {
    throw DegenerateError(std::string(what) + " must be positive and finite");
  }
}

}  // namespace

StdEffects standardize_effects(const FitResult& fr, double sigma_theta_ref) {
  require_positive_sd(sigma_theta_ref, "reference person sd");
  StdEffects out;
  out.sigma_theta_ref = sigma_theta_ref;
  out.effects.reserve(fr.beta_names.size());
  for (std::size_t k = 0; k < fr.beta_names.size(); ++k) {
    StdEffect e;
    e.name = fr.beta_names[k];
    e.estimate = fr.beta_hat[static_cast<Eigen::Index>(k)] / sigma_theta_ref;
    e.se = std::sqrt(fr.beta_cov(static_cast<Eigen::Index>(k),
                                 static_cast<Eigen::Index>(k))) /
           sigma_theta_ref;
    out.effects.push_back(std::move(e));
  }
  out.sigma_zeta_std = fr.sigma_zeta_hat / sigma_theta_ref;
  out.eb_item_b_std.reserve(static_cast<std::size_t>(fr.eb_item_b.size()));
  for (Eigen::Index i = 0; i < fr.eb_item_b.size(); ++i)
    out.eb_item_b_std.push_back(fr.eb_item_b[i] / sigma_theta_ref);
  out.eb_item_zeta_std.reserve(static_cast<std::size_t>(fr.eb_item_zeta.size()));
  for (Eigen::Index i = 0; i < fr.eb_item_zeta.size(); ++i)
    out.eb_item_zeta_std.push_back(fr.eb_item_zeta[i] / sigma_theta_ref);
  return out;
}

double se_inflation(double var_ri, double sigma_zeta, int n_items) {
  if (!(var_ri >= 0.0)) throw ValueError("se_inflation: variance must be >= 0");
  if (!(sigma_zeta >= 0.0))
    throw ValueError("se_inflation: sigma_zeta must be >= 0");
  if (n_items < 1) throw ValueError("se_inflation: need at least one item");
  return std::sqrt(var_ri +
                   sigma_zeta * sigma_zeta / static_cast<double>(n_items));
}

GammaResult sensitivity_gamma(double beta1, double var_ri, int n_items,
                              double z) {
  if (!(var_ri >= 0.0))
    throw ValueError("sensitivity_gamma: variance must be >= 0");
  if (n_items < 1) throw ValueError("sensitivity_gamma: need at least one item");
  if (!(z > 0.0)) throw ValueError("sensitivity_gamma: z must be positive");
  GammaResult out;
  const double ratio = beta1 / z;
  const double inner = ratio * ratio - var_ri;
  if (inner <= 0.0) {
    out.note = "effect already insignificant";
    return out;
  }
  out.value = std::sqrt(static_cast<double>(n_items) * inner);
  return out;
}

Interval prediction_interval(double beta1, double var_beta1, double sigma_zeta,
                             double z) {
  if (!(var_beta1 >= 0.0))
    throw ValueError("prediction_interval: variance must be >= 0");
  if (!(sigma_zeta >= 0.0))
    throw ValueError("prediction_interval: sigma_zeta must be >= 0");
  const double half = z * std::sqrt(var_beta1 + sigma_zeta * sigma_zeta);
  return {beta1 - half, beta1 + half};
}

Interval prediction_interval_decomposed(double beta1, double var_ri,
                                        double sigma_zeta, int n_items,
                                        double z) {
  if (n_items < 1)
    throw ValueError("prediction_interval: need at least one item");
  if (!(var_ri >= 0.0))
    throw ValueError("prediction_interval: variance must be >= 0");
  const double var_full =
      var_ri + sigma_zeta * sigma_zeta / static_cast<double>(n_items);
  return prediction_interval(beta1, var_full, sigma_zeta, z);
}

double treatment_group_item_sd(double sigma_b, double sigma_zeta, double rho) {
  if (!(sigma_b >= 0.0) || !(sigma_zeta >= 0.0)) {
    throw ValueError("treatment_group_item_sd: sds must be >= 0");
  }
  if (!(rho >= -1.0 && rho <= 1.0)) {
    throw ValueError("treatment_group_item_sd: rho must be in [-1, 1]");
  }
  const double radicand = sigma_b * sigma_b + sigma_zeta * sigma_zeta +
                          2.0 * rho * sigma_b * sigma_zeta;
  return std::sqrt(radicand > 0.0 ? radicand : 0.0);
}

double sumscore_slope(double beta_logit, double sigma_b) {
  if (!(sigma_b >= 0.0)) throw ValueError("sumscore_slope: sigma_b must be >= 0");
  return beta_logit / std::sqrt(kDifficultyDeflation * sigma_b * sigma_b + 1.0);
}

double confound_gap(double beta_logit, double sigma_b, double sigma_zeta,
                    double rho) {
  const double star = treatment_group_item_sd(sigma_b, sigma_zeta, rho);
  return sumscore_slope(beta_logit, star) - sumscore_slope(beta_logit, sigma_b);
}

double attenuation_correct(double std_effect, double reliability) {
  if (!(reliability > 0.0) || !(reliability <= 1.0)) {
    throw ValueError("attenuation_correct: reliability must be in (0, 1]");
  }
  return std_effect / std::sqrt(reliability);
}

InteractionComparison interaction_comparison(const FitResult& plain,
                                             const FitResult& with_slopes) {
  if (!plain.spec.has_term(FixedTerm::TreatmentXCovariate) ||
      !with_slopes.spec.has_term(FixedTerm::TreatmentXCovariate)) {
    throw ModelSpecError(
        "interaction_comparison: both fits need the treatment-by-covariate "
        "term");
  }
  if (plain.spec.item_slope()) {
    throw ModelSpecError(
        "interaction_comparison: first fit must not carry item slopes");
  }
  if (!with_slopes.spec.item_slope()) {
    throw ModelSpecError(
        "interaction_comparison: second fit must carry item slopes");
  }
  if (plain.table_hash != with_slopes.table_hash) {
    throw ConsistencyError(
        "interaction_comparison: fits come from different data");
  }

  InteractionComparison out;
  out.beta3_plain = plain.beta(FixedTerm::TreatmentXCovariate);
  out.se_plain = plain.beta_se(FixedTerm::TreatmentXCovariate);
  out.beta3_ilhte = with_slopes.beta(FixedTerm::TreatmentXCovariate);
  out.se_ilhte = with_slopes.beta_se(FixedTerm::TreatmentXCovariate);
  out.difference = out.beta3_plain - out.beta3_ilhte;
  out.sigma_b = with_slopes.sigma_b_hat;
  out.rho = with_slopes.rho_hat;
  out.sigma_b_star = treatment_group_item_sd(
      with_slopes.sigma_b_hat, with_slopes.sigma_zeta_hat, with_slopes.rho_hat);
  out.sd_ratio = out.sigma_b > 0.0
                     ? out.sigma_b_star / out.sigma_b
                     : std::numeric_limits<double>::infinity();
  return out;
}

AnalysisReport build_analysis(const AnalysisInputs& in) {
  if (in.reference == nullptr || in.intercepts == nullptr ||
      in.ilhte == nullptr) {
    throw ValueError("build_analysis: all three fits are required");
  }
  const FitResult& ref = *in.reference;
  const FitResult& ri = *in.intercepts;
  const FitResult& il = *in.ilhte;
  if (ref.table_hash != ri.table_hash || ri.table_hash != il.table_hash) {
    throw ConsistencyError("build_analysis: fits come from different data");
  }
  if (!ri.spec.has_term(FixedTerm::Treatment) ||
      !il.spec.has_term(FixedTerm::Treatment)) {
    throw ModelSpecError("build_analysis: fits need a treatment term");
  }
  if (il.spec.item_structure != ItemStructure::RandomInterceptTreatmentSlope) {
    throw ModelSpecError("build_analysis: third fit needs item slopes");
  }
  if (ri.spec.item_structure != ItemStructure::RandomIntercept) {
    throw ModelSpecError(
        "build_analysis: second fit must use plain item intercepts");
  }

  AnalysisReport out;
  out.sigma_theta_ref = ref.sigma_theta_hat;
  StdEffects std_il = standardize_effects(il, out.sigma_theta_ref);
  out.std_effects = std::move(std_il.effects);
  out.sigma_zeta_std = std_il.sigma_zeta_std;

  const double s = out.sigma_theta_ref;
  const double se_ri = ri.beta_se(FixedTerm::Treatment) / s;
  const double se_il = il.beta_se(FixedTerm::Treatment) / s;
  out.se_ratio_model = se_il / se_ri;
  out.se_ratio_formula =
      se_inflation(se_ri * se_ri, out.sigma_zeta_std, il.n_items) / se_ri;

  const double beta1_std = il.beta(FixedTerm::Treatment) / s;
  out.gamma =
      sensitivity_gamma(beta1_std, se_ri * se_ri, il.n_items, in.z);
  out.pi = prediction_interval(beta1_std, se_il * se_il, out.sigma_zeta_std,
                               in.z);
  out.sigma_b_star = treatment_group_item_sd(il.sigma_b_hat, il.sigma_zeta_hat,
                                             il.rho_hat);
  out.sd_ratio = il.sigma_b_hat > 0.0
                     ? out.sigma_b_star / il.sigma_b_hat
                     : std::numeric_limits<double>::infinity();
  if (in.twostep_std_effect && in.reliability) {
    out.corrected_twostep_effect =
        attenuation_correct(*in.twostep_std_effect, *in.reliability);
  }
  return out;
}

}  // namespace eirm
