#include "eirm/score.hpp"

#include <cmath>
#include <limits>

#include "eirm/errors.hpp"

namespace eirm {

TwoStepScores rasch_score_twostep(const ResponseTable& table,
                                  const FitOptions& opts) {
  ModelSpec spec;
  spec.fixed_terms = {FixedTerm::Intercept};
  spec.item_structure = ItemStructure::RandomIntercept;

  TwoStepScores out;
  out.measurement_fit = fit(table, spec, opts);
  out.person_ids = out.measurement_fit.person_ids;
  const Eigen::VectorXd& eb = out.measurement_fit.eb_person;
  out.scores.assign(eb.data(), eb.data() + eb.size());
  out.treatment.reserve(out.person_ids.size());
  for (const auto& pid : out.person_ids) {
    const int j = table.person_index(pid);
    out.treatment.push_back(table.treatment()[static_cast<std::size_t>(j)]);
  }
  return out;
}

OlsEffect ols_effect(const std::vector<double>& scores,
                     const std::vector<double>& treatment) {
  if (scores.size() != treatment.size()) {
    throw ValueError("ols_effect: scores and treatment lengths differ");
  }
  const std::size_t n = scores.size();
  if (n < 2) throw ValueError("ols_effect: need at least two observations");

  double sum1 = 0.0, sum0 = 0.0;
  std::size_t n1 = 0, n0 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (treatment[i] > 0.5) {
      sum1 += scores[i];
      ++n1;
    } else {
      sum0 += scores[i];
      ++n0;
    }
  }
  if (n1 == 0 || n0 == 0) {
    throw ValueError("ols_effect: both treatment groups must be nonempty");
  }

  const double mean1 = sum1 / static_cast<double>(n1);
  const double mean0 = sum0 / static_cast<double>(n0);

  double ss1 = 0.0, ss0 = 0.0, ss_all = 0.0;
  const double mean_all = (sum1 + sum0) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d_all = scores[i] - mean_all;
    ss_all += d_all * d_all;
    if (treatment[i] > 0.5) {
      const double d = scores[i] - mean1;
      ss1 += d * d;
    } else {
      const double d = scores[i] - mean0;
      ss0 += d * d;
    }
  }
  if (!(ss_all > 0.0)) {
    throw DegenerateError("ols_effect: scores have zero variance");
  }

  OlsEffect out;
  out.effect = mean1 - mean0;

  const double rss = ss1 + ss0;  // residual sum of squares of the two-group fit
  if (n > 2 && rss > 0.0) {
    const double s2 = rss / static_cast<double>(n - 2);
    out.se = std::sqrt(s2 * (1.0 / static_cast<double>(n1) +
                             1.0 / static_cast<double>(n0)));
  } else {
    out.se = 0.0;
    out.zero_residual_variance = (rss <= 0.0);
  }
  if (rss <= 0.0) out.zero_residual_variance = true;

  if (n > 2) {
    out.pooled_sd = std::sqrt(rss / static_cast<double>(n - 2));
  }
  out.standardized = out.pooled_sd > 0.0 ? out.effect / out.pooled_sd : 0.0;
  return out;
}

}  // namespace eirm
