#pragma once

#include <string>
#include <vector>

#include "eirm/fit.hpp"

namespace eirm {

struct TwoStepScores {
  std::vector<std::string> person_ids;  // canonical (id-sorted) order
  std::vector<double> scores;           // ability estimate per person
  std::vector<double> treatment;        // aligned with scores
  FitResult measurement_fit;
};

// Stage one of the two-step workflow: a measurement-only model (person and
// item random intercepts, no treatment terms) whose person modes become the
// outcome scores for a follow-up regression.
TwoStepScores rasch_score_twostep(const ResponseTable& table,
                                  const FitOptions& opts = {});

struct OlsEffect {
  double effect = 0.0;       // treatment minus control mean
  double se = 0.0;           // homoskedastic two-group standard error
  double standardized = 0.0; // effect / pooled within-group sd (0 when degenerate)
  double pooled_sd = 0.0;
  bool zero_residual_variance = false;
};

// Stage two: difference in mean scores between the groups. Throws when either
// group is empty or the scores have no variance at all.
OlsEffect ols_effect(const std::vector<double>& scores,
                     const std::vector<double>& treatment);

}  // namespace eirm
