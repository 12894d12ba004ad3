#pragma once

#include <string>
#include <vector>

namespace eirm {

enum class FixedTerm {
  Intercept,
  Treatment,
  Covariate,
  TreatmentXCovariate,
  Subscale,
  TreatmentXSubscale,
};

enum class ItemStructure {
  RandomIntercept,
  RandomInterceptTreatmentSlope,
  // Item effects absorbed into fixed indicator columns instead of random
  // effects. Outside the five numbered specifications; used when the item set
  // is considered fixed and by the quadrature cross-checks in the test suite.
  FixedOffsets,
};

struct ModelSpec {
  std::vector<FixedTerm> fixed_terms = {FixedTerm::Intercept};
  std::vector<std::string> extra_terms;  // person-level columns referenced by name
  ItemStructure item_structure = ItemStructure::RandomIntercept;
  bool correlation_free = true;  // true: intercept-slope correlation fixed at 0

  // The five numbered specifications:
  //   1: 1 + T
  //   2: 1 + T + X
  //   3: 1 + T + X, item treatment slope (correlated)
  //   4: 1 + T + X + T*X
  //   5: 1 + T + X + T*X, item treatment slope (correlated)
  // All carry a person random intercept and an item random intercept.
  static ModelSpec equation(int model);

  ModelSpec with_subscale() const;  // adds subscale + treatment*subscale terms

  bool has_term(FixedTerm t) const;
  bool item_slope() const {
    return item_structure == ItemStructure::RandomInterceptTreatmentSlope;
  }
  std::vector<std::string> term_names() const;  // fixed terms only, in order

  // True when this spec's fixed terms equal other's and this spec's random
  // structure is the random-intercept restriction of other's slope structure.
  bool is_slope_restriction_of(const ModelSpec& other) const;

  void validate() const;
};

}  // namespace eirm
