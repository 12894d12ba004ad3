#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "eirm/table.hpp"

namespace eirm::testing {

// Absolute-tolerance comparison; doctest's Approx is relative only.
#define CHECK_NEAR(a, b, tol) CHECK(std::abs((a) - (b)) <= (tol))

struct Row {
  std::string person;
  std::string item;
  double score;
  double treatment;
};

// Builds a table from explicit rows; covariate/subscale attach by person/item
// id so call sites stay readable.
inline ResponseTable make_table(
    const std::vector<Row>& rows,
    const std::vector<std::pair<std::string, double>>& covariate = {},
    const std::vector<std::pair<std::string, double>>& subscale = {}) {
  ResponseTable::Builder b;
  auto person_of = [&](const std::string& id) {
    for (std::size_t j = 0; j < b.person_ids.size(); ++j) {
      if (b.person_ids[j] == id) return static_cast<int>(j);
    }
    b.person_ids.push_back(id);
    b.treatment.push_back(0.0);
    return static_cast<int>(b.person_ids.size()) - 1;
  };
  auto item_of = [&](const std::string& id) {
    for (std::size_t i = 0; i < b.item_ids.size(); ++i) {
      if (b.item_ids[i] == id) return static_cast<int>(i);
    }
    b.item_ids.push_back(id);
    return static_cast<int>(b.item_ids.size()) - 1;
  };
  for (const auto& r : rows) {
    const int j = person_of(r.person);
    const int i = item_of(r.item);
    b.treatment[static_cast<std::size_t>(j)] = r.treatment;
    b.row_person.push_back(j);
    b.row_item.push_back(i);
    b.row_score.push_back(r.score);
  }
  if (!covariate.empty()) {
    std::vector<double> x(b.person_ids.size(), 0.0);
    for (const auto& [id, v] : covariate) {
      x[static_cast<std::size_t>(person_of(id))] = v;
    }
    b.covariate = x;
  }
  if (!subscale.empty()) {
    std::vector<double> s(b.item_ids.size(), 0.0);
    for (const auto& [id, v] : subscale) {
      s[static_cast<std::size_t>(item_of(id))] = v;
    }
    b.subscale = s;
  }
  return b.build();
}

inline ResponseTable parse_csv(const std::string& text,
                               const ParseSchema& schema = {},
                               const ParseOptions& opts = {}) {
  std::istringstream in(text);
  return parse_response_table(in, schema, opts);
}

}  // namespace eirm::testing
