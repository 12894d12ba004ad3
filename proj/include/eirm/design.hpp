#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "eirm/model.hpp"
#include "eirm/table.hpp"

namespace eirm {

// Fixed-effect matrix, response, and the index structure of the sparse
// random-effect matrix, in a canonical internal order: persons and items are
// ranked by id, rows sorted by (person, item). The canonical order makes
// results independent of the order rows or ids appear in the input.
struct Design {
  Eigen::MatrixXd X;               // n_rows x p
  Eigen::VectorXd y;
  std::vector<int> row_person;     // dense person index per row
  std::vector<int> row_item;       // dense item index per row
  std::vector<double> row_treat;
  std::vector<int> person_ptr;     // rows of person j are [person_ptr[j], person_ptr[j+1])

  int n_persons = 0;
  int n_items = 0;
  ItemStructure item_structure = ItemStructure::RandomIntercept;
  bool correlation_free = true;

  std::vector<std::string> colnames;
  std::vector<std::string> person_ids;  // canonical (id-sorted) order
  std::vector<std::string> item_ids;
  std::vector<double> person_treatment;
  std::uint64_t table_hash = 0;

  // Items with all-0 or all-1 responses within a treatment group.
  std::vector<int> separated_items;
  std::vector<std::string> separation_notes;

  int p() const { return static_cast<int>(X.cols()); }
  int n_rows() const { return static_cast<int>(y.size()); }

  // Random-effect coefficient layout: person block first, then per item
  // either one intercept column or an (intercept, slope) pair.
  int item_dim() const {
    switch (item_structure) {
      case ItemStructure::RandomIntercept: return 1;
      case ItemStructure::RandomInterceptTreatmentSlope: return 2;
      case ItemStructure::FixedOffsets: return 0;
    }
    return 0;
  }
  int q_items() const { return item_dim() * n_items; }
  int z_cols() const { return n_persons + q_items(); }

  // The nonzero entries of row r of the indicator matrix Z.
  std::vector<std::pair<int, double>> z_row(int r) const;
};

Design build_design(const ResponseTable& table, const ModelSpec& spec);

}  // namespace eirm
