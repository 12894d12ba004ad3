#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace eirm {

// Long-format person x item response data. Persons and items keep their
// original (opaque) ids; rows refer to them by dense index. Instances are
// immutable once built; the editing operations below return new tables.
class ResponseTable {
public:
  struct Builder {
    std::vector<std::string> person_ids;
    std::vector<double> treatment;                         // per person, 0/1
    std::optional<std::vector<double>> covariate;          // per person
    std::vector<std::pair<std::string, std::vector<double>>> extras;  // per person

    std::vector<std::string> item_ids;
    std::optional<std::vector<double>> subscale;           // per item

    std::vector<int> row_person;
    std::vector<int> row_item;
    std::vector<double> row_score;

    bool allow_nonbinary = false;

    ResponseTable build() const;
  };

  int n_persons() const { return static_cast<int>(person_ids_.size()); }
  int n_items() const { return static_cast<int>(item_ids_.size()); }
  int n_rows() const { return static_cast<int>(row_person_.size()); }

  const std::vector<std::string>& person_ids() const { return person_ids_; }
  const std::vector<std::string>& item_ids() const { return item_ids_; }
  const std::vector<double>& treatment() const { return treatment_; }
  bool has_covariate() const { return covariate_.has_value(); }
  const std::vector<double>& covariate() const;
  bool has_subscale() const { return subscale_.has_value(); }
  const std::vector<double>& subscale() const;
  const std::vector<std::pair<std::string, std::vector<double>>>& extras() const {
    return extras_;
  }
  const std::vector<double>* extra(const std::string& name) const;

  const std::vector<int>& row_person() const { return row_person_; }
  const std::vector<int>& row_item() const { return row_item_; }
  const std::vector<double>& row_score() const { return row_score_; }

  bool scores_binary() const { return scores_binary_; }
  int n_treated() const;
  int person_index(const std::string& id) const;  // -1 when absent
  int item_index(const std::string& id) const;

  // Fingerprint of the logical content; independent of row order and of
  // the order ids first appear in.
  std::uint64_t content_hash() const;

  Builder to_builder() const;

private:
  ResponseTable() = default;

  std::vector<std::string> person_ids_;
  std::vector<double> treatment_;
  std::optional<std::vector<double>> covariate_;
  std::vector<std::pair<std::string, std::vector<double>>> extras_;
  std::vector<std::string> item_ids_;
  std::optional<std::vector<double>> subscale_;
  std::vector<int> row_person_;
  std::vector<int> row_item_;
  std::vector<double> row_score_;
  bool scores_binary_ = false;
};

struct ParseSchema {
  std::string person = "person_id";
  std::string item = "item_id";
  std::string score = "score";
  std::string treatment = "treatment";
  std::string covariate;                 // empty means column absent
  std::string subscale;                  // empty means column absent
  std::vector<std::string> extras;       // additional person-level columns
};

struct ParseOptions {
  bool allow_nonbinary_scores = false;
  char delimiter = 0;                    // 0 = detect comma vs tab
};

ResponseTable parse_response_table(std::istream& in, const ParseSchema& schema,
                                   const ParseOptions& opts = {});

// Canonical CSV serialization (column names as in ParseSchema defaults).
std::string to_csv(const ResponseTable& table);

struct DichotomizeResult {
  ResponseTable table;
  std::vector<std::string> degenerate_items;  // all-0 or all-1 after cutting
};

// score := 1 when original score >= cutpoint, else 0.
DichotomizeResult dichotomize(const ResponseTable& table, int cutpoint);

// score := 1 - score for the listed items.
ResponseTable reverse_code(const ResponseTable& table,
                           const std::set<std::string>& item_ids);

// Person-level covariate rescaled to sample mean 0, sample sd 1.
ResponseTable standardize_covariate(const ResponseTable& table);

// Listwise-complete persons only; n-1 variance denominators throughout.
double cronbach_alpha(const ResponseTable& table);

struct DescriptiveStats {
  int n_persons = 0;
  int n_items = 0;
  int n_rows = 0;
  std::optional<double> alpha;
  std::string alpha_note;          // reason when alpha is undefined
  int alpha_persons_dropped = 0;   // incomplete persons excluded from alpha
  double mean_score_control = 0.0;
  double mean_score_treated = 0.0;
  std::vector<double> missingness;  // per item, fraction of persons without a row
};

DescriptiveStats descriptive_stats(const ResponseTable& table);

}  // namespace eirm
