#include "eirm/table.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "eirm/errors.hpp"
#include "eirm/io_util.hpp"
#include "eirm/util.hpp"

namespace eirm {

namespace {

double parse_number(const std::string& s, const std::string& what) {
  const char* b = s.data();
  const char* e = b + s.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (e[-1] == ' ' || e[-1] == '\t')) --e;
  double v = 0.0;
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e || b == e) {
    throw ValueError("cannot parse " + what + " value '" + s + "' as a number");
  }
  if (!std::isfinite(v)) throw ValueError(what + " value '" + s + "' is not finite");
  return v;
}

bool is_binary(double v) { return v == 0.0 || v == 1.0; }

}  // namespace

const std::vector<double>& ResponseTable::covariate() const {
  if (!covariate_) throw ModelSpecError("table has no covariate column");
  return *covariate_;
}

const std::vector<double>& ResponseTable::subscale() const {
  if (!subscale_) throw ModelSpecError("table has no subscale column");
  return *subscale_;
}

const std::vector<double>* ResponseTable::extra(const std::string& name) const {
  for (const auto& [n, v] : extras_) {
    if (n == name) return &v;
  }
  return nullptr;
}

int ResponseTable::n_treated() const {
  int k = 0;
  for (double t : treatment_) k += t == 1.0;
  return k;
}

int ResponseTable::person_index(const std::string& id) const {
  for (std::size_t i = 0; i < person_ids_.size(); ++i) {
    if (person_ids_[i] == id) return static_cast<int>(i);
  }
  return -1;
}

int ResponseTable::item_index(const std::string& id) const {
  for (std::size_t i = 0; i < item_ids_.size(); ++i) {
    if (item_ids_[i] == id) return static_cast<int>(i);
  }
  return -1;
}

ResponseTable ResponseTable::Builder::build() const {
  const int np = static_cast<int>(person_ids.size());
  const int ni = static_cast<int>(item_ids.size());
  if (np < 2) throw ConsistencyError("need at least 2 distinct persons, have " +
                                     std::to_string(np));
  if (ni < 2) throw ConsistencyError("need at least 2 distinct items, have " +
                                     std::to_string(ni));
  if (static_cast<int>(treatment.size()) != np) {
    throw ConsistencyError("treatment vector length does not match person count");
  }
  if (covariate && static_cast<int>(covariate->size()) != np) {
    throw ConsistencyError("covariate vector length does not match person count");
  }
  if (subscale && static_cast<int>(subscale->size()) != ni) {
    throw ConsistencyError("subscale vector length does not match item count");
  }
  for (const auto& [name, v] : extras) {
    if (static_cast<int>(v.size()) != np) {
      throw ConsistencyError("extra column '" + name +
                             "' length does not match person count");
    }
  }
  for (std::size_t j = 0; j < treatment.size(); ++j) {
    if (!is_binary(treatment[j])) {
      throw ValueError("treatment for person '" + person_ids[j] +
                       "' is not 0/1");
    }
  }
  if (row_person.size() != row_item.size() || row_person.size() != row_score.size()) {
    throw ConsistencyError("row arrays have mismatched lengths");
  }
  std::unordered_set<std::string> seen_person(person_ids.begin(), person_ids.end());
  if (static_cast<int>(seen_person.size()) != np) {
    throw ConsistencyError("duplicate person id in id list");
  }
  std::unordered_set<std::string> seen_item(item_ids.begin(), item_ids.end());
  if (static_cast<int>(seen_item.size()) != ni) {
    throw ConsistencyError("duplicate item id in id list");
  }

  std::unordered_set<std::uint64_t> cells;
  cells.reserve(row_person.size() * 2);
  bool binary = true;
  for (std::size_t r = 0; r < row_person.size(); ++r) {
    const int p = row_person[r];
    const int i = row_item[r];
    if (p < 0 || p >= np || i < 0 || i >= ni) {
      throw ConsistencyError("row refers to an unknown person or item index");
    }
    const std::uint64_t key =
        static_cast<std::uint64_t>(p) * static_cast<std::uint64_t>(ni) +
        static_cast<std::uint64_t>(i);
    if (!cells.insert(key).second) {
      throw ConsistencyError("duplicate response for person '" + person_ids[p] +
                             "', item '" + item_ids[i] + "'");
    }
    if (!is_binary(row_score[r])) binary = false;
  }
  if (!binary && !allow_nonbinary) {
    throw ValueError("scores are not all 0/1; request dichotomization for "
                     "ordinal data");
  }

  ResponseTable t;
  t.person_ids_ = person_ids;
  t.treatment_ = treatment;
  t.covariate_ = covariate;
  t.extras_ = extras;
  t.item_ids_ = item_ids;
  t.subscale_ = subscale;
  t.row_person_ = row_person;
  t.row_item_ = row_item;
  t.row_score_ = row_score;
  t.scores_binary_ = binary;
  return t;
}

ResponseTable::Builder ResponseTable::to_builder() const {
  Builder b;
  b.person_ids = person_ids_;
  b.treatment = treatment_;
  b.covariate = covariate_;
  b.extras = extras_;
  b.item_ids = item_ids_;
  b.subscale = subscale_;
  b.row_person = row_person_;
  b.row_item = row_item_;
  b.row_score = row_score_;
  b.allow_nonbinary = !scores_binary_;
  return b;
}

std::uint64_t ResponseTable::content_hash() const {
  // Hash the table in a canonical order (ids sorted lexically) so that row
  // order and first-appearance order do not matter.
  std::vector<int> porder(person_ids_.size());
  std::iota(porder.begin(), porder.end(), 0);
  std::sort(porder.begin(), porder.end(), [&](int a, int b) {
    return person_ids_[static_cast<std::size_t>(a)] <
           person_ids_[static_cast<std::size_t>(b)];
  });
  std::vector<int> iorder(item_ids_.size());
  std::iota(iorder.begin(), iorder.end(), 0);
  std::sort(iorder.begin(), iorder.end(), [&](int a, int b) {
    return item_ids_[static_cast<std::size_t>(a)] <
           item_ids_[static_cast<std::size_t>(b)];
  });
  std::vector<int> prank(porder.size()), irank(iorder.size());
  for (std::size_t k = 0; k < porder.size(); ++k)
    prank[static_cast<std::size_t>(porder[k])] = static_cast<int>(k);
  for (std::size_t k = 0; k < iorder.size(); ++k)
    irank[static_cast<std::size_t>(iorder[k])] = static_cast<int>(k);

  std::uint64_t h = fnv1a("response-table-v1");
  auto mix = [&h](const std::string& s) {
    h = fnv1a(s, h);
    h = fnv1a("\x1f", h);
  };
  for (int p : porder) {
    const auto j = static_cast<std::size_t>(p);
    mix(person_ids_[j]);
    mix(format_double(treatment_[j]));
    if (covariate_) mix(format_double((*covariate_)[j]));
    for (const auto& [name, v] : extras_) {
      mix(name);
      mix(format_double(v[j]));
    }
  }
  for (int i : iorder) {
    const auto k = static_cast<std::size_t>(i);
    mix(item_ids_[k]);
    if (subscale_) mix(format_double((*subscale_)[k]));
  }
  std::vector<std::tuple<int, int, double>> cells;
  cells.reserve(row_person_.size());
  for (std::size_t r = 0; r < row_person_.size(); ++r) {
    cells.emplace_back(prank[static_cast<std::size_t>(row_person_[r])],
                       irank[static_cast<std::size_t>(row_item_[r])],
                       row_score_[r]);
  }
  std::sort(cells.begin(), cells.end());
  for (const auto& [p, i, s] : cells) {
    mix(std::to_string(p));
    mix(std::to_string(i));
    mix(format_double(s));
  }
  return h;
}

ResponseTable parse_response_table(std::istream& in, const ParseSchema& schema,
                                   const ParseOptions& opts) {
  TextTable tt = opts.delimiter ? read_delimited(in, opts.delimiter)
                                : read_delimited_auto(in);

  auto need = [&tt](const std::string& name) {
    const int c = tt.column(name);
    if (c < 0) throw SchemaError("missing column '" + name + "'");
    return c;
  };
  const int c_person = need(schema.person);
  const int c_item = need(schema.item);
  const int c_score = need(schema.score);
  const int c_treat = need(schema.treatment);
  const int c_cov = schema.covariate.empty() ? -1 : need(schema.covariate);
  const int c_sub = schema.subscale.empty() ? -1 : need(schema.subscale);
  std::vector<int> c_extras;
  for (const auto& name : schema.extras) c_extras.push_back(need(name));

  ResponseTable::Builder b;
  b.allow_nonbinary = opts.allow_nonbinary_scores;
  if (c_cov >= 0) b.covariate.emplace();
  if (c_sub >= 0) b.subscale.emplace();
  for (const auto& name : schema.extras) b.extras.emplace_back(name, std::vector<double>{});

  std::unordered_map<std::string, int> pidx, iidx;
  for (const auto& row : tt.rows) {
    const std::string& pid = row[static_cast<std::size_t>(c_person)];
    const std::string& iid = row[static_cast<std::size_t>(c_item)];
    const double score = parse_number(row[static_cast<std::size_t>(c_score)], "score");
    const double treat = parse_number(row[static_cast<std::size_t>(c_treat)], "treatment");
    if (!is_binary(treat)) {
      throw ValueError("treatment value for person '" + pid + "' is not 0/1");
    }
    if (!b.allow_nonbinary && !is_binary(score)) {
      throw ValueError("score '" + row[static_cast<std::size_t>(c_score)] +
                       "' for person '" + pid + "', item '" + iid +
                       "' is not 0/1; request dichotomization for ordinal data");
    }

    auto [pit, pnew] = pidx.try_emplace(pid, static_cast<int>(b.person_ids.size()));
    if (pnew) {
      b.person_ids.push_back(pid);
      b.treatment.push_back(treat);
      if (c_cov >= 0) {
        b.covariate->push_back(parse_number(row[static_cast<std::size_t>(c_cov)], "covariate"));
      }
      for (std::size_t k = 0; k < c_extras.size(); ++k) {
        b.extras[k].second.push_back(
            parse_number(row[static_cast<std::size_t>(c_extras[k])], b.extras[k].first));
      }
    } else {
      const auto j = static_cast<std::size_t>(pit->second);
      if (b.treatment[j] != treat) {
        throw ConsistencyError("treatment varies within person '" + pid + "'");
      }
      if (c_cov >= 0) {
        const double v = parse_number(row[static_cast<std::size_t>(c_cov)], "covariate");
        if ((*b.covariate)[j] != v) {
          throw ConsistencyError("covariate varies within person '" + pid + "'");
        }
      }
      for (std::size_t k = 0; k < c_extras.size(); ++k) {
        const double v =
            parse_number(row[static_cast<std::size_t>(c_extras[k])], b.extras[k].first);
        if (b.extras[k].second[j] != v) {
          throw ConsistencyError("column '" + b.extras[k].first +
                                 "' varies within person '" + pid + "'");
        }
      }
    }

    auto [iit, inew] = iidx.try_emplace(iid, static_cast<int>(b.item_ids.size()));
    if (inew) {
      b.item_ids.push_back(iid);
      if (c_sub >= 0) {
        b.subscale->push_back(parse_number(row[static_cast<std::size_t>(c_sub)], "subscale"));
      }
    } else if (c_sub >= 0) {
      const double v = parse_number(row[static_cast<std::size_t>(c_sub)], "subscale");
      if ((*b.subscale)[static_cast<std::size_t>(iit->second)] != v) {
        throw ConsistencyError("subscale varies within item '" + iid + "'");
      }
    }

    b.row_person.push_back(pit->second);
    b.row_item.push_back(iit->second);
    b.row_score.push_back(score);
  }
  return b.build();
}

std::string to_csv(const ResponseTable& table) {
  std::vector<std::string> header = {"person_id", "item_id", "score", "treatment"};
  if (table.has_covariate()) header.push_back("covariate_x");
  if (table.has_subscale()) header.push_back("subscale");
  for (const auto& [name, v] : table.extras()) header.push_back(name);

  std::string out = join_csv(header);
  out.push_back('\n');
  for (int r = 0; r < table.n_rows(); ++r) {
    const auto j = static_cast<std::size_t>(table.row_person()[static_cast<std::size_t>(r)]);
    const auto i = static_cast<std::size_t>(table.row_item()[static_cast<std::size_t>(r)]);
    std::vector<std::string> fields = {
        table.person_ids()[j], table.item_ids()[i],
        format_double(table.row_score()[static_cast<std::size_t>(r)]),
        format_double(table.treatment()[j])};
    if (table.has_covariate()) fields.push_back(format_double(table.covariate()[j]));
    if (table.has_subscale()) fields.push_back(format_double(table.subscale()[i]));
    for (const auto& [name, v] : table.extras()) fields.push_back(format_double(v[j]));
    out += join_csv(fields);
    out.push_back('\n');
  }
  return out;
}

DichotomizeResult dichotomize(const ResponseTable& table, int cutpoint) {
  for (double s : table.row_score()) {
    if (std::abs(s - std::round(s)) > 1e-9) {
      throw ValueError("dichotomize expects integer-coded scores, found " +
                       format_double(s));
    }
  }
  auto b = table.to_builder();
  for (double& s : b.row_score) s = s >= static_cast<double>(cutpoint) ? 1.0 : 0.0;
  b.allow_nonbinary = false;

  DichotomizeResult out{b.build(), {}};
  const auto& t = out.table;
  std::vector<int> count(static_cast<std::size_t>(t.n_items()), 0);
  std::vector<int> ones(static_cast<std::size_t>(t.n_items()), 0);
  for (int r = 0; r < t.n_rows(); ++r) {
    const auto i = static_cast<std::size_t>(t.row_item()[static_cast<std::size_t>(r)]);
    count[i] += 1;
    ones[i] += t.row_score()[static_cast<std::size_t>(r)] == 1.0;
  }
  for (int i = 0; i < t.n_items(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (count[k] > 0 && (ones[k] == 0 || ones[k] == count[k])) {
      out.degenerate_items.push_back(t.item_ids()[k]);
    }
  }
  return out;
}

ResponseTable reverse_code(const ResponseTable& table,
                           const std::set<std::string>& item_ids) {
  std::vector<char> flip(static_cast<std::size_t>(table.n_items()), 0);
  for (const auto& id : item_ids) {
    const int i = table.item_index(id);
    if (i < 0) throw KeyError("unknown item id '" + id + "'");
    flip[static_cast<std::size_t>(i)] = 1;
  }
  auto b = table.to_builder();
  for (std::size_t r = 0; r < b.row_score.size(); ++r) {
    if (flip[static_cast<std::size_t>(b.row_item[r])]) {
      b.row_score[r] = 1.0 - b.row_score[r];
    }
  }
  return b.build();
}

ResponseTable standardize_covariate(const ResponseTable& table) {
  const auto& x = table.covariate();  // throws when absent
  const auto n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  if (!(sd > 0.0)) throw DegenerateError("covariate has zero variance");
  auto b = table.to_builder();
  for (double& v : *b.covariate) v = (v - mean) / sd;
  return b.build();
}

double cronbach_alpha(const ResponseTable& table) {
  const int ni = table.n_items();
  if (ni < 2) throw DegenerateError("alpha needs at least 2 items");

  // Listwise-complete persons: keep only persons with a response to every item.
  const int np = table.n_persons();
  std::vector<int> count(static_cast<std::size_t>(np), 0);
  for (int p : table.row_person()) count[static_cast<std::size_t>(p)] += 1;
  std::vector<int> dense(static_cast<std::size_t>(np), -1);
  int nc = 0;
  for (int j = 0; j < np; ++j) {
    if (count[static_cast<std::size_t>(j)] == ni) dense[static_cast<std::size_t>(j)] = nc++;
  }
  if (nc < 2) {
    throw DegenerateError("fewer than 2 listwise-complete persons; alpha undefined");
  }

  std::vector<double> mat(static_cast<std::size_t>(nc) * static_cast<std::size_t>(ni), 0.0);
  for (int r = 0; r < table.n_rows(); ++r) {
    const int j = dense[static_cast<std::size_t>(table.row_person()[static_cast<std::size_t>(r)])];
    if (j < 0) continue;
    const int i = table.row_item()[static_cast<std::size_t>(r)];
    mat[static_cast<std::size_t>(j) * static_cast<std::size_t>(ni) +
        static_cast<std::size_t>(i)] = table.row_score()[static_cast<std::size_t>(r)];
  }

  auto var = [nc](auto value_of) {
    double mean = 0.0;
    for (int j = 0; j < nc; ++j) mean += value_of(j);
    mean /= nc;
    double ss = 0.0;
    for (int j = 0; j < nc; ++j) {
      const double d = value_of(j) - mean;
      ss += d * d;
    }
    return ss / (nc - 1);
  };

  double item_var_sum = 0.0;
  for (int i = 0; i < ni; ++i) {
    item_var_sum += var([&](int j) {
      return mat[static_cast<std::size_t>(j) * static_cast<std::size_t>(ni) +
                 static_cast<std::size_t>(i)];
    });
  }
  const double total_var = var([&](int j) {
    double s = 0.0;
    for (int i = 0; i < ni; ++i) {
      s += mat[static_cast<std::size_t>(j) * static_cast<std::size_t>(ni) +
               static_cast<std::size_t>(i)];
    }
    return s;
  });
  if (!(total_var > 0.0)) {
    throw DegenerateError("total score variance is zero; alpha undefined");
  }
  return (static_cast<double>(ni) / (ni - 1.0)) * (1.0 - item_var_sum / total_var);
}

DescriptiveStats descriptive_stats(const ResponseTable& table) {
  DescriptiveStats s;
  s.n_persons = table.n_persons();
  s.n_items = table.n_items();
  s.n_rows = table.n_rows();

  double sum_c = 0.0, sum_t = 0.0;
  int n_c = 0, n_t = 0;
  std::vector<int> item_count(static_cast<std::size_t>(table.n_items()), 0);
  for (int r = 0; r < table.n_rows(); ++r) {
    const auto j = static_cast<std::size_t>(table.row_person()[static_cast<std::size_t>(r)]);
    const double y = table.row_score()[static_cast<std::size_t>(r)];
    if (table.treatment()[j] == 1.0) {
      sum_t += y;
      ++n_t;
    } else {
      sum_c += y;
      ++n_c;
    }
    item_count[static_cast<std::size_t>(table.row_item()[static_cast<std::size_t>(r)])] += 1;
  }
  s.mean_score_control = n_c ? sum_c / n_c : 0.0;
  s.mean_score_treated = n_t ? sum_t / n_t : 0.0;

  s.missingness.resize(static_cast<std::size_t>(table.n_items()));
  for (int i = 0; i < table.n_items(); ++i) {
    s.missingness[static_cast<std::size_t>(i)] =
        1.0 - static_cast<double>(item_count[static_cast<std::size_t>(i)]) /
                  static_cast<double>(table.n_persons());
  }

  std::vector<int> pc(static_cast<std::size_t>(table.n_persons()), 0);
  for (int p : table.row_person()) pc[static_cast<std::size_t>(p)] += 1;
  for (int c : pc) s.alpha_persons_dropped += c != table.n_items();

  try {
    s.alpha = cronbach_alpha(table);
  } catch (const DegenerateError& e) {
    s.alpha_note = e.what();
  }
  return s;
}

}  // namespace eirm
