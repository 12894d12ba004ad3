#include "eirm/design.hpp"

#include <algorithm>
#include <array>
#include <numeric>

#include "eirm/errors.hpp"

namespace eirm {

bool ModelSpec::has_term(FixedTerm t) const {
  return std::find(fixed_terms.begin(), fixed_terms.end(), t) != fixed_terms.end();
}

ModelSpec ModelSpec::equation(int model) {
  ModelSpec s;
  switch (model) {
    case 1:
      s.fixed_terms = {FixedTerm::Intercept, FixedTerm::Treatment};
      break;
    case 2:
      s.fixed_terms = {FixedTerm::Intercept, FixedTerm::Treatment, FixedTerm::Covariate};
      break;
    case 3:
      s.fixed_terms = {FixedTerm::Intercept, FixedTerm::Treatment, FixedTerm::Covariate};
      s.item_structure = ItemStructure::RandomInterceptTreatmentSlope;
      s.correlation_free = false;
      break;
    case 4:
      s.fixed_terms = {FixedTerm::Intercept, FixedTerm::Treatment, FixedTerm::Covariate,
                       FixedTerm::TreatmentXCovariate};
      break;
    case 5:
      s.fixed_terms = {FixedTerm::Intercept, FixedTerm::Treatment, FixedTerm::Covariate,
                       FixedTerm::TreatmentXCovariate};
      s.item_structure = ItemStructure::RandomInterceptTreatmentSlope;
      s.correlation_free = false;
      break;
    default:
      throw ConfigError("model must be 1..5, got " + std::to_string(model));
  }
  return s;
}

ModelSpec ModelSpec::with_subscale() const {
  ModelSpec s = *this;
  if (!s.has_term(FixedTerm::Subscale)) s.fixed_terms.push_back(FixedTerm::Subscale);
  if (!s.has_term(FixedTerm::TreatmentXSubscale)) {
    s.fixed_terms.push_back(FixedTerm::TreatmentXSubscale);
  }
  return s;
}

std::vector<std::string> ModelSpec::term_names() const {
  std::vector<std::string> names;
  for (FixedTerm t : fixed_terms) {
    switch (t) {
      case FixedTerm::Intercept: names.emplace_back("intercept"); break;
      case FixedTerm::Treatment: names.emplace_back("treatment"); break;
      case FixedTerm::Covariate: names.emplace_back("covariate"); break;
      case FixedTerm::TreatmentXCovariate: names.emplace_back("treatment:covariate"); break;
      case FixedTerm::Subscale: names.emplace_back("subscale"); break;
      case FixedTerm::TreatmentXSubscale: names.emplace_back("treatment:subscale"); break;
    }
  }
  for (const auto& e : extra_terms) names.push_back(e);
  return names;
}

bool ModelSpec::is_slope_restriction_of(const ModelSpec& other) const {
  return fixed_terms == other.fixed_terms && extra_terms == other.extra_terms &&
         item_structure == ItemStructure::RandomIntercept &&
         other.item_structure == ItemStructure::RandomInterceptTreatmentSlope;
}

void ModelSpec::validate() const {
  if (fixed_terms.empty() || fixed_terms.front() != FixedTerm::Intercept) {
    throw ModelSpecError("fixed terms must start with the intercept");
  }
  for (std::size_t i = 1; i < fixed_terms.size(); ++i) {
    if (fixed_terms[i] == FixedTerm::Intercept) {
      throw ModelSpecError("duplicate intercept term");
    }
  }
  if (item_slope() && !has_term(FixedTerm::Treatment)) {
    throw ModelSpecError("an item treatment slope requires the treatment fixed term");
  }
}

std::vector<std::pair<int, double>> Design::z_row(int r) const {
  std::vector<std::pair<int, double>> out;
  const auto rr = static_cast<std::size_t>(r);
  out.emplace_back(row_person[rr], 1.0);
  const int i = row_item[rr];
  switch (item_structure) {
    case ItemStructure::RandomIntercept:
      out.emplace_back(n_persons + i, 1.0);
      break;
    case ItemStructure::RandomInterceptTreatmentSlope:
      out.emplace_back(n_persons + 2 * i, 1.0);
      out.emplace_back(n_persons + 2 * i + 1, row_treat[rr]);
      break;
    case ItemStructure::FixedOffsets:
      break;
  }
  return out;
}

namespace {

std::vector<int> id_rank(const std::vector<std::string>& ids) {
  std::vector<int> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&ids](int a, int b) {
    return ids[static_cast<std::size_t>(a)] < ids[static_cast<std::size_t>(b)];
  });
  std::vector<int> rank(ids.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    rank[static_cast<std::size_t>(order[k])] = static_cast<int>(k);
  }
  return rank;
}

}  // namespace

Design build_design(const ResponseTable& table, const ModelSpec& spec) {
  spec.validate();
  if (spec.has_term(FixedTerm::Covariate) || spec.has_term(FixedTerm::TreatmentXCovariate)) {
    if (!table.has_covariate()) {
      throw ModelSpecError("model needs a covariate but the table has no covariate column");
    }
  }
  if (spec.has_term(FixedTerm::Subscale) || spec.has_term(FixedTerm::TreatmentXSubscale)) {
    if (!table.has_subscale()) {
      throw ModelSpecError("model needs a subscale but the table has no subscale column");
    }
  }
  for (const auto& name : spec.extra_terms) {
    if (!table.extra(name)) {
      throw ModelSpecError("model references missing column '" + name + "'");
    }
  }

  Design d;
  d.n_persons = table.n_persons();
  d.n_items = table.n_items();
  d.item_structure = spec.item_structure;
  d.correlation_free = spec.correlation_free;
  d.table_hash = table.content_hash();

  const std::vector<int> prank = id_rank(table.person_ids());
  const std::vector<int> irank = id_rank(table.item_ids());

  d.person_ids.resize(table.person_ids().size());
  d.person_treatment.resize(table.person_ids().size());
  for (std::size_t j = 0; j < table.person_ids().size(); ++j) {
    d.person_ids[static_cast<std::size_t>(prank[j])] = table.person_ids()[j];
    d.person_treatment[static_cast<std::size_t>(prank[j])] = table.treatment()[j];
  }
  d.item_ids.resize(table.item_ids().size());
  for (std::size_t i = 0; i < table.item_ids().size(); ++i) {
    d.item_ids[static_cast<std::size_t>(irank[i])] = table.item_ids()[i];
  }

  const int n = table.n_rows();
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> rp(static_cast<std::size_t>(n)), ri(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    rp[static_cast<std::size_t>(r)] =
        prank[static_cast<std::size_t>(table.row_person()[static_cast<std::size_t>(r)])];
    ri[static_cast<std::size_t>(r)] =
        irank[static_cast<std::size_t>(table.row_item()[static_cast<std::size_t>(r)])];
  }
  std::sort(order.begin(), order.end(), [&rp, &ri](int a, int b) {
    const auto sa = static_cast<std::size_t>(a);
    const auto sb = static_cast<std::size_t>(b);
    if (rp[sa] != rp[sb]) return rp[sa] < rp[sb];
    return ri[sa] < ri[sb];
  });

  d.row_person.resize(static_cast<std::size_t>(n));
  d.row_item.resize(static_cast<std::size_t>(n));
  d.row_treat.resize(static_cast<std::size_t>(n));
  d.y.resize(n);
  for (int k = 0; k < n; ++k) {
    const auto src = static_cast<std::size_t>(order[static_cast<std::size_t>(k)]);
    const auto kk = static_cast<std::size_t>(k);
    d.row_person[kk] = rp[src];
    d.row_item[kk] = ri[src];
    d.row_treat[kk] =
        table.treatment()[static_cast<std::size_t>(table.row_person()[src])];
    d.y(k) = table.row_score()[src];
  }

  d.person_ptr.assign(static_cast<std::size_t>(d.n_persons) + 1, 0);
  for (int k = 0; k < n; ++k) {
    d.person_ptr[static_cast<std::size_t>(d.row_person[static_cast<std::size_t>(k)]) + 1] += 1;
  }
  for (std::size_t j = 1; j < d.person_ptr.size(); ++j) {
    d.person_ptr[j] += d.person_ptr[j - 1];
  }

  // Fixed-effect columns, in spec order; item offsets appended last.
  const bool offsets = spec.item_structure == ItemStructure::FixedOffsets;
  int p = static_cast<int>(spec.fixed_terms.size() + spec.extra_terms.size());
  if (offsets) p += d.n_items - 1;
  d.X.resize(n, p);
  d.colnames = spec.term_names();
  if (offsets) {
    for (int i = 1; i < d.n_items; ++i) {
      d.colnames.push_back("item_" + d.item_ids[static_cast<std::size_t>(i)]);
    }
  }

  auto cov_of = [&table](int person) {
    return table.covariate()[static_cast<std::size_t>(person)];
  };
  auto sub_of = [&table](int item) {
    return table.subscale()[static_cast<std::size_t>(item)];
  };

  for (int k = 0; k < n; ++k) {
    const auto src = static_cast<std::size_t>(order[static_cast<std::size_t>(k)]);
    const int person = table.row_person()[src];
    const int item = table.row_item()[src];
    const double t = d.row_treat[static_cast<std::size_t>(k)];
    int c = 0;
    for (FixedTerm term : spec.fixed_terms) {
      double v = 0.0;
      switch (term) {
        case FixedTerm::Intercept: v = 1.0; break;
        case FixedTerm::Treatment: v = t; break;
        case FixedTerm::Covariate: v = cov_of(person); break;
        case FixedTerm::TreatmentXCovariate: v = t * cov_of(person); break;
        case FixedTerm::Subscale: v = sub_of(item); break;
        case FixedTerm::TreatmentXSubscale: v = t * sub_of(item); break;
      }
      d.X(k, c++) = v;
    }
    for (const auto& name : spec.extra_terms) {
      d.X(k, c++) = (*table.extra(name))[static_cast<std::size_t>(person)];
    }
    if (offsets) {
      const int ic = ri[src];
      for (int i = 1; i < d.n_items; ++i) {
        d.X(k, c++) = ic == i ? 1.0 : 0.0;
      }
    }
  }

  // Separation scan: item response constant within a treatment group.
  std::vector<std::array<int, 2>> cnt(static_cast<std::size_t>(d.n_items), {0, 0});
  std::vector<std::array<int, 2>> one(static_cast<std::size_t>(d.n_items), {0, 0});
  for (int k = 0; k < n; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    const auto i = static_cast<std::size_t>(d.row_item[kk]);
    const int g = d.row_treat[kk] == 1.0 ? 1 : 0;
    cnt[i][g] += 1;
    one[i][g] += d.y(k) == 1.0;
  }
  for (int i = 0; i < d.n_items; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    for (int g = 0; g < 2; ++g) {
      if (cnt[ii][g] > 0 && (one[ii][g] == 0 || one[ii][g] == cnt[ii][g])) {
        d.separated_items.push_back(i);
        d.separation_notes.push_back(
            "item '" + d.item_ids[ii] + "' is all-" +
            (one[ii][g] ? "1" : "0") + " in the " +
            (g ? "treatment" : "control") + " group");
      }
    }
  }
  return d;
}

}  // namespace eirm
