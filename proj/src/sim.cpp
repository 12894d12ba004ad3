#include "eirm/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>

#include "eirm/errors.hpp"
#include "eirm/quadrature.hpp"
#include "eirm/rng.hpp"
#include "eirm/util.hpp"

namespace eirm {

namespace {

std::string padded_id(char prefix, int index, int count) {
  std::size_t width = 1;
  for (int v = count - 1; v >= 10; v /= 10) ++width;
  std::string digits = std::to_string(index);
  std::string out(1, prefix);
  if (digits.size() < width) out.append(width - digits.size(), '0');
  out += digits;
  return out;
}

// Plain Nelder-Mead over a handful of parameters; used only for the curve
// calibration below, where the objective is smooth and cheap.
std::vector<double> nelder_mead_small(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x0, int max_eval) {
  const std::size_t n = x0.size();
  struct Pt {
    std::vector<double> x;
    double fx;
  };
  std::vector<Pt> sx;
  sx.push_back({x0, f(x0)});
  for (std::size_t k = 0; k < n; ++k) {
    auto x = x0;
    x[k] += (x[k] != 0.0 ? 0.1 * std::abs(x[k]) : 0.1);
    sx.push_back({x, f(x)});
  }
  int evals = static_cast<int>(n) + 1;
  auto order = [&] {
    std::sort(sx.begin(), sx.end(),
              [](const Pt& a, const Pt& b) { return a.fx < b.fx; });
  };
  order();
  while (evals < max_eval) {
    if (sx.back().fx - sx.front().fx < 1e-12) break;
    std::vector<double> centroid(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < n; ++k) centroid[k] += sx[i].x[k];
    }
    for (auto& c : centroid) c /= static_cast<double>(n);
    auto at = [&](double t) {
      std::vector<double> x(n);
      for (std::size_t k = 0; k < n; ++k)
        x[k] = centroid[k] + t * (sx.back().x[k] - centroid[k]);
      return x;
    };
    auto xr = at(-1.0);
    const double fr = f(xr);
    ++evals;
    if (fr < sx.front().fx) {
      auto xe = at(-2.0);
      const double fe = f(xe);
      ++evals;
      sx.back() = fe < fr ? Pt{xe, fe} : Pt{xr, fr};
    } else if (fr < sx[n - 1].fx) {
      sx.back() = {xr, fr};
    } else {
      auto xc = at(fr < sx.back().fx ? -0.5 : 0.5);
      const double fc = f(xc);
      ++evals;
      if (fc < std::min(fr, sx.back().fx)) {
        sx.back() = {xc, fc};
      } else {
        for (std::size_t i = 1; i <= n; ++i) {
          for (std::size_t k = 0; k < n; ++k)
            sx[i].x[k] = 0.5 * (sx[i].x[k] + sx.front().x[k]);
          sx[i].fx = f(sx[i].x);
          ++evals;
        }
      }
    }
    order();
  }
  return sx.front().x;
}

}  // namespace

void SimConfig::validate() const {
  if (n_persons < 2) throw ConfigError("n_persons must be at least 2");
  if (n_items < 2) throw ConfigError("n_items must be at least 2");
  for (double b : {beta0, beta1, beta2, beta3}) {
    if (!std::isfinite(b)) throw ConfigError("coefficients must be finite");
  }
  if (!(sigma_b >= 0.0) || !std::isfinite(sigma_b))
    throw ConfigError("sigma_b must be >= 0");
  if (!(sigma_zeta >= 0.0) || !std::isfinite(sigma_zeta))
    throw ConfigError("sigma_zeta must be >= 0");
  if (!(sigma_theta > 0.0) || !std::isfinite(sigma_theta))
    throw ConfigError("sigma_theta must be > 0");
  if (!(rho >= -1.0 && rho <= 1.0)) throw ConfigError("rho must be in [-1, 1]");
}

SimResult simulate_dataset(const SimConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  const int np = cfg.n_persons;
  const int ni = cfg.n_items;

  // Complete randomization: the first floor(np/2) slots of a random
  // permutation are treated, so an odd leftover person lands in control.
  std::vector<double> treat(static_cast<std::size_t>(np), 0.0);
  {
    const auto perm = rng.permutation(np);
    const int n_treated = np / 2;
    for (int k = 0; k < n_treated; ++k)
      treat[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = 1.0;
  }

  std::vector<double> x(static_cast<std::size_t>(np));
  for (auto& v : x) v = rng.normal();
  std::vector<double> eps(static_cast<std::size_t>(np));
  for (auto& v : eps) v = cfg.sigma_theta * rng.normal();

  // Both item normals are always consumed; see the header note on cross-
  // configuration reuse of the item bank.
  std::vector<double> item_b(static_cast<std::size_t>(ni));
  std::vector<double> item_zeta(static_cast<std::size_t>(ni));
  const double rho_c = std::sqrt(std::max(0.0, 1.0 - cfg.rho * cfg.rho));
  for (int i = 0; i < ni; ++i) {
    const double z1 = rng.normal();
    const double z2 = rng.normal();
    item_b[static_cast<std::size_t>(i)] = cfg.sigma_b * z1;
    item_zeta[static_cast<std::size_t>(i)] =
        cfg.sigma_zeta * (cfg.rho * z1 + rho_c * z2);
  }

  ResponseTable::Builder b;
  b.person_ids.reserve(static_cast<std::size_t>(np));
  for (int j = 0; j < np; ++j) b.person_ids.push_back(padded_id('p', j, np));
  b.treatment = treat;
  b.covariate = x;
  b.item_ids.reserve(static_cast<std::size_t>(ni));
  for (int i = 0; i < ni; ++i) b.item_ids.push_back(padded_id('i', i, ni));

  const std::size_t n_rows = static_cast<std::size_t>(np) * static_cast<std::size_t>(ni);
  b.row_person.reserve(n_rows);
  b.row_item.reserve(n_rows);
  b.row_score.reserve(n_rows);
  for (int j = 0; j < np; ++j) {
    const double base = cfg.beta0 + cfg.beta1 * treat[static_cast<std::size_t>(j)] +
                        cfg.beta2 * x[static_cast<std::size_t>(j)] +
                        cfg.beta3 * treat[static_cast<std::size_t>(j)] *
                            x[static_cast<std::size_t>(j)] +
                        eps[static_cast<std::size_t>(j)];
    for (int i = 0; i < ni; ++i) {
      const double eta = base + item_b[static_cast<std::size_t>(i)] +
                         item_zeta[static_cast<std::size_t>(i)] *
                             treat[static_cast<std::size_t>(j)];
      b.row_person.push_back(j);
      b.row_item.push_back(i);
      b.row_score.push_back(rng.uniform() < inv_logit(eta) ? 1.0 : 0.0);
    }
  }

  SimResult out{b.build(), TrueParams{}};
  out.truth.config = cfg;
  // Ids are zero padded, so the table's canonical order equals draw order and
  // the realized vectors can be stored as-is.
  out.truth.person_treatment = std::move(treat);
  out.truth.person_x = std::move(x);
  out.truth.person_eps = std::move(eps);
  out.truth.item_b = std::move(item_b);
  out.truth.item_zeta = std::move(item_zeta);
  return out;
}

std::vector<double> expected_sumscore_curve(const TrueParams& truth,
                                            const std::vector<double>& x_grid,
                                            int treatment_group, int n_nodes) {
  if (treatment_group != 0 && treatment_group != 1) {
    throw ValueError("expected_sumscore_curve: treatment_group must be 0 or 1");
  }
  if (n_nodes < 1) throw ValueError("expected_sumscore_curve: n_nodes < 1");
  const SimConfig& c = truth.config;
  const double t = static_cast<double>(treatment_group);
  const GaussHermite gh = gauss_hermite(n_nodes);

  std::vector<double> out;
  out.reserve(x_grid.size());
  for (double x : x_grid) {
    const double base = c.beta0 + c.beta1 * t + c.beta2 * x + c.beta3 * t * x;
    double total = 0.0;
    for (std::size_t i = 0; i < truth.item_b.size(); ++i) {
      const double loc = base + truth.item_b[i] + truth.item_zeta[i] * t;
      total += gauss_hermite_normal_mean(
          gh, loc, c.sigma_theta, [](double v) { return inv_logit(v); });
    }
    out.push_back(total);
  }
  return out;
}

CalibratedPair calibrate_confound_pair(const SimConfig& item_dependent,
                                       const std::vector<double>& x_grid,
                                       int n_nodes) {
  item_dependent.validate();
  if (x_grid.size() < 3) {
    throw ValueError("calibrate_confound_pair: x_grid needs several points");
  }
  if (!(item_dependent.sigma_zeta > 0.0)) {
    throw ConfigError(
        "calibrate_confound_pair: item-dependent scenario needs sigma_zeta > 0");
  }

  CalibratedPair out;
  out.item_dependent = item_dependent;
  out.person_dependent = item_dependent;
  out.person_dependent.sigma_zeta = 0.0;
  out.person_dependent.rho = 0.0;
  out.person_dependent.beta3 = 0.0;

  // Same seed means the same item difficulties and the same persons; only the
  // item slopes differ between the scenarios.
  const TrueParams truth_id =
      simulate_dataset(item_dependent).truth;
  TrueParams truth_pd = truth_id;
  truth_pd.config = out.person_dependent;
  std::fill(truth_pd.item_zeta.begin(), truth_pd.item_zeta.end(), 0.0);

  const std::vector<double> target =
      expected_sumscore_curve(truth_id, x_grid, 1, n_nodes);

  double mean_zeta = 0.0;
  for (double z : truth_id.item_zeta) mean_zeta += z;
  mean_zeta /= static_cast<double>(truth_id.item_zeta.size());

  auto objective = [&](const std::vector<double>& p) {
    TrueParams t = truth_pd;
    t.config.beta1 = p[0];
    t.config.beta3 = p[1];
    const auto curve = expected_sumscore_curve(t, x_grid, 1, n_nodes);
    double ss = 0.0;
    for (std::size_t k = 0; k < curve.size(); ++k) {
      const double d = curve[k] - target[k];
      ss += d * d;
    }
    return ss;
  };

  const auto best = nelder_mead_small(
      objective, {item_dependent.beta1 + mean_zeta, 0.0}, 400);
  out.person_dependent.beta1 = best[0];
  out.person_dependent.beta3 = best[1];

  truth_pd.config = out.person_dependent;
  const auto fitted = expected_sumscore_curve(truth_pd, x_grid, 1, n_nodes);
  double gap = 0.0;
  for (std::size_t k = 0; k < fitted.size(); ++k) {
    gap = std::max(gap, std::abs(fitted[k] - target[k]));
  }
  // Control curves are identical by construction (no slope terms enter), so
  // the treated-side gap is the whole story.
  out.max_gap = gap;
  return out;
}

}  // namespace eirm
