#include <algorithm>
#include <cmath>
#include <doctest.h>
#include <limits>
#include <numeric>

#include "eirm/errors.hpp"
#include "eirm/sim.hpp"
#include "eirm/util.hpp"
#include "helpers.hpp"

using namespace eirm;

namespace {

SimConfig base_config(int np, int ni, std::uint64_t seed) {
  SimConfig c;
  c.n_persons = np;
  c.n_items = ni;
  c.seed = seed;
  return c;
}

double sample_sd(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (n - 1.0));
}

double sample_corr(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_SUITE("sim") {

TEST_CASE("same seed reproduces the dataset bit for bit") {
  SimConfig cfg = base_config(40, 12, 2718);
  cfg.beta1 = 0.4;
  cfg.beta2 = 0.6;
  cfg.sigma_zeta = 0.3;
  cfg.rho = 0.2;

  const SimResult a = simulate_dataset(cfg);
  const SimResult b = simulate_dataset(cfg);
  CHECK(a.table.content_hash() == b.table.content_hash());
  CHECK(a.table.row_score() == b.table.row_score());
  CHECK(a.truth.person_x == b.truth.person_x);
  CHECK(a.truth.person_eps == b.truth.person_eps);
  CHECK(a.truth.item_b == b.truth.item_b);
  CHECK(a.truth.item_zeta == b.truth.item_zeta);

  SimConfig other = cfg;
  other.seed = 2719;
  CHECK(simulate_dataset(other).table.content_hash() !=
        a.table.content_hash());
}

TEST_CASE("marginal rate is one half when all effects vanish") {
  SimConfig cfg = base_config(1000, 100, 31);
  cfg.sigma_b = 0.0;
  cfg.sigma_theta = 1e-9;
  const SimResult r = simulate_dataset(cfg);
  const auto& y = r.table.row_score();
  const double mean =
      std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  const double band = 3.0 * std::sqrt(0.25 / static_cast<double>(y.size()));
  CHECK(std::abs(mean - 0.5) < band);
}

TEST_CASE("zero slope sd leaves every item slope at zero") {
  SimConfig cfg = base_config(5, 50, 12);
  cfg.sigma_zeta = 0.0;
  cfg.rho = 0.7;  // irrelevant without slope variance
  const SimResult r = simulate_dataset(cfg);
  for (double z : r.truth.item_zeta) CHECK(z == 0.0);
}

TEST_CASE("item bank and person draws survive a slope-sd change") {
  SimConfig quiet = base_config(50, 20, 404);
  quiet.beta1 = 0.4;
  SimConfig loud = quiet;
  loud.sigma_zeta = 0.7;

  const SimResult a = simulate_dataset(quiet);
  const SimResult b = simulate_dataset(loud);
  CHECK(a.truth.item_b == b.truth.item_b);
  CHECK(a.truth.person_x == b.truth.person_x);
  CHECK(a.truth.person_eps == b.truth.person_eps);
  CHECK(a.truth.person_treatment == b.truth.person_treatment);
  CHECK(a.table.item_ids() == b.table.item_ids());
  // The responses themselves do react to the new slopes.
  CHECK(a.table.content_hash() != b.table.content_hash());
}

TEST_CASE("slope correlation is realized in the item draws") {
  SimConfig cfg = base_config(2, 10000, 55);
  cfg.sigma_zeta = 1.0;
  cfg.rho = 1.0;
  const SimResult r = simulate_dataset(cfg);
  // Perfect correlation with equal sds makes the slope a copy of the
  // intercept draw.
  for (std::size_t i = 0; i < r.truth.item_b.size(); ++i) {
    CHECK(r.truth.item_zeta[i] == r.truth.item_b[i]);
  }
  std::vector<double> sum(r.truth.item_b.size());
  for (std::size_t i = 0; i < sum.size(); ++i)
    sum[i] = r.truth.item_b[i] + r.truth.item_zeta[i];
  CHECK(std::abs(sample_sd(sum) - 2.0) < 0.1);

  SimConfig mid = cfg;
  mid.rho = 0.6;
  const SimResult m = simulate_dataset(mid);
  CHECK(std::abs(sample_corr(m.truth.item_b, m.truth.item_zeta) - 0.6) < 0.05);
  CHECK(std::abs(sample_sd(m.truth.item_zeta) - 1.0) < 0.05);
}

TEST_CASE("responses follow the logistic law of the realized effects") {
  SimConfig cfg = base_config(2000, 20, 99);
  cfg.beta0 = -0.3;
  cfg.beta1 = 0.5;
  cfg.beta2 = 0.8;
  cfg.sigma_zeta = 0.4;
  cfg.rho = 0.3;
  const SimResult r = simulate_dataset(cfg);
  const auto& t = r.truth;

  const auto& rp = r.table.row_person();
  const auto& ri = r.table.row_item();
  const auto& y = r.table.row_score();
  std::vector<double> p(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) {
    const auto j = static_cast<std::size_t>(rp[k]);
    const auto i = static_cast<std::size_t>(ri[k]);
    const double eta = cfg.beta0 + cfg.beta1 * t.person_treatment[j] +
                       cfg.beta2 * t.person_x[j] + t.person_eps[j] +
                       t.item_b[i] + t.item_zeta[i] * t.person_treatment[j];
    p[k] = inv_logit(eta);
  }

  double resid = 0.0, var = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    resid += y[k] - p[k];
    var += p[k] * (1.0 - p[k]);
  }
  CHECK(std::abs(resid) < 3.0 * std::sqrt(var));

  // Decile calibration: within each band of predicted probability the
  // empirical rate matches the average prediction.
  std::vector<std::size_t> order(y.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  const std::size_t per = y.size() / 10;
  for (int bin = 0; bin < 10; ++bin) {
    double rate = 0.0, pred = 0.0, v = 0.0;
    for (std::size_t k = static_cast<std::size_t>(bin) * per;
         k < (static_cast<std::size_t>(bin) + 1) * per; ++k) {
      rate += y[order[k]];
      pred += p[order[k]];
      v += p[order[k]] * (1.0 - p[order[k]]);
    }
    CHECK(std::abs(rate - pred) < 4.0 * std::sqrt(v));
  }
}

TEST_CASE("expected sum score of a symmetric single item is one half") {
  TrueParams truth;
  truth.config = base_config(2, 1, 1);
  truth.item_b = {0.0};
  truth.item_zeta = {0.0};
  const std::vector<double> grid{-2.0, -1.0, 0.0, 1.0, 3.0};
  for (int group : {0, 1}) {
    const auto curve = expected_sumscore_curve(truth, grid, group);
    for (double v : curve) CHECK(std::abs(v - 0.5) < 1e-12);
  }
}

TEST_CASE("expected sum-score curve rises with ability and counts items") {
  TrueParams truth;
  truth.config = base_config(2, 3, 1);
  truth.config.beta1 = 0.5;
  truth.config.beta2 = 1.0;
  truth.item_b = {2.0, 0.0, -2.0};
  truth.item_zeta = {0.0, 0.0, 0.0};

  std::vector<double> grid;
  for (int k = 0; k <= 12; ++k) grid.push_back(-3.0 + 0.5 * k);
  const auto control = expected_sumscore_curve(truth, grid, 0);
  const auto treated = expected_sumscore_curve(truth, grid, 1);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    CHECK(control[k] > 0.0);
    CHECK(control[k] < 3.0);
    if (k > 0) CHECK(control[k] > control[k - 1]);
    CHECK(treated[k] > control[k]);
  }
  CHECK(control.front() < 0.6);
  CHECK(control.back() > 2.4);

  CHECK_THROWS_AS(expected_sumscore_curve(truth, grid, 2), ValueError);
  CHECK_THROWS_AS(expected_sumscore_curve(truth, grid, 1, 0), ValueError);
}

TEST_CASE("expected sum-score curve is stable under node doubling") {
  SimConfig cfg = base_config(20, 12, 77);
  cfg.beta1 = 0.3;
  cfg.beta2 = 0.5;
  cfg.sigma_zeta = 0.5;
  cfg.rho = -0.4;
  const TrueParams truth = simulate_dataset(cfg).truth;
  std::vector<double> grid;
  for (int k = 0; k <= 8; ++k) grid.push_back(-2.0 + 0.5 * k);
  const auto coarse = expected_sumscore_curve(truth, grid, 1, 21);
  const auto fine = expected_sumscore_curve(truth, grid, 1, 42);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    CHECK(std::abs(coarse[k] - fine[k]) < 1e-6);
  }
}

TEST_CASE("calibrated pair confounds item-driven with person-driven effects") {
  SimConfig item_dep = base_config(200, 20, 11);
  item_dep.beta0 = -0.2;
  item_dep.beta1 = 0.3;
  item_dep.beta2 = 0.8;
  item_dep.sigma_zeta = 0.5;
  item_dep.rho = -0.9;

  std::vector<double> grid;
  for (int k = 0; k <= 8; ++k) grid.push_back(-2.0 + 0.5 * k);
  const CalibratedPair pair = calibrate_confound_pair(item_dep, grid);

  CHECK(pair.person_dependent.sigma_zeta == 0.0);
  CHECK(pair.person_dependent.rho == 0.0);
  CHECK(pair.item_dependent.sigma_zeta == item_dep.sigma_zeta);
  CHECK(std::isfinite(pair.person_dependent.beta1));
  CHECK(std::isfinite(pair.person_dependent.beta3));
  // The treated curves agree to a small fraction of one item on a twenty
  // item form.
  CHECK(pair.max_gap < 0.05);

  // The reported gap is reproducible from the returned configurations.
  const TrueParams t_id = simulate_dataset(pair.item_dependent).truth;
  const TrueParams t_pd = simulate_dataset(pair.person_dependent).truth;
  const auto c_id = expected_sumscore_curve(t_id, grid, 1);
  const auto c_pd = expected_sumscore_curve(t_pd, grid, 1);
  double gap = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    gap = std::max(gap, std::abs(c_id[k] - c_pd[k]));
  }
  CHECK(gap == doctest::Approx(pair.max_gap).epsilon(1e-9));

  // Control curves coincide exactly: no slope term reaches that group.
  const auto z_id = expected_sumscore_curve(t_id, grid, 0);
  const auto z_pd = expected_sumscore_curve(t_pd, grid, 0);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    CHECK(std::abs(z_id[k] - z_pd[k]) < 1e-12);
  }

  SimConfig flat = item_dep;
  flat.sigma_zeta = 0.0;
  CHECK_THROWS_AS(calibrate_confound_pair(flat, grid), ConfigError);
  CHECK_THROWS_AS(calibrate_confound_pair(item_dep, {0.0, 1.0}), ValueError);
}

TEST_CASE("treated count is exactly half, rounded down") {
  for (int np : {2, 10, 11, 25}) {
    const SimResult r = simulate_dataset(base_config(np, 4, 7));
    CHECK(r.table.n_treated() == np / 2);
    const double total = std::accumulate(r.truth.person_treatment.begin(),
                                         r.truth.person_treatment.end(), 0.0);
    CHECK(total == static_cast<double>(np / 2));
  }
}

TEST_CASE("ids are zero padded so lexical order equals draw order") {
  const SimResult r = simulate_dataset(base_config(103, 11, 3));
  const auto& pid = r.table.person_ids();
  const auto& iid = r.table.item_ids();
  CHECK(pid.front() == "p000");
  CHECK(pid.back() == "p102");
  CHECK(iid.front() == "i00");
  CHECK(iid[9] == "i09");
  CHECK(iid.back() == "i10");
  CHECK(std::is_sorted(pid.begin(), pid.end()));
  CHECK(std::is_sorted(iid.begin(), iid.end()));

  // Rows run person-major in draw order.
  const auto& rp = r.table.row_person();
  const auto& ri = r.table.row_item();
  for (std::size_t k = 0; k < rp.size(); ++k) {
    CHECK(rp[k] == static_cast<int>(k) / 11);
    CHECK(ri[k] == static_cast<int>(k) % 11);
  }

  // Padding stretches only as far as the largest index needs.
  const SimResult tiny = simulate_dataset(base_config(10, 10, 3));
  CHECK(tiny.table.item_ids().front() == "i0");
  CHECK(tiny.table.item_ids().back() == "i9");
}

TEST_CASE("configuration bounds are enforced") {
  const SimConfig ok = base_config(2, 2, 1);
  CHECK_NOTHROW(ok.validate());

  auto expect_bad = [](SimConfig c) {
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  SimConfig c = base_config(1, 4, 1);
  expect_bad(c);
  c = base_config(4, 1, 1);
  expect_bad(c);
  c = base_config(4, 4, 1);
  c.beta1 = std::numeric_limits<double>::infinity();
  expect_bad(c);
  c = base_config(4, 4, 1);
  c.beta3 = std::nan("");
  expect_bad(c);
  c = base_config(4, 4, 1);
  c.sigma_b = -0.1;
  expect_bad(c);
  c = base_config(4, 4, 1);
  c.sigma_zeta = -0.1;
  expect_bad(c);
  c = base_config(4, 4, 1);
  c.sigma_theta = 0.0;
  expect_bad(c);
  c = base_config(4, 4, 1);
  c.sigma_theta = std::nan("");
  expect_bad(c);
  c = base_config(4, 4, 1);
  c.rho = 1.5;
  expect_bad(c);
  c = base_config(4, 4, 1);
  c.rho = -1.0 - 1e-9;
  expect_bad(c);

  SimConfig edge = base_config(2, 2, 1);
  edge.rho = 1.0;
  edge.sigma_b = 0.0;
  CHECK_NOTHROW(edge.validate());
}

}  // TEST_SUITE
