#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <doctest.h>
#include <numeric>

#include "eirm/design.hpp"
#include "eirm/errors.hpp"
#include "eirm/fit.hpp"
#include "eirm/kernels.hpp"
#include "eirm/sim.hpp"
#include "helpers.hpp"

using namespace eirm;

namespace {

// Shared dataset for the reference-value and optimality checks: 200 persons,
// 10 items, a generating model with a correlated item treatment slope.
const SimResult& gold_data() {
  static const SimResult sim = [] {
    SimConfig cfg;
    cfg.n_persons = 200;
    cfg.n_items = 10;
    cfg.beta1 = 0.3;
    cfg.beta2 = 0.5;
    cfg.sigma_zeta = 0.5;
    cfg.rho = 0.3;
    cfg.seed = 13;
    return simulate_dataset(cfg);
  }();
  return sim;
}

const FitResult& gold_m2() {
  static const FitResult fr = fit(gold_data().table, ModelSpec::equation(2));
  return fr;
}

const FitResult& gold_m3() {
  static const FitResult fr = fit(gold_data().table, ModelSpec::equation(3));
  return fr;
}

std::vector<double> rank_vector(const std::vector<double>& v) {
  std::vector<int> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&v](int a, int b) {
    return v[static_cast<std::size_t>(a)] < v[static_cast<std::size_t>(b)];
  });
  std::vector<double> r(v.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    r[static_cast<std::size_t>(idx[k])] = static_cast<double>(k);
  }
  return r;
}

}  // namespace

TEST_SUITE("fit") {

// Reference values computed by a separate implementation of the same
// marginal likelihood (independent optimizer, quadrature-checked) on the
// identical dataset. Point estimates agree to ~1e-6 between the two
// implementations; the tolerances below leave two orders of magnitude of
// headroom. Standard errors use different finite-difference schemes, hence
// the wider band.
TEST_CASE("estimates reproduce independently computed reference values") {
  const FitResult& m2 = gold_m2();
  REQUIRE(m2.convergence.converged);
  CHECK_NEAR(m2.beta_hat(0), 0.27665835, 1e-4);
  CHECK_NEAR(m2.beta_hat(1), 0.37479639, 1e-4);
  CHECK_NEAR(m2.beta_hat(2), 0.42432963, 1e-4);
  CHECK_NEAR(std::sqrt(m2.beta_cov(0, 0)), 0.24060708, 4e-3);
  CHECK_NEAR(std::sqrt(m2.beta_cov(1, 1)), 0.16343116, 4e-3);
  CHECK_NEAR(std::sqrt(m2.beta_cov(2, 2)), 0.07924689, 4e-3);
  CHECK_NEAR(m2.sigma_theta_hat, 0.90579995, 1e-4);
  CHECK_NEAR(m2.sigma_b_hat, 0.66836501, 1e-4);
  CHECK(m2.sigma_zeta_hat == 0.0);
  CHECK_NEAR(m2.m2ll, 2432.67571203, 1e-4);

  const FitResult& m3 = gold_m3();
  REQUIRE(m3.convergence.converged);
  CHECK_NEAR(m3.beta_hat(0), 0.28088032, 1e-4);
  CHECK_NEAR(m3.beta_hat(1), 0.38163882, 1e-4);
  CHECK_NEAR(m3.beta_hat(2), 0.42954863, 1e-4);
  CHECK_NEAR(std::sqrt(m3.beta_cov(0, 0)), 0.24182760, 4e-3);
  CHECK_NEAR(std::sqrt(m3.beta_cov(1, 1)), 0.21566046, 4e-3);
  CHECK_NEAR(std::sqrt(m3.beta_cov(2, 2)), 0.08021231, 4e-3);
  CHECK_NEAR(m3.sigma_theta_hat, 0.92134085, 1e-4);
  CHECK_NEAR(m3.sigma_b_hat, 0.67052496, 1e-4);
  CHECK_NEAR(m3.sigma_zeta_hat, 0.43636548, 1e-4);
  CHECK_NEAR(m3.rho_hat, -0.14584906, 1e-4);
  CHECK_NEAR(m3.m2ll, 2425.22285819, 1e-4);

  // The slope model widens the treatment standard error, as it must when
  // the effect varies by item.
  CHECK(std::sqrt(m3.beta_cov(1, 1)) > std::sqrt(m2.beta_cov(1, 1)));
}

TEST_CASE("term accessors index the estimate vector correctly") {
  const FitResult& m3 = gold_m3();
  CHECK(m3.beta(FixedTerm::Intercept) == m3.beta_hat(0));
  CHECK(m3.beta(FixedTerm::Treatment) == m3.beta_hat(1));
  CHECK(m3.beta(FixedTerm::Covariate) == m3.beta_hat(2));
  CHECK(m3.beta_se(FixedTerm::Treatment) ==
        doctest::Approx(std::sqrt(m3.beta_cov(1, 1))));
  CHECK(m3.term_index(FixedTerm::TreatmentXCovariate) == std::nullopt);
  CHECK_THROWS_AS(m3.beta(FixedTerm::TreatmentXCovariate), ModelSpecError);
  CHECK(m3.beta_names ==
        std::vector<std::string>{"intercept", "treatment", "covariate"});
  CHECK(m3.loglik == doctest::Approx(-0.5 * m3.m2ll));
}

TEST_CASE("finite differences confirm a stationary point") {
  const FitResult& m3 = gold_m3();
  const Design d = build_design(gold_data().table, ModelSpec::equation(3));
  const double h = 1e-3;
  for (int k = 0; k < m3.beta_hat.size(); ++k) {
    Eigen::VectorXd bp = m3.beta_hat, bm = m3.beta_hat;
    bp(k) += h;
    bm(k) -= h;
    const double g = (laplace_m2ll(d, bp, m3.theta_hat) -
                      laplace_m2ll(d, bm, m3.theta_hat)) / (2 * h);
    CHECK(std::abs(g) < 0.01);
  }
  for (std::size_t k = 0; k < m3.theta_hat.size(); ++k) {
    auto tp = m3.theta_hat, tm = m3.theta_hat;
    tp[k] += h;
    tm[k] -= h;
    const double g = (laplace_m2ll(d, m3.beta_hat, tp) -
                      laplace_m2ll(d, m3.beta_hat, tm)) / (2 * h);
    CHECK(std::abs(g) < 0.01);
  }
}

TEST_CASE("estimates are invariant to person and item relabeling") {
  const FitResult& m3 = gold_m3();
  ResponseTable::Builder b = gold_data().table.to_builder();
  for (auto& id : b.person_ids) {
    id = "q" + std::string(id.rbegin(), id.rend());
  }
  for (auto& id : b.item_ids) {
    id = "z" + std::string(id.rbegin(), id.rend());
  }
  const FitResult rel = fit(b.build(), ModelSpec::equation(3));
  for (int k = 0; k < m3.beta_hat.size(); ++k) {
    CHECK_NEAR(rel.beta_hat(k), m3.beta_hat(k), 1e-8);
    CHECK_NEAR(std::sqrt(rel.beta_cov(k, k)), std::sqrt(m3.beta_cov(k, k)), 1e-5);
  }
  CHECK_NEAR(rel.sigma_zeta_hat, m3.sigma_zeta_hat, 1e-8);
  CHECK_NEAR(rel.rho_hat, m3.rho_hat, 1e-8);
  CHECK_NEAR(rel.m2ll, m3.m2ll, 1e-8);

  // Conditional modes follow their ids through the relabeling.
  for (std::size_t j = 0; j < m3.person_ids.size(); ++j) {
    const std::string& old_id = m3.person_ids[j];
    const std::string new_id = "q" + std::string(old_id.rbegin(), old_id.rend());
    const auto it = std::find(rel.person_ids.begin(), rel.person_ids.end(), new_id);
    REQUIRE(it != rel.person_ids.end());
    const auto jj = static_cast<int>(it - rel.person_ids.begin());
    CHECK_NEAR(rel.eb_person(jj), m3.eb_person(static_cast<int>(j)), 1e-8);
  }
}

TEST_CASE("reported covariance is symmetric, positive, and matches the hessian") {
  const FitResult& m3 = gold_m3();
  const Eigen::MatrixXd& c = m3.beta_cov;
  CHECK((c - c.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
  CHECK(es.eigenvalues().minCoeff() > 0.0);

  // Independent route to the same quantity: assemble the person-eliminated
  // normal equations at the optimum with the fixed-effect block attached and
  // invert. The weights are held at the conditional modes, so this is the
  // conditional observed information; it should track the finite-difference
  // covariance closely but not exactly.
  const Design d = build_design(gold_data().table, ModelSpec::equation(3));
  const PirlsResult pr = pirls_conditional_modes(d, m3.beta_hat, m3.theta_hat);
  kernels::Rows rows = kernels::Rows::from_design(d);
  kernels::Chunks chunks = kernels::Chunks::make(rows);
  kernels::Scales sc;
  sc.s_person = m3.theta_hat[0];
  sc.l11 = m3.theta_hat[1];
  sc.l21 = m3.theta_hat[2];
  sc.l22 = m3.theta_hat[3];
  kernels::Workspace ws;
  kernels::System sys;
  kernels::assemble(rows, chunks, sc, m3.beta_hat.data(), pr.u_person.data(),
                    pr.u_item.data(), true, 30.0, 1, ws, sys);
  const int qi = rows.q_items();
  const Eigen::MatrixXd inv = sys.schur.inverse();
  for (int k = 0; k < d.p(); ++k) {
    const double ratio = std::sqrt(inv(qi + k, qi + k)) / std::sqrt(c(k, k));
    CHECK(ratio > 0.9);
    CHECK(ratio < 1.1);
  }
}

TEST_CASE("mirrored treatment assignment zeroes the treatment effect") {
  SimConfig cfg;
  cfg.n_persons = 120;
  cfg.n_items = 8;
  cfg.beta1 = 0.6;
  cfg.seed = 31;
  const SimResult s = simulate_dataset(cfg);

  // Append a flipped copy of every person: same responses, opposite arm.
  // The combined likelihood is invariant under swapping the arms, so the
  // unique optimum must put the treatment coefficient at exactly zero.
  ResponseTable::Builder b = s.table.to_builder();
  const int np = static_cast<int>(b.person_ids.size());
  const std::size_t nr = b.row_person.size();
  for (int j = 0; j < np; ++j) {
    b.person_ids.push_back(b.person_ids[static_cast<std::size_t>(j)] + "_m");
    b.treatment.push_back(1.0 - b.treatment[static_cast<std::size_t>(j)]);
    if (b.covariate) {
      b.covariate->push_back((*b.covariate)[static_cast<std::size_t>(j)]);
    }
  }
  for (std::size_t r = 0; r < nr; ++r) {
    b.row_person.push_back(b.row_person[r] + np);
    b.row_item.push_back(b.row_item[r]);
    b.row_score.push_back(b.row_score[r]);
  }
  const FitResult fr = fit(b.build(), ModelSpec::equation(1));
  REQUIRE(fr.convergence.converged);
  CHECK(std::abs(fr.beta(FixedTerm::Treatment)) < 1e-6);
  CHECK(std::abs(fr.beta(FixedTerm::Treatment)) <
        2.0 * fr.beta_se(FixedTerm::Treatment));
}

TEST_CASE("slope variance collapses on data generated without slopes") {
  SimConfig cfg;
  cfg.n_persons = 250;
  cfg.n_items = 10;
  cfg.beta1 = 0.4;
  cfg.beta2 = 0.5;
  cfg.sigma_zeta = 0.0;
  cfg.seed = 29;
  const SimResult s = simulate_dataset(cfg);
  const FitResult f2 = fit(s.table, ModelSpec::equation(2));
  const FitResult f3 = fit(s.table, ModelSpec::equation(3));
  REQUIRE(f2.convergence.converged);
  REQUIRE(f3.convergence.converged);

  CHECK(f3.sigma_zeta_hat < 0.2);
  CHECK(std::abs(f3.beta(FixedTerm::Treatment) - f2.beta(FixedTerm::Treatment)) < 0.02);
  CHECK(f3.m2ll <= f2.m2ll + 1e-4);

  const LrtResult lr = lrt_ilhte(f2, f3);
  CHECK(lr.p_boundary > 0.1);  // no spurious slope detection
}

TEST_CASE("slope models never fit worse than their restrictions") {
  CHECK(gold_m3().m2ll <= gold_m2().m2ll + 1e-4);

  SimConfig cfg;
  cfg.n_persons = 200;
  cfg.n_items = 8;
  cfg.beta1 = 0.3;
  cfg.beta2 = 0.5;
  cfg.beta3 = 0.3;
  cfg.sigma_zeta = 0.4;
  cfg.seed = 41;
  const SimResult s = simulate_dataset(cfg);
  const FitResult f4 = fit(s.table, ModelSpec::equation(4));
  const FitResult f5 = fit(s.table, ModelSpec::equation(5));
  REQUIRE(f4.convergence.converged);
  REQUIRE(f5.convergence.converged);
  CHECK(f5.m2ll <= f4.m2ll + 1e-4);
}

TEST_CASE("item slope modes track the generating slopes on a large bank") {
  SimConfig cfg;
  cfg.n_persons = 1500;
  cfg.n_items = 20;
  cfg.beta1 = 0.3;
  cfg.beta2 = 0.5;
  cfg.sigma_zeta = 0.5;
  cfg.seed = 57;
  const SimResult s = simulate_dataset(cfg);
  const FitResult f3 = fit(s.table, ModelSpec::equation(3));
  REQUIRE(f3.convergence.converged);
  CHECK(std::abs(f3.beta(FixedTerm::Treatment) - cfg.beta1) <
        3.0 * f3.beta_se(FixedTerm::Treatment));
  CHECK(std::abs(f3.sigma_zeta_hat - cfg.sigma_zeta) < 0.1);

  std::vector<double> zh(f3.eb_item_zeta.data(),
                         f3.eb_item_zeta.data() + f3.eb_item_zeta.size());
  const auto ra = rank_vector(s.truth.item_zeta);
  const auto rb = rank_vector(zh);
  const double n = static_cast<double>(ra.size());
  double d2 = 0.0;
  for (std::size_t k = 0; k < ra.size(); ++k) {
    d2 += (ra[k] - rb[k]) * (ra[k] - rb[k]);
  }
  const double spearman = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
  CHECK(spearman > 0.8);
}

TEST_CASE("per-item effect records decompose the overall coefficient") {
  const FitResult& m3 = gold_m3();
  const auto recs = empirical_bayes_item_effects(m3);
  REQUIRE(recs.size() == m3.item_ids.size());
  const double b1 = m3.beta(FixedTerm::Treatment);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(recs[i].item_id == m3.item_ids[i]);
    CHECK(recs[i].b == m3.eb_item_b(static_cast<int>(i)));
    CHECK(recs[i].zeta == m3.eb_item_zeta(static_cast<int>(i)));
    CHECK(recs[i].total_effect == b1 + recs[i].zeta);
  }
  CHECK_THROWS_AS(empirical_bayes_item_effects(gold_m2()), ModelSpecError);
}

TEST_CASE("conditional mode families are roughly centered") {
  const FitResult& m3 = gold_m3();
  CHECK(std::abs(m3.eb_person.mean()) < 0.05 * m3.sigma_theta_hat);
  CHECK(std::abs(m3.eb_item_b.mean()) < 0.15 * m3.sigma_b_hat);
  CHECK(std::abs(m3.eb_item_zeta.mean()) < 0.15 * m3.sigma_zeta_hat);
}

TEST_CASE("boundary-corrected slope test handles the edge cases") {
  auto stub = [](int model, double m2ll) {
    FitResult fr;
    fr.spec = ModelSpec::equation(model);
    fr.m2ll = m2ll;
    fr.table_hash = 0xfeed;
    return fr;
  };

  const LrtResult same = lrt_ilhte(stub(2, 1000.0), stub(3, 1000.0));
  CHECK(same.deviance_diff == 0.0);
  CHECK(same.df == 2);
  CHECK(same.p_raw == doctest::Approx(1.0));
  CHECK(same.p_boundary == doctest::Approx(0.5));
  CHECK_FALSE(same.clamped);

  // A deviance drop of 5.991465 sits at the raw 5% point with 2 degrees of
  // freedom; halving for the boundary gives 2.5%.
  const LrtResult crit = lrt_ilhte(stub(2, 1000.0), stub(3, 1000.0 - 5.991465));
  CHECK_NEAR(crit.p_raw, 0.05, 1e-6);
  CHECK_NEAR(crit.p_boundary, 0.025, 1e-6);

  const LrtResult clamped = lrt_ilhte(stub(2, 1000.0), stub(3, 1002.0));
  CHECK(clamped.clamped);
  CHECK(clamped.deviance_diff == 0.0);
  CHECK(clamped.p_raw == doctest::Approx(1.0));

  CHECK_THROWS_AS(lrt_ilhte(stub(2, 1000.0), stub(5, 999.0)), ModelSpecError);
  FitResult other = stub(3, 999.0);
  other.table_hash = 0xbeef;
  CHECK_THROWS_AS(lrt_ilhte(stub(2, 1000.0), other), ConsistencyError);

  // On the shared dataset the two reference fits give a deviance drop of
  // about 7.45, significant at the boundary-corrected 5% level.
  const LrtResult real = lrt_ilhte(gold_m2(), gold_m3());
  CHECK_NEAR(real.deviance_diff, 7.45285, 2e-3);
  CHECK(real.p_boundary ==
        doctest::Approx(0.5 * std::exp(-0.5 * real.deviance_diff)));
  CHECK(real.p_boundary < 0.05);
}

TEST_CASE("covariance parameter layout by item structure") {
  const ResponseTable t = eirm::testing::make_table(
      {{"p1", "i1", 1, 0}, {"p1", "i2", 0, 0},
       {"p2", "i1", 0, 1}, {"p2", "i2", 1, 1}},
      {{"p1", 0.0}, {"p2", 1.0}});

  const Design ri = build_design(t, ModelSpec::equation(2));
  CHECK(theta_dim(ri) == 2);
  CHECK(theta_lower_bounds(ri) == std::vector<double>{0.0, 0.0});

  const Design full = build_design(t, ModelSpec::equation(3));
  CHECK(theta_dim(full) == 4);
  CHECK(theta_lower_bounds(full)[2] < 0.0);  // cross term may be negative

  ModelSpec free = ModelSpec::equation(3);
  free.correlation_free = true;
  const Design cf = build_design(t, free);
  CHECK(theta_dim(cf) == 3);
  CHECK(theta_lower_bounds(cf) == std::vector<double>{0.0, 0.0, 0.0});

  ModelSpec off = ModelSpec::equation(1);
  off.item_structure = ItemStructure::FixedOffsets;
  const Design fo = build_design(t, off);
  CHECK(theta_dim(fo) == 1);
  CHECK(default_theta_start(fo).size() == 1);

  CHECK_THROWS_AS(laplace_m2ll(ri, Eigen::VectorXd::Zero(ri.p() + 1), {1.0, 1.0}),
                  ValueError);
  CHECK_THROWS_AS(laplace_m2ll(ri, Eigen::VectorXd::Zero(ri.p()), {1.0}),
                  ValueError);
}

}  // TEST_SUITE
