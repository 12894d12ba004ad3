#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <doctest.h>

#include "eirm/design.hpp"
#include "eirm/fit.hpp"
#include "eirm/kernels.hpp"
#include "eirm/rng.hpp"
#include "eirm/sim.hpp"
#include "eirm/util.hpp"
#include "helpers.hpp"
#include "oracle_agq.hpp"

using namespace eirm;
using eirm::testing::make_table;

namespace {

kernels::Scales scales_from_theta(const Design& d, const std::vector<double>& th) {
  kernels::Scales sc;
  sc.s_person = th[0];
  if (d.item_dim() >= 1) sc.l11 = th[1];
  if (d.item_dim() == 2) {
    if (d.correlation_free) {
      sc.l22 = th[2];
    } else {
      sc.l21 = th[2];
      sc.l22 = th[3];
    }
  }
  return sc;
}

// Dense u-scale random-effect design M = Z * Lambda, built from z_row and the
// scale factors only. Shares nothing with the kernel's eta accumulation.
Eigen::MatrixXd dense_m(const Design& d, const kernels::Scales& sc) {
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(d.n_rows(), d.z_cols());
  for (int r = 0; r < d.n_rows(); ++r) {
    for (const auto& [col, v] : d.z_row(r)) z(r, col) = v;
  }
  Eigen::MatrixXd lam = Eigen::MatrixXd::Zero(d.z_cols(), d.z_cols());
  for (int j = 0; j < d.n_persons; ++j) lam(j, j) = sc.s_person;
  for (int i = 0; i < d.n_items; ++i) {
    if (d.item_dim() == 1) {
      const int c = d.n_persons + i;
      lam(c, c) = sc.l11;
    } else if (d.item_dim() == 2) {
      const int c = d.n_persons + 2 * i;
      lam(c, c) = sc.l11;
      lam(c + 1, c) = sc.l21;
      lam(c + 1, c + 1) = sc.l22;
    }
  }
  return z * lam;
}

}  // namespace

TEST_SUITE("pirls") {

TEST_CASE("zero variance pins the modes at zero and the fitted curve at beta") {
  const ResponseTable t = make_table({{"p1", "i1", 0, 0},
                                      {"p1", "i2", 0, 0},
                                      {"p2", "i1", 0, 1},
                                      {"p2", "i2", 0, 1}});
  const Design d = build_design(t, ModelSpec::equation(1));
  Eigen::VectorXd beta(2);
  beta << -1.0, 0.3;
  const PirlsResult pr = pirls_conditional_modes(d, beta, {0.0, 0.0});
  CHECK(pr.converged);
  for (int j = 0; j < pr.u_person.size(); ++j) CHECK(pr.u_person(j) == 0.0);
  for (int i = 0; i < pr.u_item.size(); ++i) CHECK(pr.u_item(i) == 0.0);
  CHECK(pr.logdet == doctest::Approx(0.0).epsilon(1e-14));

  const kernels::Rows rows = kernels::Rows::from_design(d);
  const kernels::Scales sc = scales_from_theta(d, {0.0, 0.0});
  std::vector<double> mu;
  kernels::fitted_probabilities(rows, sc, beta.data(), pr.u_person.data(),
                                pr.u_item.data(), 30.0, mu);
  for (int r = 0; r < d.n_rows(); ++r) {
    const double eta = beta(0) + beta(1) * d.row_treat[static_cast<std::size_t>(r)];
    CHECK(mu[static_cast<std::size_t>(r)] ==
          doctest::Approx(inv_logit(eta)).epsilon(1e-14));
  }
}

TEST_CASE("balanced responses put every conditional mode at zero") {
  const ResponseTable t = make_table({{"p1", "i1", 1, 0},
                                      {"p1", "i2", 0, 0},
                                      {"p2", "i1", 0, 0},
                                      {"p2", "i2", 1, 0}});
  ModelSpec s;  // intercept only
  const Design d = build_design(t, s);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(1);
  const PirlsResult pr = pirls_conditional_modes(d, beta, {0.8, 0.6});
  CHECK(pr.converged);
  CHECK(pr.max_grad < 1e-10);
  for (int j = 0; j < pr.u_person.size(); ++j) {
    CHECK(std::abs(pr.u_person(j)) < 1e-10);
  }
  for (int i = 0; i < pr.u_item.size(); ++i) {
    CHECK(std::abs(pr.u_item(i)) < 1e-10);
  }
}

TEST_CASE("modes minimize the penalized deviance against random competitors") {
  SimConfig cfg;
  cfg.n_persons = 30;
  cfg.n_items = 6;
  cfg.beta1 = 0.5;
  cfg.sigma_zeta = 0.4;
  cfg.rho = 0.3;
  cfg.seed = 7;
  const SimResult sim = simulate_dataset(cfg);
  const Design d = build_design(sim.table, ModelSpec::equation(3));

  const std::vector<double> theta = {0.9, 0.7, 0.2, 0.5};
  Eigen::VectorXd beta(3);
  beta << -0.2, 0.4, 0.1;
  const PirlsResult pr = pirls_conditional_modes(d, beta, theta);
  REQUIRE(pr.converged);

  const kernels::Rows rows = kernels::Rows::from_design(d);
  const kernels::Chunks chunks = kernels::Chunks::make(rows);
  const kernels::Scales sc = scales_from_theta(d, theta);
  kernels::Workspace ws;

  const double pd_at_modes = kernels::penalized_deviance(
      rows, chunks, sc, beta.data(), pr.u_person.data(), pr.u_item.data(), 30.0,
      1, ws);
  CHECK(pd_at_modes == doctest::Approx(pr.penalized_deviance).epsilon(1e-12));

  Rng rng(99);
  std::vector<double> up(static_cast<std::size_t>(d.n_persons));
  std::vector<double> ui(static_cast<std::size_t>(d.q_items()));
  for (int rep = 0; rep < 100; ++rep) {
    for (int j = 0; j < d.n_persons; ++j) {
      up[static_cast<std::size_t>(j)] = pr.u_person(j) + 0.05 * rng.normal();
    }
    for (int a = 0; a < d.q_items(); ++a) {
      ui[static_cast<std::size_t>(a)] = pr.u_item(a) + 0.05 * rng.normal();
    }
    const double pd = kernels::penalized_deviance(rows, chunks, sc, beta.data(),
                                                  up.data(), ui.data(), 30.0, 1, ws);
    CHECK(pd >= pd_at_modes - 1e-9);
  }
}

TEST_CASE("deviance and log determinant match a dense-matrix reconstruction") {
  SimConfig cfg;
  cfg.n_persons = 25;
  cfg.n_items = 5;
  cfg.beta1 = 0.4;
  cfg.sigma_zeta = 0.5;
  cfg.rho = -0.4;
  cfg.seed = 21;
  const SimResult sim = simulate_dataset(cfg);

  for (int model : {1, 3}) {
    const Design d = build_design(sim.table, ModelSpec::equation(model));
    std::vector<double> theta;
    Eigen::VectorXd beta;
    if (model == 1) {
      theta = {0.8, 0.6};
      beta = Eigen::VectorXd::Zero(2);
      beta << -0.3, 0.5;
    } else {
      theta = {0.8, 0.6, -0.25, 0.45};
      beta = Eigen::VectorXd::Zero(3);
      beta << -0.3, 0.5, 0.2;
    }
    const PirlsResult pr = pirls_conditional_modes(d, beta, theta);
    REQUIRE(pr.converged);

    const kernels::Scales sc = scales_from_theta(d, theta);
    const Eigen::MatrixXd m = dense_m(d, sc);
    Eigen::VectorXd u(d.z_cols());
    u.head(d.n_persons) = pr.u_person;
    u.tail(d.q_items()) = pr.u_item;

    const Eigen::VectorXd eta = d.X * beta + m * u;
    double pd = u.squaredNorm();
    Eigen::VectorXd w(d.n_rows());
    for (int r = 0; r < d.n_rows(); ++r) {
      pd += 2.0 * (log1pexp(eta(r)) - d.y(r) * eta(r));
      const double mu = inv_logit(eta(r));
      w(r) = mu * (1.0 - mu);
    }
    CHECK(pd == doctest::Approx(pr.penalized_deviance).epsilon(1e-10));

    Eigen::MatrixXd h = m.transpose() * w.asDiagonal() * m;
    h.diagonal().array() += 1.0;
    const Eigen::MatrixXd l = Eigen::LLT<Eigen::MatrixXd>(h).matrixL();
    double logdet = 0.0;
    for (int k = 0; k < l.rows(); ++k) logdet += 2.0 * std::log(l(k, k));
    CHECK(logdet == doctest::Approx(pr.logdet).epsilon(1e-8));

    CHECK(laplace_m2ll(d, beta, theta) ==
          doctest::Approx(pd + logdet).epsilon(1e-8));
  }
}

TEST_CASE("vanishing variances reduce the laplace objective to plain logistic") {
  SimConfig cfg;
  cfg.n_persons = 20;
  cfg.n_items = 4;
  cfg.seed = 3;
  const SimResult sim = simulate_dataset(cfg);

  ModelSpec offsets = ModelSpec::equation(1);
  offsets.item_structure = ItemStructure::FixedOffsets;
  for (const ModelSpec& spec : {ModelSpec::equation(1), offsets}) {
    const Design d = build_design(sim.table, spec);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(d.p());
    beta(0) = -0.4;
    beta(1) = 0.6;
    std::vector<double> theta(static_cast<std::size_t>(theta_dim(d)), 0.0);

    double plain = 0.0;
    const Eigen::VectorXd eta = d.X * beta;
    for (int r = 0; r < d.n_rows(); ++r) {
      plain += 2.0 * (log1pexp(eta(r)) - d.y(r) * eta(r));
    }
    CHECK(laplace_m2ll(d, beta, theta) == doctest::Approx(plain).epsilon(1e-6));
  }
}

TEST_CASE("independent persons contribute additively to the objective") {
  SimConfig cfg;
  cfg.n_persons = 6;
  cfg.n_items = 4;
  cfg.seed = 17;
  const SimResult sim = simulate_dataset(cfg);

  // Duplicate every person under a fresh id, keeping responses and treatment.
  ResponseTable::Builder b = sim.table.to_builder();
  const int np = static_cast<int>(b.person_ids.size());
  const std::size_t nrow = b.row_person.size();
  for (int j = 0; j < np; ++j) {
    b.person_ids.push_back(b.person_ids[static_cast<std::size_t>(j)] + "_copy");
    b.treatment.push_back(b.treatment[static_cast<std::size_t>(j)]);
    if (b.covariate) b.covariate->push_back((*b.covariate)[static_cast<std::size_t>(j)]);
  }
  for (std::size_t r = 0; r < nrow; ++r) {
    b.row_person.push_back(b.row_person[r] + np);
    b.row_item.push_back(b.row_item[r]);
    b.row_score.push_back(b.row_score[r]);
  }
  const ResponseTable doubled = b.build();

  ModelSpec spec = ModelSpec::equation(1);
  spec.item_structure = ItemStructure::FixedOffsets;
  const Design d1 = build_design(sim.table, spec);
  const Design d2 = build_design(doubled, spec);
  REQUIRE(d2.n_persons == 2 * d1.n_persons);

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d1.p());
  beta(0) = 0.2;
  beta(1) = -0.5;
  for (int k = 2; k < d1.p(); ++k) beta(k) = 0.3 * (k - 2) - 0.4;
  const std::vector<double> theta = {0.8};
  const double one = laplace_m2ll(d1, beta, theta);
  const double two = laplace_m2ll(d2, beta, theta);
  CHECK(two == doctest::Approx(2.0 * one).epsilon(1e-6));
}

TEST_CASE("laplace tracks 41-node quadrature on a small offsets model") {
  SimConfig cfg;
  cfg.n_persons = 5;
  cfg.n_items = 3;
  cfg.beta1 = 0.8;
  cfg.seed = 5;
  const SimResult sim = simulate_dataset(cfg);
  ModelSpec spec = ModelSpec::equation(1);
  spec.item_structure = ItemStructure::FixedOffsets;
  const Design d = build_design(sim.table, spec);

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d.p());
  beta(0) = -0.2;
  beta(1) = 0.8;
  beta(2) = 0.4;
  beta(3) = -0.6;
  std::vector<double> bvec(beta.data(), beta.data() + beta.size());
  for (double sigma : {0.3, 0.8, 1.5}) {
    const double lap = laplace_m2ll(d, beta, {sigma});
    const double agq = oracle::agq_m2ll(d, bvec, sigma, 41);
    CHECK(std::abs(lap - agq) < 0.5);
  }
}

TEST_CASE("reported modes reproduce bitwise from a cold restart") {
  SimConfig cfg;
  cfg.n_persons = 60;
  cfg.n_items = 8;
  cfg.beta1 = 0.4;
  cfg.seed = 13;
  const SimResult sim = simulate_dataset(cfg);
  const FitResult fr = fit(sim.table, ModelSpec::equation(1));
  REQUIRE(fr.convergence.converged);

  const Design d = build_design(sim.table, ModelSpec::equation(1));
  const PirlsResult pr = pirls_conditional_modes(d, fr.beta_hat, fr.theta_hat);
  REQUIRE(pr.u_person.size() == fr.u_person_raw.size());
  REQUIRE(pr.u_item.size() == fr.u_item_raw.size());
  CHECK(std::memcmp(pr.u_person.data(), fr.u_person_raw.data(),
                    sizeof(double) * static_cast<std::size_t>(pr.u_person.size())) == 0);
  CHECK(std::memcmp(pr.u_item.data(), fr.u_item_raw.data(),
                    sizeof(double) * static_cast<std::size_t>(pr.u_item.size())) == 0);
}

}  // TEST_SUITE
