#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "eirm/design.hpp"
#include "eirm/model.hpp"
#include "eirm/table.hpp"

namespace eirm {

// Covariance parameter vector layout, by item structure:
//   fixed offsets            [s_person]
//   random intercept         [s_person, l11]
//   intercept + slope, rho=0 [s_person, l11, l22]
//   intercept + slope        [s_person, l11, l21, l22]
// s_person scales the person intercepts; (l11, l21, l22) is the lower Cholesky
// factor of the 2x2 item covariance. All entries except l21 are kept >= 0;
// l22 >= 0 pins the sign that the likelihood cannot identify.
int theta_dim(const Design& d);
std::vector<double> theta_lower_bounds(const Design& d);
std::vector<double> default_theta_start(const Design& d);

struct PirlsOptions {
  double rel_tol = 1e-8;
  int max_iter = 200;
  double eta_cap = 30.0;
  int n_threads = 1;
};

struct PirlsResult {
  Eigen::VectorXd u_person;
  Eigen::VectorXd u_item;  // interleaved (intercept, slope) per item when 2-d
  double penalized_deviance = 0.0;
  double logdet = 0.0;  // log det of the weighted penalized random-effect system
  int iterations = 0;
  bool converged = false;
  double max_grad = 0.0;
};

// Conditional modes of the random effects at fixed (beta, theta), from a cold
// start, by damped Newton steps on the penalized deviance.
PirlsResult pirls_conditional_modes(const Design& d, const Eigen::VectorXd& beta,
                                    const std::vector<double>& theta,
                                    const PirlsOptions& opts = {});

// -2 * Laplace log-likelihood: penalized deviance at the modes plus the
// log-determinant correction.
double laplace_m2ll(const Design& d, const Eigen::VectorXd& beta,
                    const std::vector<double>& theta, const PirlsOptions& opts = {});

struct FitOptions {
  double pirls_rel_tol = 1e-8;
  int pirls_max_iter = 200;
  double outer_tol = 1e-6;      // simplex function-value spread at termination
  int outer_max_eval = 600;     // per start, scaled by dimension
  double eta_cap = 30.0;
  int n_threads = 1;
  // When true, each outer evaluation re-optimizes beta against the full
  // Laplace objective (including the log-determinant term). When false, beta
  // comes from the joint penalized-likelihood solve only, which is cheaper and
  // differs by a term that is negligible at survey scale.
  bool exact_profile = true;
  double fd_step_scale = 1e-4;  // covariance step: fd_step_scale * max(1, |beta|)
  double fd_inner_tol = 1e-12;  // inner solve tolerance for difference quotients
  bool nested_prestart = true;  // seed slope fits from the intercept-only optimum
  std::vector<std::vector<double>> extra_starts;
};

struct Convergence {
  bool converged = false;
  int outer_evaluations = 0;
  double grad_norm = 0.0;  // max abs penalized-score entry at the solution
  int pirls_total_iterations = 0;
  int pirls_final_iterations = 0;
  std::vector<std::string> messages;
};

struct FitResult {
  ModelSpec spec;
  std::vector<std::string> beta_names;
  Eigen::VectorXd beta_hat;
  Eigen::MatrixXd beta_cov;
  double sigma_b_hat = 0.0;      // item intercept sd
  double sigma_zeta_hat = 0.0;   // item treatment-slope sd
  double rho_hat = 0.0;          // intercept/slope correlation
  double sigma_theta_hat = 0.0;  // person sd
  std::vector<double> theta_hat;
  double m2ll = 0.0;
  double loglik = 0.0;

  // Conditional modes on the outcome scale, canonical (id-sorted) order.
  std::vector<std::string> person_ids;
  std::vector<std::string> item_ids;
  Eigen::VectorXd eb_person;     // sigma_theta * mode
  Eigen::VectorXd eb_item_b;     // intercept deviation per item
  Eigen::VectorXd eb_item_zeta;  // slope deviation per item (zero without slopes)
  Eigen::VectorXd u_person_raw;  // spherical modes, for exact reproduction checks
  Eigen::VectorXd u_item_raw;

  Convergence convergence;
  std::vector<std::string> separation_notes;
  std::uint64_t table_hash = 0;
  int n_persons = 0;
  int n_items = 0;
  int n_rows = 0;

  double beta(FixedTerm term) const;     // throws if the term is absent
  double beta_se(FixedTerm term) const;  // sqrt of the matching diagonal entry
  std::optional<int> term_index(FixedTerm term) const;
};

FitResult fit(const ResponseTable& table, const ModelSpec& spec,
              const FitOptions& opts = {});

struct EbItemRecord {
  std::string item_id;
  double b;
  double zeta;
  double total_effect;  // overall treatment coefficient plus this item's deviation
};

std::vector<EbItemRecord> empirical_bayes_item_effects(const FitResult& fr);

struct LrtResult {
  double deviance_diff = 0.0;
  int df = 2;
  double p_raw = 1.0;
  double p_boundary = 0.5;
  bool clamped = false;  // alt likelihood fell below null and was clamped
};

// Boundary-corrected likelihood-ratio test of the item treatment-slope
// variance: the halved p-value accounts for the null lying on the edge of the
// parameter space.
LrtResult lrt_ilhte(const FitResult& null_fit, const FitResult& alt_fit);

}  // namespace eirm
