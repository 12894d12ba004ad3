#pragma once

#include <Eigen/Core>
#include <vector>

namespace eirm {

struct Design;

namespace kernels {

// Flat, person-major view of the model rows. x is row-major so a single row's
// fixed-effect values are contiguous.
struct Rows {
  int n_rows = 0;
  int n_persons = 0;
  int n_items = 0;
  int p = 0;
  int item_dim = 0;  // 0 none, 1 intercept, 2 intercept+slope
  std::vector<double> x;      // n_rows * p, row-major
  std::vector<double> y;
  std::vector<double> treat;
  std::vector<int> item;
  std::vector<int> person_ptr;

  int q_items() const { return item_dim * n_items; }

  static Rows from_design(const Design& d);
};

// Random-effect scale parameters: person sd and the lower-triangular factor
// of the 2x2 item covariance. With item_dim==1 only l11 is used; with
// item_dim==0 none are.
struct Scales {
  double s_person = 0.0;
  double l11 = 0.0;
  double l21 = 0.0;
  double l22 = 0.0;
};

// Work partition. Chunk boundaries depend only on the data layout, never on
// the thread count, so parallel runs reduce partial results in a fixed order
// and reproduce the serial arithmetic bit for bit.
struct Chunks {
  std::vector<int> person_begin;  // per chunk
  std::vector<int> person_end;

  static Chunks make(const Rows& rows);
  int count() const { return static_cast<int>(person_begin.size()); }
};

// Per-chunk accumulation buffers, reused across calls to avoid reallocating
// in the inner loop of the fit.
struct ChunkBuffers {
  double dev = 0.0;
  Eigen::MatrixXd schur;
  Eigen::VectorXd rhs;
  std::vector<int> idx;  // scratch for the per-person elimination pattern
  std::vector<double> val;
  std::vector<double> cb;
};

struct Workspace {
  std::vector<ChunkBuffers> chunk;
  std::vector<double> partial;
};

// One Newton system for the penalized deviance, persons already eliminated.
// Layout of the reduced system: item coefficients first (item_dim per item),
// then optionally the fixed effects.
struct System {
  double deviance = 0.0;           // residual deviance + |u|^2 penalty
  Eigen::VectorXd person_diag;     // s^2 sum(w) + 1 per person
  Eigen::VectorXd person_grad;     // s sum(y-mu) - u_person
  Eigen::MatrixXd schur;           // reduced normal-equations matrix
  Eigen::VectorXd rhs;
  // Couplings needed to back-substitute the person step.
  std::vector<double> row_c1, row_c2;     // per row: s_person * w * (c1|c2)
  Eigen::MatrixXd person_beta;            // n_persons x p: s_person * sum(w x)
  double log_person_diag_sum = 0.0;       // sum log(person_diag)
};

// Penalized deviance at the given coefficients.
double penalized_deviance(const Rows& rows, const Chunks& chunks, const Scales& sc,
                          const double* beta, const double* u_person,
                          const double* u_item, double eta_cap, int n_threads,
                          Workspace& ws);

// Builds the eliminated Newton system at the given coefficients.
// with_beta extends the reduced block with the fixed-effect columns.
void assemble(const Rows& rows, const Chunks& chunks, const Scales& sc,
              const double* beta, const double* u_person, const double* u_item,
              bool with_beta, double eta_cap, int n_threads, Workspace& ws,
              System& out);

// Fitted probabilities for each row.
void fitted_probabilities(const Rows& rows, const Scales& sc, const double* beta,
                          const double* u_person, const double* u_item,
                          double eta_cap, std::vector<double>& mu);

}  // namespace kernels
}  // namespace eirm
