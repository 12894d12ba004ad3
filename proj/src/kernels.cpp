#include "eirm/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "eirm/design.hpp"
#include "eirm/errors.hpp"
#include "eirm/util.hpp"

namespace eirm {
namespace kernels {

Rows Rows::from_design(const Design& d) {
  Rows r;
  r.n_rows = d.n_rows();
  r.n_persons = d.n_persons;
  r.n_items = d.n_items;
  r.p = d.p();
  r.item_dim = d.item_dim();
  r.x.resize(static_cast<std::size_t>(r.n_rows) * static_cast<std::size_t>(r.p));
  for (int i = 0; i < r.n_rows; ++i) {
    for (int k = 0; k < r.p; ++k) {
      r.x[static_cast<std::size_t>(i) * static_cast<std::size_t>(r.p) +
          static_cast<std::size_t>(k)] = d.X(i, k);
    }
  }
  r.y.assign(d.y.data(), d.y.data() + d.y.size());
  r.treat = d.row_treat;
  r.item = d.row_item;
  r.person_ptr = d.person_ptr;
  return r;
}

Chunks Chunks::make(const Rows& rows) {
  // Partition depends only on the person count so that results do not vary
  // with the thread count.
  const int np = rows.n_persons;
  const int n_chunks = std::clamp(np / 8, 1, 16);
  const int step = (np + n_chunks - 1) / n_chunks;
  Chunks c;
  for (int b = 0; b < np; b += step) {
    c.person_begin.push_back(b);
    c.person_end.push_back(std::min(np, b + step));
  }
  return c;
}

namespace {

inline double clamp_eta(double eta, double cap) {
  return eta < -cap ? -cap : (eta > cap ? cap : eta);
}

// Accumulates one chunk of persons into local (schur, rhs, dev) and the global
// per-person/per-row arrays, which are person-partitioned and so race-free.
void accumulate_chunk(const Rows& rows, const Scales& sc, const double* beta,
                      const double* u_person, const double* u_item, bool with_beta,
                      double eta_cap, int j_begin, int j_end, ChunkBuffers& acc,
                      System& out) {
  const int p = rows.p;
  const int dim = rows.item_dim;
  const int qi = rows.q_items();
  const int nred = qi + (with_beta ? p : 0);

  acc.schur.setZero(nred, nred);
  acc.rhs.setZero(nred);
  acc.dev = 0.0;
  acc.cb.assign(static_cast<std::size_t>(p), 0.0);

  for (int j = j_begin; j < j_end; ++j) {
    const int r0 = rows.person_ptr[static_cast<std::size_t>(j)];
    const int r1 = rows.person_ptr[static_cast<std::size_t>(j) + 1];
    double wsum = 0.0;
    double rsum = 0.0;
    std::fill(acc.cb.begin(), acc.cb.end(), 0.0);
    acc.idx.clear();
    acc.val.clear();

    for (int r = r0; r < r1; ++r) {
      const auto rr = static_cast<std::size_t>(r);
      const double* xr = rows.x.data() + rr * static_cast<std::size_t>(p);
      const int i = rows.item[rr];
      const double t = rows.treat[rr];

      double c1 = 0.0, c2 = 0.0;
      double eta = sc.s_person * u_person[j];
      for (int k = 0; k < p; ++k) eta += xr[static_cast<std::size_t>(k)] * beta[k];
      if (dim == 1) {
        c1 = sc.l11;
        eta += c1 * u_item[i];
      } else if (dim == 2) {
        c1 = sc.l11 + t * sc.l21;
        c2 = t * sc.l22;
        eta += c1 * u_item[2 * i] + c2 * u_item[2 * i + 1];
      }
      eta = clamp_eta(eta, eta_cap);

      double le, mu;
      logistic_terms(eta, le, mu);
      const double w = mu * (1.0 - mu);
      const double res = rows.y[rr] - mu;
      acc.dev += 2.0 * (le - rows.y[rr] * eta);
      wsum += w;
      rsum += res;

      if (dim >= 1) {
        const int a = dim * i;
        acc.schur(a, a) += w * c1 * c1;
        acc.rhs(a) += c1 * res;
        out.row_c1[rr] = sc.s_person * w * c1;
        acc.idx.push_back(a);
        acc.val.push_back(out.row_c1[rr]);
        if (dim == 2) {
          acc.schur(a, a + 1) += w * c1 * c2;
          acc.schur(a + 1, a + 1) += w * c2 * c2;
          acc.rhs(a + 1) += c2 * res;
          out.row_c2[rr] = sc.s_person * w * c2;
          acc.idx.push_back(a + 1);
          acc.val.push_back(out.row_c2[rr]);
        }
        if (with_beta) {
          for (int k = 0; k < p; ++k) {
            const double xk = xr[static_cast<std::size_t>(k)];
            acc.schur(a, qi + k) += w * c1 * xk;
            if (dim == 2) acc.schur(a + 1, qi + k) += w * c2 * xk;
          }
        }
      }
      if (with_beta) {
        for (int k = 0; k < p; ++k) {
          const double xk = xr[static_cast<std::size_t>(k)];
          acc.rhs(qi + k) += xk * res;
          for (int l = k; l < p; ++l) {
            acc.schur(qi + k, qi + l) += w * xk * xr[static_cast<std::size_t>(l)];
          }
        }
      }
      for (int k = 0; k < p; ++k) {
        acc.cb[static_cast<std::size_t>(k)] +=
            sc.s_person * w * xr[static_cast<std::size_t>(k)];
      }
    }

    const double diag = sc.s_person * sc.s_person * wsum + 1.0;
    const double grad = sc.s_person * rsum - u_person[j];
    out.person_diag(j) = diag;
    out.person_grad(j) = grad;
    for (int k = 0; k < p; ++k) {
      out.person_beta(j, k) = acc.cb[static_cast<std::size_t>(k)];
    }

    // Eliminate this person: rank-1 downdate of the reduced system on the
    // person's sparsity pattern (their items, then the dense beta columns).
    if (with_beta) {
      for (int k = 0; k < p; ++k) {
        acc.idx.push_back(qi + k);
        acc.val.push_back(acc.cb[static_cast<std::size_t>(k)]);
      }
    }
    const double inv_diag = 1.0 / diag;
    const double grad_scaled = grad * inv_diag;
    for (std::size_t a = 0; a < acc.idx.size(); ++a) {
      const double va = acc.val[a] * inv_diag;
      acc.rhs(acc.idx[a]) -= acc.val[a] * grad_scaled;
      for (std::size_t b = a; b < acc.idx.size(); ++b) {
        acc.schur(acc.idx[a], acc.idx[b]) -= va * acc.val[b];
      }
    }
  }
}

}  // namespace

void assemble(const Rows& rows, const Chunks& chunks, const Scales& sc,
              const double* beta, const double* u_person, const double* u_item,
              bool with_beta, double eta_cap, int n_threads, Workspace& ws,
              System& out) {
  const int qi = rows.q_items();
  const int nred = qi + (with_beta ? rows.p : 0);
  const int nc = chunks.count();

  out.person_diag.resize(rows.n_persons);
  out.person_grad.resize(rows.n_persons);
  out.person_beta.resize(rows.n_persons, rows.p);
  out.row_c1.resize(static_cast<std::size_t>(rows.n_rows));
  out.row_c2.resize(static_cast<std::size_t>(rows.n_rows));
  ws.chunk.resize(static_cast<std::size_t>(nc));

#ifdef EIRM_HAVE_OPENMP
#pragma omp parallel for schedule(static) num_threads(n_threads) if (n_threads > 1)
#endif
  for (int c = 0; c < nc; ++c) {
    accumulate_chunk(rows, sc, beta, u_person, u_item, with_beta, eta_cap,
                     chunks.person_begin[static_cast<std::size_t>(c)],
                     chunks.person_end[static_cast<std::size_t>(c)],
                     ws.chunk[static_cast<std::size_t>(c)], out);
  }
#ifndef EIRM_HAVE_OPENMP
  (void)n_threads;
#endif

  // Fixed-order reduction: identical arithmetic for any thread count.
  out.schur.setZero(nred, nred);
  out.rhs.setZero(nred);
  double dev = 0.0;
  for (int c = 0; c < nc; ++c) {
    out.schur += ws.chunk[static_cast<std::size_t>(c)].schur;
    out.rhs += ws.chunk[static_cast<std::size_t>(c)].rhs;
    dev += ws.chunk[static_cast<std::size_t>(c)].dev;
  }
  for (int a = 0; a < qi; ++a) out.schur(a, a) += 1.0;
  for (int a = 0; a < qi; ++a) out.rhs(a) -= u_item[a];
  for (int a = 0; a < nred; ++a) {
    for (int b = a + 1; b < nred; ++b) out.schur(b, a) = out.schur(a, b);
  }

  for (int j = 0; j < rows.n_persons; ++j) {
    dev += u_person[j] * u_person[j];
  }
  for (int a = 0; a < qi; ++a) dev += u_item[a] * u_item[a];
  out.deviance = dev;

  double lg = 0.0;
  for (int j = 0; j < rows.n_persons; ++j) lg += std::log(out.person_diag(j));
  out.log_person_diag_sum = lg;
}

double penalized_deviance(const Rows& rows, const Chunks& chunks, const Scales& sc,
                          const double* beta, const double* u_person,
                          const double* u_item, double eta_cap, int n_threads,
                          Workspace& ws) {
  const int nc = chunks.count();
  const int p = rows.p;
  const int dim = rows.item_dim;
  ws.partial.assign(static_cast<std::size_t>(nc), 0.0);

#ifdef EIRM_HAVE_OPENMP
#pragma omp parallel for schedule(static) num_threads(n_threads) if (n_threads > 1)
#endif
  for (int c = 0; c < nc; ++c) {
    double dev = 0.0;
    for (int j = chunks.person_begin[static_cast<std::size_t>(c)];
         j < chunks.person_end[static_cast<std::size_t>(c)]; ++j) {
      for (int r = rows.person_ptr[static_cast<std::size_t>(j)];
           r < rows.person_ptr[static_cast<std::size_t>(j) + 1]; ++r) {
        const auto rr = static_cast<std::size_t>(r);
        const double* xr = rows.x.data() + rr * static_cast<std::size_t>(p);
        double eta = sc.s_person * u_person[j];
        for (int k = 0; k < p; ++k) eta += xr[static_cast<std::size_t>(k)] * beta[k];
        const int i = rows.item[rr];
        if (dim == 1) {
          eta += sc.l11 * u_item[i];
        } else if (dim == 2) {
          const double t = rows.treat[rr];
          eta += (sc.l11 + t * sc.l21) * u_item[2 * i] + t * sc.l22 * u_item[2 * i + 1];
        }
        eta = clamp_eta(eta, eta_cap);
        double le, mu;
        logistic_terms(eta, le, mu);
        dev += 2.0 * (le - rows.y[rr] * eta);
      }
    }
    ws.partial[static_cast<std::size_t>(c)] = dev;
  }
#ifndef EIRM_HAVE_OPENMP
  (void)n_threads;
#endif

  double dev = 0.0;
  for (int c = 0; c < nc; ++c) dev += ws.partial[static_cast<std::size_t>(c)];
  for (int j = 0; j < rows.n_persons; ++j) dev += u_person[j] * u_person[j];
  for (int a = 0; a < rows.q_items(); ++a) dev += u_item[a] * u_item[a];
  return dev;
}

void fitted_probabilities(const Rows& rows, const Scales& sc, const double* beta,
                          const double* u_person, const double* u_item,
                          double eta_cap, std::vector<double>& mu) {
  mu.resize(static_cast<std::size_t>(rows.n_rows));
  const int p = rows.p;
  const int dim = rows.item_dim;
  for (int j = 0; j < rows.n_persons; ++j) {
    for (int r = rows.person_ptr[static_cast<std::size_t>(j)];
         r < rows.person_ptr[static_cast<std::size_t>(j) + 1]; ++r) {
      const auto rr = static_cast<std::size_t>(r);
      const double* xr = rows.x.data() + rr * static_cast<std::size_t>(p);
      double eta = sc.s_person * u_person[j];
      for (int k = 0; k < p; ++k) eta += xr[static_cast<std::size_t>(k)] * beta[k];
      const int i = rows.item[rr];
      if (dim == 1) {
        eta += sc.l11 * u_item[i];
      } else if (dim == 2) {
        const double t = rows.treat[rr];
        eta += (sc.l11 + t * sc.l21) * u_item[2 * i] + t * sc.l22 * u_item[2 * i + 1];
      }
      mu[rr] = inv_logit(clamp_eta(eta, eta_cap));
    }
  }
}

}  // namespace kernels
}  // namespace eirm
