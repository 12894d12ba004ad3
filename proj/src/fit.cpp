#include "eirm/fit.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "eirm/errors.hpp"
#include "eirm/kernels.hpp"

namespace eirm {

namespace {

using kernels::Chunks;
using kernels::Rows;
using kernels::Scales;
using kernels::System;

constexpr double kInf = std::numeric_limits<double>::infinity();

Scales theta_scales(const Design& d, const std::vector<double>& theta) {
  const int dim = theta_dim(d);
  if (static_cast<int>(theta.size()) != dim) {
    throw ValueError("covariance parameter vector has length " +
                     std::to_string(theta.size()) + ", expected " + std::to_string(dim));
  }
  Scales sc;
  sc.s_person = theta[0];
  switch (d.item_structure) {
    case ItemStructure::FixedOffsets:
      break;
    case ItemStructure::RandomIntercept:
      sc.l11 = theta[1];
      break;
    case ItemStructure::RandomInterceptTreatmentSlope:
      sc.l11 = theta[1];
      if (d.correlation_free) {
        sc.l22 = theta[2];
      } else {
        sc.l21 = theta[2];
        sc.l22 = theta[3];
      }
      break;
  }
  if (sc.s_person < 0 || sc.l11 < 0 || sc.l22 < 0) {
    throw ValueError("scale parameters must be nonnegative");
  }
  return sc;
}

struct InnerResult {
  double pendev = 0.0;
  double logdet = 0.0;
  int iterations = 0;
  bool converged = false;
  double max_grad = 0.0;
};

// Damped Newton iteration on the penalized deviance at fixed scales. Updates
// (u_person, u_item) and, when with_beta, beta in place. The Newton system is
// solved by eliminating the person block first (it is diagonal), leaving a
// small dense system over item coefficients and fixed effects.
class Solver {
 public:
  Solver(const Rows& rows, const Chunks& chunks, double eta_cap, int n_threads)
      : rows_(rows), chunks_(chunks), eta_cap_(eta_cap), n_threads_(n_threads) {}

  InnerResult solve(const Scales& sc, Eigen::VectorXd& beta, Eigen::VectorXd& up,
                    Eigen::VectorXd& ui, bool with_beta, double rel_tol,
                    int max_iter) {
    const int p = static_cast<int>(beta.size());
    const int qi = rows_.q_items();
    const int np = rows_.n_persons;
    const int nred = qi + (with_beta ? p : 0);
    const int dim = rows_.item_dim;

    InnerResult res;
    double dev_prev = kInf;
    Eigen::VectorXd d_rest(nred), d_person(np);
    Eigen::VectorXd up_c(np), ui_c(qi), beta_c(p);
    bool sys_current = false;  // does sys_ describe the current coefficients?

    int it = 0;
    for (; it < max_iter; ++it) {
      kernels::assemble(rows_, chunks_, sc, beta.data(), up.data(), ui.data(),
                        with_beta, eta_cap_, n_threads_, ws_, sys_);
      sys_current = true;
      if (!std::isfinite(sys_.deviance)) {
        throw NumericError("non-finite penalized deviance at inner iteration " +
                           std::to_string(it));
      }
      if (std::abs(dev_prev - sys_.deviance) <
          rel_tol * (std::abs(sys_.deviance) + 1.0)) {
        res.converged = true;
        break;
      }
      dev_prev = sys_.deviance;

      if (nred > 0) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(sys_.schur);
        d_rest = ldlt.solve(sys_.rhs);
        if (!d_rest.allFinite()) {
          throw NumericError("non-finite update direction at inner iteration " +
                             std::to_string(it));
        }
      }
      for (int j = 0; j < np; ++j) {
        double dot = 0.0;
        if (dim > 0) {
          for (int r = rows_.person_ptr[static_cast<std::size_t>(j)];
               r < rows_.person_ptr[static_cast<std::size_t>(j) + 1]; ++r) {
            const int a = dim * rows_.item[static_cast<std::size_t>(r)];
            dot += sys_.row_c1[static_cast<std::size_t>(r)] * d_rest(a);
            if (dim == 2) dot += sys_.row_c2[static_cast<std::size_t>(r)] * d_rest(a + 1);
          }
        }
        if (with_beta && p > 0) dot += sys_.person_beta.row(j).dot(d_rest.tail(p));
        d_person(j) = (sys_.person_grad(j) - dot) / sys_.person_diag(j);
      }

      bool accepted = false;
      double step = 1.0;
      for (int h = 0; h < 25; ++h, step *= 0.5) {
        up_c = up + step * d_person;
        if (qi > 0) ui_c = ui + step * d_rest.head(qi);
        if (with_beta && p > 0) beta_c = beta + step * d_rest.tail(p);
        else beta_c = beta;
        const double cand = kernels::penalized_deviance(
            rows_, chunks_, sc, beta_c.data(), up_c.data(), ui_c.data(), eta_cap_,
            n_threads_, ws_);
        if (std::isfinite(cand) &&
            cand <= dev_prev + 1e-13 * (std::abs(dev_prev) + 1.0)) {
          up.swap(up_c);
          if (qi > 0) ui.swap(ui_c);
          if (with_beta && p > 0) beta.swap(beta_c);
          accepted = true;
          sys_current = false;
          break;
        }
      }
      if (!accepted) {
        // No descent direction at float precision: already at the optimum.
        res.converged = true;
        ++it;
        break;
      }
    }
    res.iterations = it;

    if (!sys_current) {
      kernels::assemble(rows_, chunks_, sc, beta.data(), up.data(), ui.data(),
                        with_beta, eta_cap_, n_threads_, ws_, sys_);
    }
    res.pendev = sys_.deviance;
    res.logdet = sys_.log_person_diag_sum;
    if (qi > 0) {
      Eigen::LLT<Eigen::MatrixXd> llt(sys_.schur.topLeftCorner(qi, qi));
      if (llt.info() != Eigen::Success) {
        throw NumericError("random-effect system lost positive definiteness");
      }
      for (int a = 0; a < qi; ++a) res.logdet += 2.0 * std::log(llt.matrixL()(a, a));
    }
    double g = sys_.person_grad.size() > 0 ? sys_.person_grad.cwiseAbs().maxCoeff() : 0.0;
    if (sys_.rhs.size() > 0) g = std::max(g, sys_.rhs.cwiseAbs().maxCoeff());
    res.max_grad = g;
    return res;
  }

  const System& system() const { return sys_; }
  kernels::Workspace& workspace() { return ws_; }

 private:
  const Rows& rows_;
  const Chunks& chunks_;
  double eta_cap_;
  int n_threads_;
  System sys_;
  kernels::Workspace ws_;
};

struct Snapshot {
  std::vector<double> theta;
  double f = kInf;
  Eigen::VectorXd beta, up, ui;
};

// One model fit: owns the warm-started coefficient state and the outer
// derivative-free search over the covariance parameters.
class Fitter {
 public:
  Fitter(const Design& d, const FitOptions& opts)
      : d_(d),
        opts_(opts),
        rows_(Rows::from_design(d)),
        chunks_(Chunks::make(rows_)),
        solver_(rows_, chunks_, opts.eta_cap, opts.n_threads),
        dim_(theta_dim(d)),
        lb_(theta_lower_bounds(d)),
        p_(d.p()),
        qi_(rows_.q_items()),
        beta_(Eigen::VectorXd::Zero(d.p())),
        up_(Eigen::VectorXd::Zero(d.n_persons)),
        ui_(Eigen::VectorXd::Zero(rows_.q_items())) {}

  // The outer objective. With exact=false beta comes from the joint solve
  // only; exact=true additionally re-optimizes beta against the full Laplace
  // objective. The search phase runs on the cheap version, the refinement
  // phase on the exact one; both values agree to the accuracy of the joint
  // profile, and the refinement always re-anchors before comparing.
  double eval(std::vector<double> theta, bool exact) {
    for (int k = 0; k < dim_; ++k) theta[k] = std::max(theta[k], lb_[k]);
    ++n_eval_;
    double f;
    try {
      const Scales sc = theta_scales(d_, theta);
      InnerResult joint = solver_.solve(sc, beta_, up_, ui_, true,
                                        opts_.pirls_rel_tol, opts_.pirls_max_iter);
      pirls_iters_ += joint.iterations;
      f = joint.pendev + joint.logdet;
      if (exact && opts_.exact_profile) f = polish_beta(sc);
    } catch (const NumericError&) {
      beta_.setZero();
      up_.setZero();
      ui_.setZero();
      return kInf;
    }
    if (f < best_.f) {
      best_.f = f;
      best_.theta = theta;
      best_.beta = beta_;
      best_.up = up_;
      best_.ui = ui_;
    }
    return f;
  }

  // Re-optimizes beta against the full Laplace objective at fixed scales:
  // finite-difference gradient, Newton direction from the eliminated system.
  double polish_beta(const Scales& sc) {
    auto prof = [&](const Eigen::VectorXd& b) {
      Eigen::VectorXd bc = b;
      InnerResult r = solver_.solve(sc, bc, up_, ui_, false, opts_.fd_inner_tol,
                                    2 * opts_.pirls_max_iter);
      pirls_iters_ += r.iterations;
      return r.pendev + r.logdet;
    };

    double f = prof(beta_);
    Eigen::VectorXd grad(p_), bt;
    for (int newton = 0; newton < 30; ++newton) {
      for (int k = 0; k < p_; ++k) {
        const double h = 1e-5 * std::max(1.0, std::abs(beta_(k)));
        bt = beta_;
        bt(k) = beta_(k) + h;
        const double fp = prof(bt);
        bt(k) = beta_(k) - h;
        const double fm = prof(bt);
        grad(k) = (fp - fm) / (2.0 * h);
      }
      prof(beta_);  // leave the modes consistent with the centre point
      kernels::assemble(rows_, chunks_, sc, beta_.data(), up_.data(), ui_.data(),
                        true, opts_.eta_cap, opts_.n_threads, solver_.workspace(),
                        scratch_);
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(qi_ + p_);
      rhs.tail(p_) = grad;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(scratch_.schur);
      // The eliminated system carries half the deviance curvature, hence 0.5.
      const Eigen::VectorXd db = -0.5 * ldlt.solve(rhs).tail(p_);
      if (!db.allFinite()) break;

      bool accepted = false;
      double step = 1.0;
      for (int h = 0; h < 12; ++h, step *= 0.5) {
        bt = beta_ + step * db;
        const double cand = prof(bt);
        if (cand <= f - 1e-12 * (std::abs(f) + 1.0)) {
          beta_ = bt;
          const double drop = f - cand;
          f = cand;
          accepted = drop > 1e-9 * (std::abs(f) + 1.0);
          break;
        }
      }
      if (!accepted) break;
    }
    prof(beta_);  // leave the warm state at the accepted point
    return f;
  }

  struct OuterInfo {
    bool by_tol = false;
    int evals = 0;
  };

  OuterInfo nelder_mead(const std::vector<double>& x0, int max_eval) {
    const int n = dim_;
    std::vector<std::vector<double>> vx;
    std::vector<double> vf;
    vx.push_back(x0);
    for (int k = 0; k < n; ++k) {
      std::vector<double> xk = x0;
      xk[k] += (std::abs(x0[k]) > 1e-8) ? 0.15 * std::abs(x0[k]) : 0.1;
      vx.push_back(std::move(xk));
    }
    for (auto& x : vx) vf.push_back(eval(x, false));
    int evals = n + 1;

    std::vector<int> ord(static_cast<std::size_t>(n) + 1);
    OuterInfo info;
    double prev_best = kInf;
    int stalled = 0;
    while (evals < max_eval) {
      std::iota(ord.begin(), ord.end(), 0);
      std::stable_sort(ord.begin(), ord.end(),
                       [&](int a, int b) { return vf[static_cast<std::size_t>(a)] <
                                                  vf[static_cast<std::size_t>(b)]; });
      const int ib = ord.front(), iw = ord.back(), is = ord[static_cast<std::size_t>(n) - 1];
      // Stop once a full iteration no longer improves the best value (twice in
      // a row, to ride out plateaus) or the simplex has collapsed.
      const double fb = vf[static_cast<std::size_t>(ib)];
      stalled = (prev_best - fb < opts_.outer_tol) ? stalled + 1 : 0;
      prev_best = fb;
      if (stalled >= 2 ||
          vf[static_cast<std::size_t>(iw)] - fb < opts_.outer_tol) {
        info.by_tol = true;
        break;
      }

      std::vector<double> centroid(static_cast<std::size_t>(n), 0.0);
      for (int v = 0; v <= n; ++v) {
        if (ord[static_cast<std::size_t>(v)] == iw) continue;
        for (int k = 0; k < n; ++k) {
          centroid[static_cast<std::size_t>(k)] +=
              vx[static_cast<std::size_t>(ord[static_cast<std::size_t>(v)])]
                [static_cast<std::size_t>(k)] / n;
        }
      }
      auto blend = [&](double coef) {
        std::vector<double> x(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k) {
          x[static_cast<std::size_t>(k)] =
              centroid[static_cast<std::size_t>(k)] +
              coef * (centroid[static_cast<std::size_t>(k)] -
                      vx[static_cast<std::size_t>(iw)][static_cast<std::size_t>(k)]);
        }
        return x;
      };

      std::vector<double> xr = blend(1.0);
      const double fr = eval(xr, false);
      ++evals;
      if (fr < vf[static_cast<std::size_t>(ib)]) {
        std::vector<double> xe = blend(2.0);
        const double fe = eval(xe, false);
        ++evals;
        if (fe < fr) {
          vx[static_cast<std::size_t>(iw)] = std::move(xe);
          vf[static_cast<std::size_t>(iw)] = fe;
        } else {
          vx[static_cast<std::size_t>(iw)] = std::move(xr);
          vf[static_cast<std::size_t>(iw)] = fr;
        }
        continue;
      }
      if (fr < vf[static_cast<std::size_t>(is)]) {
        vx[static_cast<std::size_t>(iw)] = std::move(xr);
        vf[static_cast<std::size_t>(iw)] = fr;
        continue;
      }
      const bool outside = fr < vf[static_cast<std::size_t>(iw)];
      std::vector<double> xc = blend(outside ? 0.5 : -0.5);
      const double fc = eval(xc, false);
      ++evals;
      if (fc < (outside ? fr : vf[static_cast<std::size_t>(iw)])) {
        vx[static_cast<std::size_t>(iw)] = std::move(xc);
        vf[static_cast<std::size_t>(iw)] = fc;
        continue;
      }
      for (int v = 0; v <= n; ++v) {
        if (ord[static_cast<std::size_t>(v)] == ib) continue;
        auto& x = vx[static_cast<std::size_t>(ord[static_cast<std::size_t>(v)])];
        const auto& xb = vx[static_cast<std::size_t>(ib)];
        for (int k = 0; k < n; ++k) {
          x[static_cast<std::size_t>(k)] =
              xb[static_cast<std::size_t>(k)] +
              0.5 * (x[static_cast<std::size_t>(k)] - xb[static_cast<std::size_t>(k)]);
        }
        vf[static_cast<std::size_t>(ord[static_cast<std::size_t>(v)])] = eval(x, false);
        ++evals;
      }
    }
    info.evals = evals;
    return info;
  }

  // Deterministic local refinement of the best point: fit a parabola along
  // each coordinate at shrinking step sizes and move to its minimum.
  void coordinate_polish() {
    restore();
    // Replace the search-phase value of the incumbent with its exact value so
    // the refinement never compares across the two objective variants.
    if (best_.f < kInf) {
      const Snapshot saved = best_;
      best_.f = kInf;
      if (!(eval(saved.theta, true) < kInf)) best_ = saved;
    }
    for (double h_rel : {1e-2, 1e-3, 1e-4}) {
      for (int sweep = 0; sweep < 4; ++sweep) {
        bool improved = false;
        for (int k = 0; k < dim_; ++k) {
          const std::vector<double> t0 = best_.theta;
          const double f0 = best_.f;
          const double h = h_rel * (1.0 + std::abs(t0[static_cast<std::size_t>(k)]));
          std::vector<double> t = t0;

          const bool boundary =
              t0[static_cast<std::size_t>(k)] - h < lb_[static_cast<std::size_t>(k)];
          double x1, x2, f1, f2;
          if (boundary) {
            x1 = t0[static_cast<std::size_t>(k)] + h;
            x2 = t0[static_cast<std::size_t>(k)] + 2.0 * h;
          } else {
            x1 = t0[static_cast<std::size_t>(k)] - h;
            x2 = t0[static_cast<std::size_t>(k)] + h;
          }
          t[static_cast<std::size_t>(k)] = x1;
          f1 = eval(t, true);
          t[static_cast<std::size_t>(k)] = x2;
          f2 = eval(t, true);

          // Vertex of the parabola through the three evaluated points.
          const double xa = t0[static_cast<std::size_t>(k)];
          const double d1 = (f1 - f0) / (x1 - xa);
          const double d2 = (f2 - f0) / (x2 - xa);
          const double curv = (d2 - d1) / (x2 - x1);
          if (std::isfinite(curv) && curv > 0) {
            double v = 0.5 * ((xa + x1) - d1 / curv);
            v = std::clamp(v, xa - 5.0 * h, xa + 5.0 * h);
            v = std::max(v, lb_[static_cast<std::size_t>(k)]);
            t[static_cast<std::size_t>(k)] = v;
            eval(t, true);
          }
          if (best_.f < f0 - 1e-12 * (std::abs(f0) + 1.0)) improved = true;
        }
        if (!improved) break;
        restore();
      }
      restore();
    }
  }

  OuterInfo optimize(const std::vector<std::vector<double>>& starts) {
    OuterInfo agg;
    const int max_eval = opts_.outer_max_eval * std::max(1, dim_);
    for (const auto& s : starts) {
      beta_.setZero();
      up_.setZero();
      ui_.setZero();
      OuterInfo run = nelder_mead(s, max_eval);
      agg.by_tol = agg.by_tol || run.by_tol;
      agg.evals += run.evals;
    }
    coordinate_polish();
    restore();
    return agg;
  }

  void restore() {
    if (best_.f < kInf) {
      beta_ = best_.beta;
      up_ = best_.up;
      ui_ = best_.ui;
    }
  }

  // Central-difference Hessian of the Laplace objective in beta at fixed
  // scales, each evaluation restarted from the supplied modes so that the
  // inner solve cannot smear curvature across stencil points.
  Eigen::MatrixXd fd_beta_cov(const std::vector<double>& theta,
                              const Eigen::VectorXd& beta_hat,
                              const Eigen::VectorXd& up0, const Eigen::VectorXd& ui0,
                              std::vector<std::string>& messages) {
    const Scales sc = theta_scales(d_, theta);
    auto prof = [&](const Eigen::VectorXd& b) {
      Eigen::VectorXd bc = b;
      Eigen::VectorXd up = up0, ui = ui0;
      InnerResult r = solver_.solve(sc, bc, up, ui, false, opts_.fd_inner_tol,
                                    2 * opts_.pirls_max_iter);
      pirls_iters_ += r.iterations;
      return r.pendev + r.logdet;
    };

    Eigen::VectorXd h(p_);
    for (int k = 0; k < p_; ++k) {
      h(k) = opts_.fd_step_scale * std::max(1.0, std::abs(beta_hat(k)));
    }
    const double f0 = prof(beta_hat);
    Eigen::MatrixXd H(p_, p_);
    Eigen::VectorXd b = beta_hat;
    for (int k = 0; k < p_; ++k) {
      b(k) = beta_hat(k) + h(k);
      const double fp = prof(b);
      b(k) = beta_hat(k) - h(k);
      const double fm = prof(b);
      b(k) = beta_hat(k);
      H(k, k) = (fp - 2.0 * f0 + fm) / (h(k) * h(k));
      for (int l = k + 1; l < p_; ++l) {
        b(k) = beta_hat(k) + h(k);
        b(l) = beta_hat(l) + h(l);
        const double fpp = prof(b);
        b(l) = beta_hat(l) - h(l);
        const double fpm = prof(b);
        b(k) = beta_hat(k) - h(k);
        const double fmm = prof(b);
        b(l) = beta_hat(l) + h(l);
        const double fmp = prof(b);
        b(k) = beta_hat(k);
        b(l) = beta_hat(l);
        H(k, l) = H(l, k) = (fpp - fpm - fmp + fmm) / (4.0 * h(k) * h(l));
      }
    }

    // The objective is -2 log L, so the covariance is 2 H^{-1}.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
    Eigen::VectorXd ev = es.eigenvalues();
    const double floor = 1e-10 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    bool clamped = false;
    for (int k = 0; k < p_; ++k) {
      if (ev(k) < floor) {
        ev(k) = floor;
        clamped = true;
      }
    }
    if (clamped) {
      messages.push_back(
          "fixed-effect information was not positive definite; "
          "small eigenvalues were floored");
    }
    Eigen::MatrixXd cov = 2.0 * es.eigenvectors() * ev.cwiseInverse().asDiagonal() *
                          es.eigenvectors().transpose();
    return 0.5 * (cov + cov.transpose());
  }

  const Snapshot& best() const { return best_; }
  int evals() const { return n_eval_; }
  int pirls_iters() const { return pirls_iters_; }

 private:
  const Design& d_;
  FitOptions opts_;
  Rows rows_;
  Chunks chunks_;
  Solver solver_;
  int dim_;
  std::vector<double> lb_;
  int p_;
  int qi_;
  Eigen::VectorXd beta_, up_, ui_;
  Snapshot best_;
  System scratch_;
  int n_eval_ = 0;
  int pirls_iters_ = 0;
};

std::vector<std::vector<double>> base_starts(const Design& d) {
  const std::vector<double> s0 = default_theta_start(d);
  std::vector<std::vector<double>> starts;
  for (double scale : {1.0, 0.5, 2.0}) {
    std::vector<double> s = s0;
    for (double& v : s) v *= scale;
    starts.push_back(std::move(s));
  }
  return starts;
}

// Covariance parameters of the intercept-only restriction, padded with zero
// slope entries, as an extra starting point for a slope fit. Guarantees the
// slope model never lands above its own restriction.
std::vector<double> restricted_start(const ResponseTable& table, const ModelSpec& spec,
                                     const FitOptions& opts) {
  ModelSpec rspec = spec;
  rspec.item_structure = ItemStructure::RandomIntercept;
  Design rd = build_design(table, rspec);
  FitOptions ropts = opts;
  ropts.extra_starts.clear();
  Fitter rf(rd, ropts);
  rf.optimize(base_starts(rd));
  std::vector<double> th = rf.best().theta;  // [s_person, l11]
  th.push_back(0.0);
  if (!spec.correlation_free) th.push_back(0.0);
  return th;
}

}  // namespace

int theta_dim(const Design& d) {
  switch (d.item_structure) {
    case ItemStructure::FixedOffsets: return 1;
    case ItemStructure::RandomIntercept: return 2;
    case ItemStructure::RandomInterceptTreatmentSlope:
      return d.correlation_free ? 3 : 4;
  }
  return 0;
}

std::vector<double> theta_lower_bounds(const Design& d) {
  switch (d.item_structure) {
    case ItemStructure::FixedOffsets: return {0.0};
    case ItemStructure::RandomIntercept: return {0.0, 0.0};
    case ItemStructure::RandomInterceptTreatmentSlope:
      if (d.correlation_free) return {0.0, 0.0, 0.0};
      return {0.0, 0.0, -1e6, 0.0};
  }
  return {};
}

std::vector<double> default_theta_start(const Design& d) {
  switch (d.item_structure) {
    case ItemStructure::FixedOffsets: return {1.0};
    case ItemStructure::RandomIntercept: return {1.0, 1.0};
    case ItemStructure::RandomInterceptTreatmentSlope:
      if (d.correlation_free) return {1.0, 1.0, 0.5};
      return {1.0, 1.0, 0.0, 0.5};
  }
  return {};
}

PirlsResult pirls_conditional_modes(const Design& d, const Eigen::VectorXd& beta,
                                    const std::vector<double>& theta,
                                    const PirlsOptions& opts) {
  if (static_cast<int>(beta.size()) != d.p()) {
    throw ValueError("coefficient vector has length " + std::to_string(beta.size()) +
                     ", expected " + std::to_string(d.p()));
  }
  const Scales sc = theta_scales(d, theta);
  Rows rows = Rows::from_design(d);
  Chunks chunks = Chunks::make(rows);
  Solver solver(rows, chunks, opts.eta_cap, opts.n_threads);

  PirlsResult res;
  res.u_person = Eigen::VectorXd::Zero(d.n_persons);
  res.u_item = Eigen::VectorXd::Zero(rows.q_items());
  Eigen::VectorXd b = beta;
  InnerResult r = solver.solve(sc, b, res.u_person, res.u_item, false, opts.rel_tol,
                               opts.max_iter);
  res.penalized_deviance = r.pendev;
  res.logdet = r.logdet;
  res.iterations = r.iterations;
  res.converged = r.converged;
  res.max_grad = r.max_grad;
  return res;
}

double laplace_m2ll(const Design& d, const Eigen::VectorXd& beta,
                    const std::vector<double>& theta, const PirlsOptions& opts) {
  PirlsResult r = pirls_conditional_modes(d, beta, theta, opts);
  return r.penalized_deviance + r.logdet;
}

double FitResult::beta(FixedTerm term) const {
  const auto idx = term_index(term);
  if (!idx) throw ModelSpecError("model has no such fixed term");
  return beta_hat(*idx);
}

double FitResult::beta_se(FixedTerm term) const {
  const auto idx = term_index(term);
  if (!idx) throw ModelSpecError("model has no such fixed term");
  return std::sqrt(std::max(0.0, beta_cov(*idx, *idx)));
}

std::optional<int> FitResult::term_index(FixedTerm term) const {
  for (std::size_t k = 0; k < spec.fixed_terms.size(); ++k) {
    if (spec.fixed_terms[k] == term) return static_cast<int>(k);
  }
  return std::nullopt;
}

FitResult fit(const ResponseTable& table, const ModelSpec& spec,
              const FitOptions& opts) {
  spec.validate();
  Design d = build_design(table, spec);
  if (spec.has_term(FixedTerm::Treatment) || spec.item_slope()) {
    bool any_t = false, any_c = false;
    for (double t : d.person_treatment) (t > 0.5 ? any_t : any_c) = true;
    if (!any_t || !any_c) {
      throw ValueError("both treatment groups must be nonempty");
    }
  }

  std::vector<std::vector<double>> starts = base_starts(d);
  if (spec.item_slope() && opts.nested_prestart) {
    starts.push_back(restricted_start(table, spec, opts));
  }
  for (const auto& s : opts.extra_starts) {
    if (static_cast<int>(s.size()) != theta_dim(d)) {
      throw ValueError("extra starting point has the wrong number of parameters");
    }
    starts.push_back(s);
  }

  Fitter F(d, opts);
  Fitter::OuterInfo outer = F.optimize(starts);
  if (!(F.best().f < kInf)) {
    throw NumericError("every outer evaluation failed; data may be degenerate");
  }

  FitResult fr;
  fr.spec = spec;
  fr.beta_names = d.colnames;
  fr.theta_hat = F.best().theta;
  fr.beta_hat = F.best().beta;
  fr.person_ids = d.person_ids;
  fr.item_ids = d.item_ids;
  fr.separation_notes = d.separation_notes;
  fr.table_hash = d.table_hash;
  fr.n_persons = d.n_persons;
  fr.n_items = d.n_items;
  fr.n_rows = d.n_rows();

  // Final cold-start mode solve at the optimum; this is the pass that
  // re-running pirls_conditional_modes reproduces exactly.
  PirlsOptions popts{opts.pirls_rel_tol, opts.pirls_max_iter, opts.eta_cap,
                     opts.n_threads};
  PirlsResult eb = pirls_conditional_modes(d, fr.beta_hat, fr.theta_hat, popts);
  fr.m2ll = eb.penalized_deviance + eb.logdet;
  fr.loglik = -0.5 * fr.m2ll;
  fr.u_person_raw = eb.u_person;
  fr.u_item_raw = eb.u_item;

  const Scales sc = theta_scales(d, fr.theta_hat);
  fr.sigma_theta_hat = sc.s_person;
  fr.sigma_b_hat = sc.l11;
  fr.sigma_zeta_hat = std::hypot(sc.l21, sc.l22);
  fr.rho_hat = fr.sigma_zeta_hat > 1e-12 ? sc.l21 / fr.sigma_zeta_hat : 0.0;
  fr.rho_hat = std::clamp(fr.rho_hat, -1.0, 1.0);

  fr.eb_person = sc.s_person * eb.u_person;
  fr.eb_item_b = Eigen::VectorXd::Zero(d.n_items);
  fr.eb_item_zeta = Eigen::VectorXd::Zero(d.n_items);
  const int dim = d.item_dim();
  for (int i = 0; i < d.n_items; ++i) {
    if (dim == 1) {
      fr.eb_item_b(i) = sc.l11 * eb.u_item(i);
    } else if (dim == 2) {
      fr.eb_item_b(i) = sc.l11 * eb.u_item(2 * i);
      fr.eb_item_zeta(i) = sc.l21 * eb.u_item(2 * i) + sc.l22 * eb.u_item(2 * i + 1);
    }
  }

  fr.convergence.outer_evaluations = F.evals();
  fr.convergence.grad_norm = eb.max_grad;
  fr.convergence.pirls_final_iterations = eb.iterations;
  fr.convergence.converged = outer.by_tol && eb.converged;
  fr.convergence.messages = d.separation_notes;
  if (!outer.by_tol) {
    fr.convergence.messages.push_back("outer search stopped at the evaluation cap");
  }
  if (!eb.converged) {
    fr.convergence.messages.push_back("final mode solve hit the iteration cap");
  }
  if (spec.item_slope() && fr.sigma_zeta_hat < 1e-4) {
    fr.convergence.messages.push_back(
        "item treatment-slope variance estimated at the boundary");
  }

  fr.beta_cov = F.fd_beta_cov(fr.theta_hat, fr.beta_hat, eb.u_person, eb.u_item,
                              fr.convergence.messages);
  fr.convergence.pirls_total_iterations = F.pirls_iters() + eb.iterations;
  return fr;
}

std::vector<EbItemRecord> empirical_bayes_item_effects(const FitResult& fr) {
  if (!fr.spec.item_slope()) {
    throw ModelSpecError(
        "item-level effects need a model with an item treatment slope");
  }
  const double b1 = fr.beta(FixedTerm::Treatment);
  std::vector<EbItemRecord> out;
  out.reserve(fr.item_ids.size());
  for (std::size_t i = 0; i < fr.item_ids.size(); ++i) {
    const double zeta = fr.eb_item_zeta(static_cast<int>(i));
    out.push_back({fr.item_ids[i], fr.eb_item_b(static_cast<int>(i)), zeta, b1 + zeta});
  }
  return out;
}

LrtResult lrt_ilhte(const FitResult& null_fit, const FitResult& alt_fit) {
  if (!null_fit.spec.is_slope_restriction_of(alt_fit.spec)) {
    throw ModelSpecError(
        "null model must be the random-intercept restriction of the alternative");
  }
  if (null_fit.table_hash != alt_fit.table_hash) {
    throw ConsistencyError("both fits must come from the same data");
  }
  LrtResult r;
  const double diff = null_fit.m2ll - alt_fit.m2ll;
  r.clamped = diff < 0.0;
  r.deviance_diff = std::max(0.0, diff);
  r.df = 2;
  r.p_raw = std::exp(-0.5 * r.deviance_diff);  // chi-square survival at 2 df
  r.p_boundary = 0.5 * r.p_raw;
  return r;
}

}  // namespace eirm
