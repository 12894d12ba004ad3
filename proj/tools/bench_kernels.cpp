// Timing harness for the evaluation kernels: runs the penalized deviance and
// the system assembly serially and with OpenMP threads, checks that the
// results agree bit for bit, and reports throughput. Not a registered test;
// build and run it by hand when touching the kernels.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "eirm/design.hpp"
#include "eirm/fit.hpp"
#include "eirm/kernels.hpp"
#include "eirm/rng.hpp"
#include "eirm/sim.hpp"

using namespace eirm;

namespace {

double now() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}

struct BenchCase {
  int n_persons;
  int n_items;
};

}  // namespace

int main(int argc, char** argv) {
  int max_threads = 4;
  if (argc > 1) max_threads = std::atoi(argv[1]);

  const BenchCase cases[] = {{500, 20}, {2000, 20}, {5000, 40}};
  for (const auto& bc : cases) {
    SimConfig cfg;
    cfg.n_persons = bc.n_persons;
    cfg.n_items = bc.n_items;
    cfg.beta1 = 0.3;
    cfg.beta2 = 0.5;
    cfg.sigma_b = 1.0;
    cfg.sigma_zeta = 0.4;
    cfg.rho = 0.3;
    cfg.seed = 99;
    SimResult sim = simulate_dataset(cfg);
    Design d = build_design(sim.table, ModelSpec::equation(3));
    kernels::Rows rows = kernels::Rows::from_design(d);
    kernels::Chunks chunks = kernels::Chunks::make(rows);

    kernels::Scales sc{1.0, 0.8, 0.1, 0.3};
    Rng rng(7);
    std::vector<double> beta(static_cast<std::size_t>(rows.p));
    for (auto& v : beta) v = 0.2 * rng.normal();
    std::vector<double> up(static_cast<std::size_t>(rows.n_persons));
    for (auto& v : up) v = rng.normal();
    std::vector<double> ui(static_cast<std::size_t>(rows.q_items()));
    for (auto& v : ui) v = rng.normal();

    std::printf("---- %d persons x %d items (%d rows, %d chunks)\n",
                bc.n_persons, bc.n_items, rows.n_rows, chunks.count());

    const int reps = 20;
    double dev_ref = 0.0;
    kernels::System sys_ref;
    for (int threads = 1; threads <= max_threads; threads *= 2) {
      kernels::Workspace ws;
      double dev = 0.0;
      double t0 = now();
      for (int r = 0; r < reps; ++r) {
        dev = kernels::penalized_deviance(rows, chunks, sc, beta.data(),
                                          up.data(), ui.data(), 30.0, threads,
                                          ws);
      }
      const double t_dev = (now() - t0) / reps;

      kernels::System sys;
      t0 = now();
      for (int r = 0; r < reps; ++r) {
        kernels::assemble(rows, chunks, sc, beta.data(), up.data(), ui.data(),
                          true, 30.0, threads, ws, sys);
      }
      const double t_asm = (now() - t0) / reps;

      bool exact = true;
      if (threads == 1) {
        dev_ref = dev;
        sys_ref = sys;
      } else {
        exact = std::memcmp(&dev, &dev_ref, sizeof dev) == 0 &&
                sys.schur.rows() == sys_ref.schur.rows() &&
                std::memcmp(sys.schur.data(), sys_ref.schur.data(),
                            sizeof(double) *
                                static_cast<std::size_t>(sys.schur.size())) == 0 &&
                std::memcmp(sys.rhs.data(), sys_ref.rhs.data(),
                            sizeof(double) *
                                static_cast<std::size_t>(sys.rhs.size())) == 0;
      }
      std::printf(
          "  threads=%d  deviance %.3f ms  assemble %.3f ms  %s\n", threads,
          1e3 * t_dev, 1e3 * t_asm,
          threads == 1 ? "(reference)" : (exact ? "bitwise equal" : "MISMATCH"));
    }
  }
  return 0;
}
