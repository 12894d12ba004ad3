// Command line front end: simulate data, fit the response models, run the
// item-variation diagnostics, and reproduce the closed-form worked numbers.
// Exit codes: 0 success, 1 usage or validation failure, 2 when a fit ran but
// was flagged as not converged.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "eirm/analytics.hpp"
#include "eirm/errors.hpp"
#include "eirm/fit.hpp"
#include "eirm/io_util.hpp"
#include "eirm/manifest.hpp"
#include "eirm/score.hpp"
#include "eirm/serialize.hpp"
#include "eirm/sim.hpp"
#include "eirm/table.hpp"
#include "eirm/util.hpp"
#include "eirm/version.hpp"

namespace fs = std::filesystem;
using namespace eirm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNotConverged = 2;

std::string fmt(double v) { return format_double(v); }

std::string fmt_opt(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

// ---- shared fit-side flags -------------------------------------------------

struct FitFlags {
  std::string input;
  std::string person_col = "person_id";
  std::string item_col = "item_id";
  std::string score_col = "score";
  std::string treatment_col = "treatment";
  std::string covariate_col = "covariate_x";
  std::string subscale_col;
  int threads = 1;
  double outer_tol = 1e-6;
  double pirls_tol = 1e-8;
  int outer_max_eval = 600;
  int pirls_max_iter = 200;

  void attach_io(CLI::App* cmd) {
    cmd->add_option("--input", input, "Response CSV/TSV path")->required();
    cmd->add_option("--person-col", person_col, "Person id column")
        ->capture_default_str();
    cmd->add_option("--item-col", item_col, "Item id column")
        ->capture_default_str();
    cmd->add_option("--score-col", score_col, "Binary score column")
        ->capture_default_str();
    cmd->add_option("--treatment-col", treatment_col, "Treatment column")
        ->capture_default_str();
    cmd->add_option("--covariate-col", covariate_col,
                    "Person covariate column")
        ->capture_default_str();
    cmd->add_option("--subscale-col", subscale_col,
                    "Item subscale column (adds subscale terms)")
        ->capture_default_str();
  }

  void attach_tuning(CLI::App* cmd) {
    cmd->add_option("--threads", threads, "Worker threads inside one fit")
        ->capture_default_str();
    cmd->add_option("--outer-tol", outer_tol,
                    "Variance-parameter search tolerance")
        ->capture_default_str();
    cmd->add_option("--pirls-tol", pirls_tol,
                    "Inner mode-finding relative tolerance")
        ->capture_default_str();
    cmd->add_option("--outer-max-eval", outer_max_eval,
                    "Objective evaluation budget")
        ->capture_default_str();
    cmd->add_option("--pirls-max-iter", pirls_max_iter,
                    "Inner iteration cap")
        ->capture_default_str();
  }

  FitOptions fit_options() const {
    FitOptions o;
    o.n_threads = threads;
    o.outer_tol = outer_tol;
    o.pirls_rel_tol = pirls_tol;
    o.outer_max_eval = outer_max_eval;
    o.pirls_max_iter = pirls_max_iter;
    return o;
  }

  void manifest_io_options(RunManifest& m) const {
    m.options["person_col"] = person_col;
    m.options["item_col"] = item_col;
    m.options["score_col"] = score_col;
    m.options["treatment_col"] = treatment_col;
    m.options["covariate_col"] = covariate_col;
    if (!subscale_col.empty()) m.options["subscale_col"] = subscale_col;
  }

  void manifest_tuning_options(RunManifest& m) const {
    m.options["threads"] = std::to_string(threads);
    m.options["outer_tol"] = fmt(outer_tol);
    m.options["pirls_tol"] = fmt(pirls_tol);
    m.options["outer_max_eval"] = std::to_string(outer_max_eval);
    m.options["pirls_max_iter"] = std::to_string(pirls_max_iter);
  }
};

std::vector<std::string> header_columns(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') break;
  }
  const char delim =
      line.find('\t') != std::string::npos && line.find(',') == std::string::npos
          ? '\t'
          : ',';
  std::vector<std::string> cols;
  std::string cur;
  for (char c : line) {
    if (c == delim) {
      cols.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cols.push_back(cur);
  return cols;
}

ResponseTable load_table(const FitFlags& f, bool need_covariate) {
  const std::string text = read_file(f.input);
  const auto cols = header_columns(text);
  auto has = [&](const std::string& name) {
    return std::find(cols.begin(), cols.end(), name) != cols.end();
  };

  ParseSchema schema;
  schema.person = f.person_col;
  schema.item = f.item_col;
  schema.score = f.score_col;
  schema.treatment = f.treatment_col;
  if (has(f.covariate_col)) {
    schema.covariate = f.covariate_col;
  } else if (need_covariate) {
    throw SchemaError("input has no column '" + f.covariate_col +
                      "' required by the requested model; set --covariate-col");
  }
  if (!f.subscale_col.empty()) schema.subscale = f.subscale_col;

  std::istringstream in(text);
  return parse_response_table(in, schema);
}

ModelSpec spec_for(int model, bool with_subscale) {
  ModelSpec s = ModelSpec::equation(model);
  if (with_subscale) s = s.with_subscale();
  return s;
}

// ---- output assembly -------------------------------------------------------

std::string fixed_effects_csv(const FitResult& fr) {
  std::string out = "term,estimate,se\n";
  for (std::size_t k = 0; k < fr.beta_names.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    out += join_csv({fr.beta_names[k], fmt(fr.beta_hat[i]),
                     fmt(std::sqrt(fr.beta_cov(i, i)))});
    out.push_back('\n');
  }
  return out;
}

std::string eb_items_csv(const FitResult& fr) {
  std::string out = "item_id,b_hat,zeta_hat,total_effect\n";
  if (fr.spec.item_slope()) {
    for (const auto& rec : empirical_bayes_item_effects(fr)) {
      out += join_csv({rec.item_id, fmt(rec.b), fmt(rec.zeta),
                       fmt(rec.total_effect)});
      out.push_back('\n');
    }
  } else {
    // Without item slopes every item shares the average effect.
    const bool has_t = fr.spec.has_term(FixedTerm::Treatment);
    const double avg = has_t ? fr.beta(FixedTerm::Treatment) : 0.0;
    for (std::size_t i = 0; i < fr.item_ids.size(); ++i) {
      out += join_csv({fr.item_ids[i],
                       fmt(fr.eb_item_b[static_cast<Eigen::Index>(i)]),
                       fmt(0.0), has_t ? fmt(avg) : std::string()});
      out.push_back('\n');
    }
  }
  return out;
}

struct TwoStepSummary {
  double effect = 0.0;
  double se = 0.0;
  double standardized = 0.0;
  std::optional<double> alpha;
  std::optional<double> corrected;
};

std::string analysis_csv(const FitResult& il, const AnalysisReport& rep,
                         const std::optional<TwoStepSummary>& ts) {
  std::string out =
      "n_persons,n_items,sigma_theta_ref,beta1_std,se_beta1_std,"
      "sigma_zeta_std,se_ratio_model,se_ratio_formula,gamma,gamma_note,"
      "pi_low,pi_high,sigma_b_star,sd_ratio,twostep_effect,twostep_se,"
      "twostep_std,alpha,corrected_twostep_effect\n";
  std::string beta1_std, se1_std;
  for (const auto& e : rep.std_effects) {
    if (e.name == "treatment") {
      beta1_std = fmt(e.estimate);
      se1_std = fmt(e.se);
    }
  }
  std::vector<std::string> row = {
      std::to_string(il.n_persons),
      std::to_string(il.n_items),
      fmt(rep.sigma_theta_ref),
      beta1_std,
      se1_std,
      fmt(rep.sigma_zeta_std),
      fmt(rep.se_ratio_model),
      fmt(rep.se_ratio_formula),
      fmt_opt(rep.gamma.value),
      rep.gamma.note,
      fmt(rep.pi.low),
      fmt(rep.pi.high),
      fmt(rep.sigma_b_star),
      fmt(rep.sd_ratio),
      ts ? fmt(ts->effect) : "",
      ts ? fmt(ts->se) : "",
      ts ? fmt(ts->standardized) : "",
      ts ? fmt_opt(ts->alpha) : "",
      ts ? fmt_opt(ts->corrected) : "",
  };
  out += join_csv(row);
  out.push_back('\n');
  return out;
}

// The diagnostics need a treatment-only fit for the scale, a fit without item
// slopes for the baseline SE, and a fit with them. Reuses the requested fit
// for whichever role it matches and fits the others.
struct AnalysisBundle {
  FitResult ref;        // model 1
  FitResult intercepts; // requested fixed terms, plain item intercepts
  FitResult slopes;     // requested fixed terms, item treatment slopes
  AnalysisReport report;
  bool all_converged = true;
};

AnalysisBundle analysis_bundle(const ResponseTable& table, const FitResult& fitted,
                               const FitOptions& opts) {
  AnalysisBundle b{fitted, fitted, fitted, {}, true};

  ModelSpec ri = fitted.spec;
  ri.item_structure = ItemStructure::RandomIntercept;
  ModelSpec sl = fitted.spec;
  sl.item_structure = ItemStructure::RandomInterceptTreatmentSlope;
  sl.correlation_free = false;

  const ModelSpec m1 = ModelSpec::equation(1);
  auto same_terms = [](const ModelSpec& a, const ModelSpec& d) {
    return a.term_names() == d.term_names() && a.extra_terms == d.extra_terms;
  };

  if (!(same_terms(fitted.spec, m1) &&
        fitted.spec.item_structure == ItemStructure::RandomIntercept)) {
    b.ref = fit(table, m1, opts);
  }
  if (fitted.spec.item_structure != ItemStructure::RandomIntercept) {
    b.intercepts = fit(table, ri, opts);
  }
  if (!fitted.spec.item_slope()) {
    b.slopes = fit(table, sl, opts);
  }

  AnalysisInputs in;
  in.reference = &b.ref;
  in.intercepts = &b.intercepts;
  in.ilhte = &b.slopes;
  b.report = build_analysis(in);
  b.all_converged = b.ref.convergence.converged &&
                    b.intercepts.convergence.converged &&
                    b.slopes.convergence.converged;
  return b;
}

// ---- subcommands -----------------------------------------------------------

struct SimFlags {
  SimConfig cfg;
  std::string out_dir = ".";

  void attach(CLI::App* cmd) {
    cmd->add_option("--n-persons", cfg.n_persons, "Persons")->required();
    cmd->add_option("--n-items", cfg.n_items, "Items")->required();
    cmd->add_option("--beta0", cfg.beta0, "Intercept")->capture_default_str();
    cmd->add_option("--beta1", cfg.beta1, "Treatment effect")
        ->capture_default_str();
    cmd->add_option("--beta2", cfg.beta2, "Covariate effect")
        ->capture_default_str();
    cmd->add_option("--beta3", cfg.beta3, "Interaction effect")
        ->capture_default_str();
    cmd->add_option("--sigma-b", cfg.sigma_b, "Item intercept sd")
        ->capture_default_str();
    cmd->add_option("--sigma-zeta", cfg.sigma_zeta, "Item slope sd")
        ->capture_default_str();
    cmd->add_option("--rho", cfg.rho, "Item intercept-slope correlation")
        ->capture_default_str();
    cmd->add_option("--sigma-theta", cfg.sigma_theta, "Person residual sd")
        ->capture_default_str();
    cmd->add_option("--seed", cfg.seed, "Random seed")->capture_default_str();
    cmd->add_option("--out-dir", out_dir, "Output directory")
        ->capture_default_str();
  }

  void manifest_options(RunManifest& m) const {
    m.options["n_persons"] = std::to_string(cfg.n_persons);
    m.options["n_items"] = std::to_string(cfg.n_items);
    m.options["beta0"] = fmt(cfg.beta0);
    m.options["beta1"] = fmt(cfg.beta1);
    m.options["beta2"] = fmt(cfg.beta2);
    m.options["beta3"] = fmt(cfg.beta3);
    m.options["sigma_b"] = fmt(cfg.sigma_b);
    m.options["sigma_zeta"] = fmt(cfg.sigma_zeta);
    m.options["rho"] = fmt(cfg.rho);
    m.options["sigma_theta"] = fmt(cfg.sigma_theta);
    m.options["seed"] = std::to_string(cfg.seed);
  }
};

int cmd_simulate(const SimFlags& f) {
  RunManifest man;
  man.command = "simulate";
  man.tool_version = kVersion;
  f.manifest_options(man);

  SimResult sim = simulate_dataset(f.cfg);
  fs::create_directories(f.out_dir);
  write_with_manifest((fs::path(f.out_dir) / "responses.csv").string(), man,
                      to_csv(sim.table), "#");
  Json truth = to_json(sim.truth);
  truth["manifest"] = to_json(man);
  write_with_manifest((fs::path(f.out_dir) / "true_params.json").string(), man,
                      json_text(truth), "//");
  return kExitOk;
}

int cmd_fit(const FitFlags& f, int model, const std::string& out_dir) {
  RunManifest man;
  man.command = "fit";
  man.tool_version = kVersion;
  man.inputs.emplace_back(f.input, file_fingerprint(f.input));
  man.options["model"] = std::to_string(model);
  f.manifest_io_options(man);
  f.manifest_tuning_options(man);

  const bool with_subscale = !f.subscale_col.empty();
  const ModelSpec spec = spec_for(model, with_subscale);
  const bool need_cov = spec.has_term(FixedTerm::Covariate);
  const ResponseTable table = load_table(f, need_cov);

  const FitOptions opts = f.fit_options();
  FitResult fr = fit(table, spec, opts);
  AnalysisBundle bundle = analysis_bundle(table, fr, opts);

  fs::create_directories(out_dir);
  Json fit_json = to_json(fr);
  fit_json["manifest"] = to_json(man);
  write_with_manifest((fs::path(out_dir) / "fit.json").string(), man,
                      json_text(fit_json), "//");
  write_with_manifest((fs::path(out_dir) / "fixed_effects.csv").string(), man,
                      fixed_effects_csv(fr), "#");
  write_with_manifest((fs::path(out_dir) / "eb_items.csv").string(), man,
                      eb_items_csv(fr), "#");
  write_with_manifest((fs::path(out_dir) / "analysis.csv").string(), man,
                      analysis_csv(bundle.slopes, bundle.report, std::nullopt),
                      "#");

  const bool ok = fr.convergence.converged && bundle.all_converged;
  return ok ? kExitOk : kExitNotConverged;
}

int cmd_analyze(const FitFlags& f, const std::string& out_dir) {
  RunManifest man;
  man.command = "analyze";
  man.tool_version = kVersion;
  man.inputs.emplace_back(f.input, file_fingerprint(f.input));
  f.manifest_io_options(man);
  f.manifest_tuning_options(man);

  const ResponseTable table = load_table(f, true);
  const FitOptions opts = f.fit_options();

  FitResult m1 = fit(table, ModelSpec::equation(1), opts);
  FitResult m2 = fit(table, ModelSpec::equation(2), opts);
  FitResult m3 = fit(table, ModelSpec::equation(3), opts);
  LrtResult lrt = lrt_ilhte(m2, m3);

  TwoStepScores ts = rasch_score_twostep(table, opts);
  OlsEffect ols = ols_effect(ts.scores, ts.treatment);
  DescriptiveStats stats = descriptive_stats(table);

  TwoStepSummary tss;
  tss.effect = ols.effect;
  tss.se = ols.se;
  tss.standardized = ols.standardized;
  tss.alpha = stats.alpha;

  AnalysisInputs in;
  in.reference = &m1;
  in.intercepts = &m2;
  in.ilhte = &m3;
  in.twostep_std_effect = ols.standardized;
  in.reliability = stats.alpha;
  AnalysisReport rep = build_analysis(in);
  tss.corrected = rep.corrected_twostep_effect;

  fs::create_directories(out_dir);
  auto dump_fit = [&](const FitResult& fr, const char* name) {
    Json j = to_json(fr);
    j["manifest"] = to_json(man);
    write_with_manifest((fs::path(out_dir) / name).string(), man, json_text(j),
                        "//");
  };
  dump_fit(m1, "fit_m1.json");
  dump_fit(m2, "fit_m2.json");
  dump_fit(m3, "fit_m3.json");
  write_with_manifest((fs::path(out_dir) / "eb_items.csv").string(), man,
                      eb_items_csv(m3), "#");

  std::string ts_csv = "person_id,treatment,score\n";
  for (std::size_t j = 0; j < ts.person_ids.size(); ++j) {
    ts_csv += join_csv(
        {ts.person_ids[j], fmt(ts.treatment[j]), fmt(ts.scores[j])});
    ts_csv.push_back('\n');
  }
  write_with_manifest((fs::path(out_dir) / "twostep.csv").string(), man, ts_csv,
                      "#");
  write_with_manifest((fs::path(out_dir) / "analysis.csv").string(), man,
                      analysis_csv(m3, rep, tss), "#");

  Json aj;
  aj["manifest"] = to_json(man);
  aj["descriptives"] = to_json(stats);
  aj["report"] = to_json(rep);
  aj["slope_test"] = to_json(lrt);
  Json tj;
  tj["effect"] = ols.effect;
  tj["se"] = ols.se;
  tj["standardized"] = ols.standardized;
  tj["zero_residual_variance"] = ols.zero_residual_variance;
  aj["twostep"] = std::move(tj);
  write_with_manifest((fs::path(out_dir) / "analysis.json").string(), man,
                      json_text(aj), "//");

  const bool ok = m1.convergence.converged && m2.convergence.converged &&
                  m3.convergence.converged &&
                  ts.measurement_fit.convergence.converged;
  return ok ? kExitOk : kExitNotConverged;
}

struct DemoFlags {
  SimConfig item_dep;
  int seeds = 1;
  int jobs = 1;
  double x_min = -3.0, x_max = 3.0;
  int x_points = 41;
  std::string out_dir = ".";
  FitFlags fitf;  // tolerance knobs only; no input

  DemoFlags() {
    item_dep.n_persons = 2000;
    item_dep.n_items = 20;
    item_dep.beta1 = 0.3;
    item_dep.beta2 = 1.0;
    item_dep.sigma_b = 1.0;
    item_dep.sigma_zeta = 0.5;
    item_dep.rho = 1.0;
    item_dep.sigma_theta = 1.0;
    item_dep.seed = 1;
  }

  void attach(CLI::App* cmd) {
    cmd->add_option("--n-persons", item_dep.n_persons, "Persons per dataset")
        ->capture_default_str();
    cmd->add_option("--n-items", item_dep.n_items, "Items")
        ->capture_default_str();
    cmd->add_option("--beta0", item_dep.beta0, "Intercept")
        ->capture_default_str();
    cmd->add_option("--beta1", item_dep.beta1, "Average treatment effect")
        ->capture_default_str();
    cmd->add_option("--beta2", item_dep.beta2, "Covariate effect")
        ->capture_default_str();
    cmd->add_option("--sigma-b", item_dep.sigma_b, "Item intercept sd")
        ->capture_default_str();
    cmd->add_option("--sigma-zeta", item_dep.sigma_zeta,
                    "Item slope sd (item-dependent scenario)")
        ->capture_default_str();
    cmd->add_option("--rho", item_dep.rho, "Intercept-slope correlation")
        ->capture_default_str();
    cmd->add_option("--sigma-theta", item_dep.sigma_theta, "Person residual sd")
        ->capture_default_str();
    cmd->add_option("--seed", item_dep.seed, "Base seed")
        ->capture_default_str();
    cmd->add_option("--seeds", seeds, "Number of replicate datasets")
        ->capture_default_str();
    cmd->add_option("--jobs", jobs, "Parallel workers across seeds")
        ->capture_default_str();
    cmd->add_option("--x-min", x_min, "Curve grid lower end")
        ->capture_default_str();
    cmd->add_option("--x-max", x_max, "Curve grid upper end")
        ->capture_default_str();
    cmd->add_option("--x-points", x_points, "Curve grid size")
        ->capture_default_str();
    cmd->add_option("--out-dir", out_dir, "Output directory")
        ->capture_default_str();
    fitf.attach_tuning(cmd);
  }
};

struct DemoRow {
  std::uint64_t seed = 0;
  std::string scenario;
  double beta3_true = 0.0;
  double beta3_plain = 0.0, se_plain = 0.0;
  double beta3_slopes = 0.0, se_slopes = 0.0;
  double sigma_b = 0.0, sigma_zeta = 0.0, rho = 0.0;
  double sigma_b_star = 0.0, sd_ratio = 0.0;
  bool converged = true;
};

DemoRow demo_row(const SimConfig& cfg, const std::string& name,
                 const FitOptions& opts) {
  SimResult sim = simulate_dataset(cfg);
  FitResult plain = fit(sim.table, ModelSpec::equation(4), opts);
  FitResult slopes = fit(sim.table, ModelSpec::equation(5), opts);
  InteractionComparison cmp = interaction_comparison(plain, slopes);

  DemoRow row;
  row.seed = cfg.seed;
  row.scenario = name;
  row.beta3_true = cfg.beta3;
  row.beta3_plain = cmp.beta3_plain;
  row.se_plain = cmp.se_plain;
  row.beta3_slopes = cmp.beta3_ilhte;
  row.se_slopes = cmp.se_ilhte;
  row.sigma_b = cmp.sigma_b;
  row.sigma_zeta = slopes.sigma_zeta_hat;
  row.rho = cmp.rho;
  row.sigma_b_star = cmp.sigma_b_star;
  row.sd_ratio = cmp.sd_ratio;
  row.converged =
      plain.convergence.converged && slopes.convergence.converged;
  return row;
}

int cmd_confound_demo(const DemoFlags& f) {
  if (f.x_points < 3) throw ValueError("--x-points must be at least 3");
  if (f.seeds < 1) throw ValueError("--seeds must be at least 1");
  if (f.jobs < 1) throw ValueError("--jobs must be at least 1");

  RunManifest man;
  man.command = "confound-demo";
  man.tool_version = kVersion;
  SimFlags sf;
  sf.cfg = f.item_dep;
  sf.manifest_options(man);
  man.options["seeds"] = std::to_string(f.seeds);
  man.options["x_min"] = fmt(f.x_min);
  man.options["x_max"] = fmt(f.x_max);
  man.options["x_points"] = std::to_string(f.x_points);
  f.fitf.manifest_tuning_options(man);

  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(f.x_points));
  const double step = (f.x_max - f.x_min) / static_cast<double>(f.x_points - 1);
  for (int k = 0; k < f.x_points; ++k) grid.push_back(f.x_min + step * k);

  const CalibratedPair pair = calibrate_confound_pair(f.item_dep, grid);

  // Curves for the calibrated pair, both scenarios and both groups.
  std::string curves = "scenario,treatment_group,x,expected_sumscore\n";
  struct Scen {
    const char* name;
    const SimConfig* cfg;
  };
  const Scen scens[2] = {{"person_dependent", &pair.person_dependent},
                         {"item_dependent", &pair.item_dependent}};
  for (const auto& sc : scens) {
    const TrueParams truth = simulate_dataset(*sc.cfg).truth;
    for (int g = 0; g <= 1; ++g) {
      const auto curve = expected_sumscore_curve(truth, grid, g);
      for (std::size_t k = 0; k < grid.size(); ++k) {
        curves += join_csv(
            {sc.name, std::to_string(g), fmt(grid[k]), fmt(curve[k])});
        curves.push_back('\n');
      }
    }
  }

  // Interaction fits per seed, optionally in parallel across seeds. Results
  // land in a pre-sized vector so output order never depends on scheduling.
  const FitOptions opts = f.fitf.fit_options();
  std::vector<DemoRow> rows(static_cast<std::size_t>(f.seeds) * 2);
  std::exception_ptr first_error = nullptr;
  std::mutex err_mu;
  std::atomic<int> next{0};
  auto worker = [&] {
    for (;;) {
      const int k = next.fetch_add(1);
      if (k >= f.seeds) return;
      try {
        SimConfig pd = pair.person_dependent;
        SimConfig id = pair.item_dependent;
        pd.seed = f.item_dep.seed + static_cast<std::uint64_t>(k);
        id.seed = pd.seed;
        rows[2 * static_cast<std::size_t>(k)] =
            demo_row(pd, "person_dependent", opts);
        rows[2 * static_cast<std::size_t>(k) + 1] =
            demo_row(id, "item_dependent", opts);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  {
    const int n_workers = std::min(f.jobs, f.seeds);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_workers));
    for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::string cmp =
      "seed,scenario,beta3_true,beta3_plain,se_plain,beta3_slopes,se_slopes,"
      "difference,sigma_b_hat,sigma_zeta_hat,rho_hat,sigma_b_star,sd_ratio,"
      "converged\n";
  bool all_ok = true;
  for (const auto& r : rows) {
    cmp += join_csv({std::to_string(r.seed), r.scenario, fmt(r.beta3_true),
                     fmt(r.beta3_plain), fmt(r.se_plain), fmt(r.beta3_slopes),
                     fmt(r.se_slopes), fmt(r.beta3_plain - r.beta3_slopes),
                     fmt(r.sigma_b), fmt(r.sigma_zeta), fmt(r.rho),
                     fmt(r.sigma_b_star), fmt(r.sd_ratio),
                     r.converged ? "1" : "0"});
    cmp.push_back('\n');
    all_ok = all_ok && r.converged;
  }

  fs::create_directories(f.out_dir);
  write_with_manifest((fs::path(f.out_dir) / "curves.csv").string(), man,
                      curves, "#");
  write_with_manifest(
      (fs::path(f.out_dir) / "interaction_comparison.csv").string(), man, cmp,
      "#");
  return all_ok ? kExitOk : kExitNotConverged;
}

int cmd_replicate_toy(double tolerance_override, const std::string& out_dir) {
  struct Check {
    std::string name;
    double computed;
    double expected;
    double tol;
  };
  // The two-decimal reference values get the looser default tolerance.
  const double t3 = tolerance_override > 0.0 ? tolerance_override : 0.005;
  const double t2 = tolerance_override > 0.0 ? tolerance_override : 0.01;

  std::vector<Check> checks;
  checks.push_back({"gamma(beta1=0.3, se=0.1, items=20)",
                    sensitivity_gamma(0.3, 0.01, 20).value.value(), 0.52, t3});
  checks.push_back({"gamma(beta1=0.3, se=0.1, items=10)",
                    sensitivity_gamma(0.3, 0.01, 10).value.value(), 0.37, t3});
  checks.push_back({"treatment_group_item_sd(1, 1, rho=1)",
                    treatment_group_item_sd(1.0, 1.0, 1.0), 2.0, t3});
  checks.push_back({"sumscore_slope(1, sigma_b=1)", sumscore_slope(1.0, 1.0),
                    0.86, t3});
  checks.push_back({"sumscore_slope(1, sigma_b=2)", sumscore_slope(1.0, 2.0),
                    0.65, t2});
  checks.push_back({"confound_gap(1, 1, 1, rho=+1)",
                    confound_gap(1.0, 1.0, 1.0, 1.0), -0.21, t2});
  checks.push_back({"confound_gap(1, 1, 1, rho=-1)",
                    confound_gap(1.0, 1.0, 1.0, -1.0), 0.14, t2});

  std::string csv = "check,computed,expected,tolerance,pass\n";
  std::printf("%-40s %10s %10s %10s %s\n", "check", "computed", "expected",
              "tolerance", "pass");
  for (const auto& c : checks) {
    const bool pass = std::abs(c.computed - c.expected) <= c.tol;
    std::printf("%-40s %10.4f %10.4f %10.4g %s\n", c.name.c_str(), c.computed,
                c.expected, c.tol, pass ? "yes" : "NO");
    csv += join_csv({c.name, fmt(c.computed), fmt(c.expected), fmt(c.tol),
                     pass ? "1" : "0"});
    csv.push_back('\n');
  }

  if (!out_dir.empty()) {
    RunManifest man;
    man.command = "replicate-toy";
    man.tool_version = kVersion;
    man.options["tolerance"] =
        tolerance_override > 0.0 ? fmt(tolerance_override) : std::string("default");
    fs::create_directories(out_dir);
    write_with_manifest((fs::path(out_dir) / "toy_replication.csv").string(),
                        man, csv, "#");
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Item-level treatment effect models for binary response data"};
  app.require_subcommand(0, 1);
  app.set_config("--config", "", "Flat key=value option file");
  bool show_config = false;
  app.add_flag("--show-config", show_config,
               "Print every option with its resolved value and exit");

  SimFlags simf;
  auto* c_sim = app.add_subcommand("simulate", "Generate a synthetic dataset");
  simf.attach(c_sim);

  FitFlags fitf;
  int model = 3;
  std::string fit_out = ".";
  auto* c_fit = app.add_subcommand("fit", "Fit one response model");
  fitf.attach_io(c_fit);
  fitf.attach_tuning(c_fit);
  c_fit->add_option("--model", model, "Model number 1-5")
      ->check(CLI::Range(1, 5))
      ->capture_default_str();
  c_fit->add_option("--out-dir", fit_out, "Output directory")
      ->capture_default_str();

  FitFlags anaf;
  std::string ana_out = ".";
  auto* c_ana = app.add_subcommand(
      "analyze", "Fit models 1-3 plus the two-step pipeline and diagnostics");
  anaf.attach_io(c_ana);
  anaf.attach_tuning(c_ana);
  c_ana->add_option("--out-dir", ana_out, "Output directory")
      ->capture_default_str();

  DemoFlags demof;
  auto* c_demo = app.add_subcommand(
      "confound-demo",
      "Curves and interaction fits for matched person- and item-driven "
      "effect variation");
  demof.attach(c_demo);

  double toy_tol = 0.0;
  std::string toy_out;
  auto* c_toy = app.add_subcommand("replicate-toy",
                                   "Check the closed-form worked numbers");
  c_toy->add_option("--tolerance", toy_tol,
                    "Override both default tolerances (0.005 / 0.01)")
      ->capture_default_str();
  c_toy->add_option("--out-dir", toy_out,
                    "Also write toy_replication.csv here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help, --version
    std::cerr << json_text(error_json("usage", e.what()));
    return kExitUsage;
  }

  try {
    if (show_config) {
      std::cout << app.config_to_str(true, true);
      return kExitOk;
    }
    if (c_sim->parsed()) return cmd_simulate(simf);
    if (c_fit->parsed()) return cmd_fit(fitf, model, fit_out);
    if (c_ana->parsed()) return cmd_analyze(anaf, ana_out);
    if (c_demo->parsed()) return cmd_confound_demo(demof);
    if (c_toy->parsed()) return cmd_replicate_toy(toy_tol, toy_out);
    std::cerr << json_text(
        error_json("usage", "a subcommand is required; see --help"));
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << json_text(error_json(e.kind(), e.what()));
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << json_text(error_json("internal", e.what()));
    return kExitUsage;
  }
}
