#include "eirm/manifest.hpp"

#include <cmath>
#include <sstream>

#include "eirm/io_util.hpp"
#include "eirm/serialize.hpp"
#include "eirm/util.hpp"

namespace eirm {

std::string RunManifest::canonical() const {
  std::ostringstream os;
  os << "command=" << command << '\n';
  os << "version=" << tool_version << '\n';
  for (const auto& [path, fp] : inputs) os << "input " << path << ' ' << fp << '\n';
  for (const auto& [k, v] : options) os << "option " << k << '=' << v << '\n';
  return os.str();
}

std::uint64_t RunManifest::hash() const { return fnv1a(canonical()); }

std::string file_fingerprint(const std::string& path) {
  return hex64(fnv1a(read_file(path)));
}

void write_with_manifest(const std::string& path, const RunManifest& m,
                         const std::string& body,
                         const std::string& comment_prefix) {
  std::string out = comment_prefix + " manifest_hash=" + hex64(m.hash()) + "\n";
  out += body;
  atomic_write_file(path, out);
}

namespace {

Json vector_json(const std::vector<double>& v) {
  Json arr = Json::array();
  for (double x : v) arr.push_back(x);
  return arr;
}

Json matrix_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

const char* structure_name(ItemStructure s) {
  switch (s) {
    case ItemStructure::RandomIntercept:
      return "random_intercept";
    case ItemStructure::RandomInterceptTreatmentSlope:
      return "random_intercept_treatment_slope";
    case ItemStructure::FixedOffsets:
      return "fixed_offsets";
  }
  return "?";
}

}  // namespace

Json to_json(const RunManifest& m) {
  Json j;
  j["command"] = m.command;
  j["tool_version"] = m.tool_version;
  Json inputs = Json::array();
  for (const auto& [path, fp] : m.inputs) {
    inputs.push_back(Json{{"path", path}, {"fingerprint", fp}});
  }
  j["inputs"] = std::move(inputs);
  Json opts;
  for (const auto& [k, v] : m.options) opts[k] = v;
  j["options"] = std::move(opts);
  j["hash"] = hex64(m.hash());
  return j;
}

Json to_json(const ModelSpec& spec) {
  Json j;
  Json terms = Json::array();
  for (const auto& name : spec.term_names()) terms.push_back(name);
  j["fixed_terms"] = std::move(terms);
  Json extras = Json::array();
  for (const auto& name : spec.extra_terms) extras.push_back(name);
  if (!spec.extra_terms.empty()) j["extra_terms"] = std::move(extras);
  j["item_structure"] = structure_name(spec.item_structure);
  if (spec.item_slope()) j["correlation_free"] = spec.correlation_free;
  return j;
}

Json to_json(const FitResult& fr) {
  Json j;
  j["model"] = to_json(fr.spec);
  j["n_persons"] = fr.n_persons;
  j["n_items"] = fr.n_items;
  j["n_rows"] = fr.n_rows;
  j["table_hash"] = hex64(fr.table_hash);

  Json effects = Json::array();
  for (std::size_t k = 0; k < fr.beta_names.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    effects.push_back(Json{{"name", fr.beta_names[k]},
                           {"estimate", fr.beta_hat[i]},
                           {"se", std::sqrt(fr.beta_cov(i, i))}});
  }
  j["fixed_effects"] = std::move(effects);
  j["beta_cov"] = matrix_json(fr.beta_cov);

  Json vc;
  vc["sigma_b"] = fr.sigma_b_hat;
  vc["sigma_zeta"] = fr.sigma_zeta_hat;
  vc["rho"] = fr.rho_hat;
  vc["sigma_theta"] = fr.sigma_theta_hat;
  j["variance_components"] = std::move(vc);

  j["theta_hat"] = vector_json(fr.theta_hat);
  j["m2ll"] = fr.m2ll;
  j["loglik"] = fr.loglik;

  Json conv;
  conv["converged"] = fr.convergence.converged;
  conv["outer_evaluations"] = fr.convergence.outer_evaluations;
  conv["grad_norm"] = fr.convergence.grad_norm;
  conv["pirls_total_iterations"] = fr.convergence.pirls_total_iterations;
  conv["pirls_final_iterations"] = fr.convergence.pirls_final_iterations;
  Json msgs = Json::array();
  for (const auto& m : fr.convergence.messages) msgs.push_back(m);
  conv["messages"] = std::move(msgs);
  j["convergence"] = std::move(conv);

  Json notes = Json::array();
  for (const auto& n : fr.separation_notes) notes.push_back(n);
  j["separation_notes"] = std::move(notes);
  return j;
}

Json to_json(const LrtResult& lrt) {
  Json j;
  j["deviance_diff"] = lrt.deviance_diff;
  j["df"] = lrt.df;
  j["p_raw"] = lrt.p_raw;
  j["p_boundary"] = lrt.p_boundary;
  j["clamped"] = lrt.clamped;
  return j;
}

Json to_json(const AnalysisReport& rep) {
  Json j;
  j["sigma_theta_ref"] = rep.sigma_theta_ref;
  Json effects = Json::array();
  for (const auto& e : rep.std_effects) {
    effects.push_back(Json{{"name", e.name}, {"estimate", e.estimate}, {"se", e.se}});
  }
  j["std_effects"] = std::move(effects);
  j["sigma_zeta_std"] = rep.sigma_zeta_std;
  j["se_ratio_model"] = rep.se_ratio_model;
  j["se_ratio_formula"] = rep.se_ratio_formula;
  if (rep.gamma.value) {
    j["gamma"] = *rep.gamma.value;
  } else {
    j["gamma"] = nullptr;
    j["gamma_note"] = rep.gamma.note;
  }
  j["pi_low"] = rep.pi.low;
  j["pi_high"] = rep.pi.high;
  j["sigma_b_star"] = rep.sigma_b_star;
  j["sd_ratio"] = rep.sd_ratio;
  if (rep.corrected_twostep_effect) {
    j["corrected_twostep_effect"] = *rep.corrected_twostep_effect;
  } else {
    j["corrected_twostep_effect"] = nullptr;
  }
  return j;
}

Json to_json(const TrueParams& truth) {
  const SimConfig& c = truth.config;
  Json j;
  Json cfg;
  cfg["n_persons"] = c.n_persons;
  cfg["n_items"] = c.n_items;
  cfg["beta0"] = c.beta0;
  cfg["beta1"] = c.beta1;
  cfg["beta2"] = c.beta2;
  cfg["beta3"] = c.beta3;
  cfg["sigma_b"] = c.sigma_b;
  cfg["sigma_zeta"] = c.sigma_zeta;
  cfg["rho"] = c.rho;
  cfg["sigma_theta"] = c.sigma_theta;
  cfg["seed"] = c.seed;
  j["config"] = std::move(cfg);
  j["person_treatment"] = vector_json(truth.person_treatment);
  j["person_x"] = vector_json(truth.person_x);
  j["person_eps"] = vector_json(truth.person_eps);
  j["item_b"] = vector_json(truth.item_b);
  j["item_zeta"] = vector_json(truth.item_zeta);
  return j;
}

Json to_json(const DescriptiveStats& stats) {
  Json j;
  j["n_persons"] = stats.n_persons;
  j["n_items"] = stats.n_items;
  j["n_rows"] = stats.n_rows;
  if (stats.alpha) {
    j["alpha"] = *stats.alpha;
  } else {
    j["alpha"] = nullptr;
    j["alpha_note"] = stats.alpha_note;
  }
  j["alpha_persons_dropped"] = stats.alpha_persons_dropped;
  j["mean_score_control"] = stats.mean_score_control;
  j["mean_score_treated"] = stats.mean_score_treated;
  j["missingness"] = vector_json(stats.missingness);
  return j;
}

Json error_json(const std::string& kind, const std::string& message) {
  Json j;
  j["error"] = Json{{"kind", kind}, {"message", message}};
  return j;
}

std::string json_text(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace eirm
