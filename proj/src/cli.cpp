#include "emlasso/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "emlasso/emselect.hpp"
#include "emlasso/error.hpp"
#include "emlasso/report.hpp"
#include "emlasso/simlab.hpp"

namespace emlasso {

namespace {

using nlohmann::json;

std::uint64_t default_seed() {
  const char* env = std::getenv("EMLASSO_SEED");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0') throw ValidationError("EMLASSO_SEED must be a non-negative integer");
  return v;
}

std::optional<Truncation> parse_trunc(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  Truncation t{values[0], values.size() > 1 ? values[1] : 1.0 - values[0]};
  if (!(t.lo > 0.0 && t.lo < t.hi && t.hi < 1.0))
    throw ValidationError("--trunc bounds must satisfy 0 < lo < hi < 1");
  return t;
}

NuisanceModel parse_model(const std::string& text, Family family, int hal_order, int folds) {
  if (text == "hal") return HalModel{hal_order, folds};
  return parse_formula(text, family);
}

void check_columns(const NuisanceModel& model, const ObservationTable& table) {
  if (const auto* spec = std::get_if<ModelSpec>(&model))
    for (const auto& term : spec->terms)
      for (const auto& f : term.factors) table.index_of(f);
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw ValidationError("failed writing '" + path + "'");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct FitFlags {
  std::string data, treatment = "A", outcome = "Y", q_model, g_model, out, outcome_family = "linear";
  std::vector<std::string> em;
  std::vector<double> trunc;
  double alpha = 0.05, gamma = 1.0;
  int folds = 10;
  int hal_order = 3;
  std::optional<std::uint64_t> seed;
};

int cmd_fit(const FitFlags& f, std::ostream& out) {
  const Family q_family = f.outcome_family == "logistic" ? Family::kLogistic : Family::kLinear;
  PipelineOptions options;
  options.truncation = parse_trunc(f.trunc);
  options.alpha = f.alpha;
  options.gamma = f.gamma;
  options.folds = f.folds;
  options.seed = f.seed ? *f.seed : default_seed();
  if (!(f.alpha > 0.0 && f.alpha < 1.0)) throw ValidationError("--alpha must lie in (0, 1)");

  const ObservationTable table = load_csv(f.data, f.treatment, f.outcome);
  const NuisanceModel q = parse_model(f.q_model, q_family, f.hal_order, f.folds);
  const NuisanceModel g = parse_model(f.g_model, Family::kLogistic, f.hal_order, f.folds);
  check_columns(q, table);
  check_columns(g, table);
  const EmCandidateSet em{f.em};
  em.validate(table);

  const PipelineResult r = run_pipeline(table, q, g, em, options);

  json j;
  j["schema"] = kReportSchema;
  j["config"] = {{"data", f.data},
                 {"treatment", f.treatment},
                 {"outcome", f.outcome},
                 {"em", f.em},
                 {"q_model", r.summary.q_model},
                 {"g_model", r.summary.g_model},
                 {"outcome_family", f.outcome_family},
                 {"truncation", options.truncation
                                    ? json::array({options.truncation->lo, options.truncation->hi})
                                    : json(nullptr)},
                 {"alpha", options.alpha},
                 {"gamma", options.gamma},
                 {"folds", options.folds},
                 {"seed", options.seed},
                 {"hal_order", f.hal_order}};
  j["n"] = table.n();
  j["selected"] = r.fit.selected_names();
  j["lambda"] = r.fit.lambda;
  j["intercept"] = r.fit.beta0;
  j["sigma2"] = r.fit.pilot_sigma2;
  j["coefficients"] = json::array();
  for (std::size_t k = 0; k < f.em.size(); ++k) {
    const auto e = static_cast<Eigen::Index>(k);
    j["coefficients"].push_back({{"name", f.em[k]},
                                 {"beta", r.fit.beta[e]},
                                 {"pilot", r.fit.pilot[e]},
                                 {"weight", finite_or_null(r.fit.weights[e])},
                                 {"selected", r.fit.beta[e] != 0.0}});
  }
  j["intervals"] = json::array();
  for (const auto& iv : r.intervals) {
    j["intervals"].push_back({{"name", iv.name},
                              {"estimate", iv.estimate},
                              {"ci_lo", iv.ci_lo},
                              {"ci_hi", iv.ci_hi},
                              {"p_value", iv.p_value},
                              {"nu_lo", finite_or_null(iv.nu_lo)},
                              {"nu_hi", finite_or_null(iv.nu_hi)},
                              {"sigma_star2", iv.sigma_star2}});
  }
  j["nuisance"] = {{"mean_q0", r.summary.mean_q0},
                   {"mean_q1", r.summary.mean_q1},
                   {"mean_g1", r.summary.mean_g1},
                   {"min_g1", r.summary.min_g1},
                   {"max_g1", r.summary.max_g1}};
  const std::string text = j.dump(2) + "\n";
  if (f.out.empty())
    out << text;
  else
    write_text(f.out, text);
  return kExitOk;
}

struct SimFlags {
  std::string scenario, impl, csv, json_path;
  long long n = 1000;
  int reps = 1000, threads = 1, folds = 10, noise = 50;
  int hal_order = 3;
  double alpha = 0.05, gamma = 1.0;
  std::vector<double> trunc;
  std::optional<std::uint64_t> seed;
};

int cmd_simulate(const SimFlags& f, std::ostream& out, std::ostream& err) {
  ScenarioConfig c;
  c.scenario = parse_scenario(f.scenario);
  c.implementation = parse_implementation(f.impl);
  c.n = f.n;
  c.reps = f.reps;
  c.seed = f.seed ? *f.seed : default_seed();
  c.alpha = f.alpha;
  c.folds = f.folds;
  c.gamma = f.gamma;
  c.truncation = parse_trunc(f.trunc);
  c.noise_covariates = f.noise;
  c.hal_order = f.hal_order;
  c.validate();
  if (f.threads < 1) throw ValidationError("--threads must be at least 1");

  const SimulationReport report = run_replications(c, f.threads);
  if (f.csv.empty() && f.json_path.empty()) {
    out << report_csv(report);
  } else {
    if (!f.csv.empty()) write_text(f.csv, report_csv(report));
    if (!f.json_path.empty()) write_text(f.json_path, report_json(report));
    out << render_table({report});
  }
  err << "simulate: " << report.reps << " reps (" << report.failed_reps << " failed) in " << report.wall_seconds
      << " s\n";
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& paths, std::ostream& out) {
  std::vector<SimulationReport> reports;
  for (const auto& p : paths) {
    try {
      reports.push_back(parse_report(read_text(p)));
    } catch (const ValidationError& e) {
      throw ValidationError(p + ": " + e.what());
    }
  }
  out << render_table(reports);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Doubly robust adaptive-LASSO effect modifier discovery"};
  app.require_subcommand(1);

  FitFlags fit;
  auto* fit_cmd = app.add_subcommand("fit", "Select effect modifiers on a CSV dataset");
  fit_cmd->add_option("--data", fit.data, "Input CSV")->required();
  fit_cmd->add_option("--treatment", fit.treatment, "Treatment column")->capture_default_str();
  fit_cmd->add_option("--outcome", fit.outcome, "Outcome column")->capture_default_str();
  fit_cmd->add_option("--em", fit.em, "Candidate effect modifiers")->required()->delimiter(',');
  fit_cmd->add_option("--q-model", fit.q_model, "Outcome model formula or 'hal'")->required();
  fit_cmd->add_option("--g-model", fit.g_model, "Propensity model formula or 'hal'")->required();
  fit_cmd->add_option("--outcome-family", fit.outcome_family, "linear or logistic")
      ->check(CLI::IsMember({"linear", "logistic"}))
      ->capture_default_str();
  fit_cmd->add_option("--trunc", fit.trunc, "Propensity truncation: lo [hi]")->expected(1, 2);
  fit_cmd->add_option("--alpha", fit.alpha)->capture_default_str();
  fit_cmd->add_option("--gamma", fit.gamma)->capture_default_str();
  fit_cmd->add_option("--folds", fit.folds)->capture_default_str();
  fit_cmd->add_option("--hal-order", fit.hal_order, "HAL interaction order")->capture_default_str();
  fit_cmd->add_option("--seed", fit.seed, "Default: $EMLASSO_SEED or 1");
  fit_cmd->add_option("--out", fit.out, "Result JSON (default: stdout)");

  SimFlags sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Run Monte Carlo replications");
  sim_cmd->add_option("--scenario", sim.scenario, "s1, s2, s3 or hd1")->required();
  sim_cmd->add_option("--impl", sim.impl, "qcgc, qc, gc, hal, nlin or clin")->required();
  sim_cmd->add_option("--n", sim.n)->capture_default_str();
  sim_cmd->add_option("--reps", sim.reps)->capture_default_str();
  sim_cmd->add_option("--seed", sim.seed, "Default: $EMLASSO_SEED or 1");
  sim_cmd->add_option("--threads", sim.threads)->capture_default_str();
  sim_cmd->add_option("--alpha", sim.alpha)->capture_default_str();
  sim_cmd->add_option("--gamma", sim.gamma)->capture_default_str();
  sim_cmd->add_option("--folds", sim.folds)->capture_default_str();
  sim_cmd->add_option("--trunc", sim.trunc, "Propensity truncation: lo [hi]")->expected(1, 2);
  sim_cmd->add_option("--noise", sim.noise, "Noise covariates for hd1")->capture_default_str();
  sim_cmd->add_option("--hal-order", sim.hal_order, "HAL interaction order")->capture_default_str();
  sim_cmd->add_option("--csv", sim.csv, "CSV report path");
  sim_cmd->add_option("--json", sim.json_path, "JSON report path");

  std::vector<std::string> paths;
  auto* report_cmd = app.add_subcommand("report", "Render reports side by side");
  report_cmd->add_option("paths", paths, "Report files (JSON or CSV)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    if (*fit_cmd) return cmd_fit(fit, out);
    if (*sim_cmd) return cmd_simulate(sim, out, err);
    return cmd_report(paths, out);
  } catch (const PipelineError& e) {
    err << "error: " << e.what() << "\n";
    return e.numerical() ? kExitNumerical : kExitValidation;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
}

}  // namespace emlasso
