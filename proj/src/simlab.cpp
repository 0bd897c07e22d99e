#include "emlasso/simlab.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <random>
#include <thread>

#include <boost/math/distributions/students_t.hpp>

#include "emlasso/error.hpp"
#include "emlasso/linmod.hpp"

namespace emlasso {

namespace {

constexpr std::uint64_t kPipelineStream = 0x5e1ec7;

// Marginal success probabilities of X, V1..V4, Z.
constexpr double kBaseProb[6] = {0.4, 0.5, 0.6, 0.5, 0.7, 0.45};
constexpr double kNoiseProb = 0.5;

struct Coefs {
  double intercept, a, x, v1, v2, v3, v4, v123;
  double av1, av3;
  double gz, gx, gv1, gv2;
};

Coefs scenario_coefs(Scenario s) {
  Coefs c{1.0, 1.0, -0.5, 2.0, 1.0, 1.0, -0.2, 4.0, 0.5, 1.0, 0.5, -0.2, 0.3, 0.4};
  if (s == Scenario::kS2) c.v123 = 0.0;
  if (s == Scenario::kS3) {
    // weak outcome signal, strong treatment assignment
    for (double* v : {&c.intercept, &c.a, &c.x, &c.v1, &c.v2, &c.v3, &c.v4, &c.v123}) *v *= 0.25;
    for (double* v : {&c.gz, &c.gx, &c.gv1, &c.gv2}) *v *= 3.0;
  }
  return c;
}

double outcome_mean(const Coefs& c, double a, double x, double v1, double v2, double v3, double v4) {
  return c.intercept + c.a * a + c.x * x + c.v1 * v1 + c.v2 * v2 + c.v3 * v3 + c.v4 * v4 + c.v123 * v1 * v2 * v3 +
         a * (c.av1 * v1 + c.av3 * v3);
}

std::vector<std::string> base_names() { return {"X", "V1", "V2", "V3", "V4", "Z"}; }

int noise_count(const ScenarioConfig& config) {
  return config.scenario == Scenario::kHD1 ? config.noise_covariates : 0;
}

ModelSpec correct_outcome_spec(Scenario s) {
  std::string f = "1 + A + X + V1 + V2 + V3 + V4 + A*V1 + A*V3";
  if (s != Scenario::kS2) f += " + V1*V2*V3";
  return parse_formula(f, Family::kLinear);
}

ModelSpec correct_propensity_spec() { return parse_formula("1 + Z + X + V1 + V2", Family::kLogistic); }

}  // namespace

Scenario parse_scenario(std::string_view token) {
  if (token == "s1") return Scenario::kS1;
  if (token == "s2") return Scenario::kS2;
  if (token == "s3") return Scenario::kS3;
  if (token == "hd1") return Scenario::kHD1;
  throw ValidationError("unknown scenario '" + std::string(token) + "' (expected s1, s2, s3 or hd1)");
}

Implementation parse_implementation(std::string_view token) {
  if (token == "qcgc") return Implementation::kQcgc;
  if (token == "qc") return Implementation::kQc;
  if (token == "gc") return Implementation::kGc;
  if (token == "hal") return Implementation::kHal;
  if (token == "nlin") return Implementation::kNLin;
  if (token == "clin") return Implementation::kCLin;
  throw ValidationError("unknown implementation '" + std::string(token) +
                        "' (expected qcgc, qc, gc, hal, nlin or clin)");
}

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::kS1: return "s1";
    case Scenario::kS2: return "s2";
    case Scenario::kS3: return "s3";
    case Scenario::kHD1: return "hd1";
  }
  return "?";
}

std::string to_string(Implementation impl) {
  switch (impl) {
    case Implementation::kQcgc: return "qcgc";
    case Implementation::kQc: return "qc";
    case Implementation::kGc: return "gc";
    case Implementation::kHal: return "hal";
    case Implementation::kNLin: return "nlin";
    case Implementation::kCLin: return "clin";
  }
  return "?";
}

bool is_linear_comparator(Implementation impl) {
  return impl == Implementation::kNLin || impl == Implementation::kCLin;
}

void ScenarioConfig::validate() const {
  if (n < 2) throw ValidationError("n must be at least 2");
  if (reps < 1) throw ValidationError("reps must be at least 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  if (folds < 2) throw ValidationError("cv folds must be at least 2");
  if (!(gamma > 0.0)) throw ValidationError("gamma must be positive");
  if (scenario == Scenario::kHD1 && noise_covariates < 0) throw ValidationError("noise covariate count is negative");
  if (hal_order < 1) throw ValidationError("HAL order must be at least 1");
  if (truncation && !(truncation->lo > 0.0 && truncation->lo < truncation->hi && truncation->hi < 1.0))
    throw ValidationError("truncation bounds must satisfy 0 < lo < hi < 1");
}

std::vector<std::string> scenario_candidates(const ScenarioConfig& config) {
  std::vector<std::string> out{"V1", "V2", "V3", "V4"};
  for (int k = 0; k < noise_count(config); ++k) out.push_back("N" + std::to_string(k + 1));
  return out;
}

ScenarioTruth scenario_truth(const ScenarioConfig& config) {
  const Coefs c = scenario_coefs(config.scenario);
  ScenarioTruth truth;
  truth.candidates = scenario_candidates(config);
  const auto p = static_cast<Eigen::Index>(truth.candidates.size());
  truth.beta0 = c.a;
  truth.beta = Eigen::VectorXd::Zero(p);
  truth.beta[0] = c.av1;
  truth.beta[2] = c.av3;
  truth.modifier.resize(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) truth.modifier[static_cast<std::size_t>(j)] = truth.beta[j] != 0.0;
  return truth;
}

ScenarioDraw generate_scenario(const ScenarioConfig& config, Rng& rng) {
  config.validate();
  const Coefs c = scenario_coefs(config.scenario);
  const int k = noise_count(config);
  const Eigen::Index n = config.n;
  std::vector<std::string> names = base_names();
  for (int j = 0; j < k; ++j) names.push_back("N" + std::to_string(j + 1));

  Eigen::MatrixXd w(n, 6 + k);
  Eigen::VectorXd a(n), y(n);
  ScenarioTruth truth = scenario_truth(config);
  truth.nuisance.q0.resize(n);
  truth.nuisance.q1.resize(n);
  truth.nuisance.g1.resize(n);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < 6; ++j) w(i, j) = std::bernoulli_distribution(kBaseProb[j])(rng) ? 1.0 : 0.0;
    for (int j = 0; j < k; ++j) w(i, 6 + j) = std::bernoulli_distribution(kNoiseProb)(rng) ? 1.0 : 0.0;
    const double x = w(i, 0), v1 = w(i, 1), v2 = w(i, 2), v3 = w(i, 3), v4 = w(i, 4), z = w(i, 5);
    const double g = expit(c.gz * z + c.gx * x + c.gv1 * v1 + c.gv2 * v2);
    a[i] = std::bernoulli_distribution(g)(rng) ? 1.0 : 0.0;
    truth.nuisance.g1[i] = g;
    truth.nuisance.q0[i] = outcome_mean(c, 0.0, x, v1, v2, v3, v4);
    truth.nuisance.q1[i] = outcome_mean(c, 1.0, x, v1, v2, v3, v4);
    y[i] = (a[i] == 1.0 ? truth.nuisance.q1[i] : truth.nuisance.q0[i]) + noise(rng);
  }
  return {ObservationTable(std::move(names), std::move(w), std::move(a), std::move(y)), std::move(truth)};
}

ImplementationSpecs implementation_specs(const ScenarioConfig& config) {
  const Scenario s = config.scenario;
  const HalModel hal{config.hal_order, config.folds};
  switch (config.implementation) {
    case Implementation::kQcgc:
      return {correct_outcome_spec(s), correct_propensity_spec(), std::nullopt};
    case Implementation::kQc:
      return {correct_outcome_spec(s), parse_formula("1 + X", Family::kLogistic), std::nullopt};
    case Implementation::kGc:
      return {parse_formula("1 + A + V3", Family::kLinear), correct_propensity_spec(), std::nullopt};
    case Implementation::kHal:
      return {hal, hal, std::nullopt};
    case Implementation::kNLin: {
      std::string f = "1 + A";
      std::vector<std::string> names = base_names();
      for (int j = 0; j < noise_count(config); ++j) names.push_back("N" + std::to_string(j + 1));
      for (const auto& name : names) f += " + " + name;
      for (const auto& name : names) f += " + A*" + name;
      ModelSpec spec = parse_formula(f, Family::kLinear);
      return {spec, correct_propensity_spec(), spec};
    }
    case Implementation::kCLin: {
      ModelSpec spec = correct_outcome_spec(s);
      // every candidate needs its own interaction to have an interval
      for (const auto& name : scenario_candidates(config)) {
        Term t{{name}, true};
        if (std::find(spec.terms.begin(), spec.terms.end(), t) == spec.terms.end()) spec.terms.push_back(t);
      }
      return {spec, correct_propensity_spec(), spec};
    }
  }
  throw ValidationError("unknown scenario/implementation combination");
}

std::vector<InteractionEstimate> naive_linear_analysis(const ObservationTable& table, const ModelSpec& spec,
                                                       const std::vector<std::string>& candidates, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  const LinearFit fit = fit_ols(build_design(table, spec), table.outcome(), spec.labels());
  const auto df = fit.df_residual();
  if (df < 1) throw ValidationError("comparator model has no residual degrees of freedom");
  const boost::math::students_t dist(static_cast<double>(df));
  const double crit = boost::math::quantile(boost::math::complement(dist, alpha / 2.0));
  const Eigen::VectorXd se = fit.standard_errors();

  std::vector<InteractionEstimate> out;
  for (const auto& name : candidates) {
    const Term wanted{{name}, true};
    const auto it = std::find(spec.terms.begin(), spec.terms.end(), wanted);
    if (it == spec.terms.end()) throw ValidationError("comparator model has no term A*" + name);
    const auto k = static_cast<Eigen::Index>(it - spec.terms.begin());
    InteractionEstimate e;
    e.name = name;
    e.estimate = fit.coefficients[k];
    e.std_error = se[k];
    e.ci_lo = e.estimate - crit * e.std_error;
    e.ci_hi = e.estimate + crit * e.std_error;
    const double t = std::abs(e.estimate) / e.std_error;
    e.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, t)));
    out.push_back(e);
  }
  return out;
}

double percent_selection(const std::vector<ReplicationRecord>& records, std::size_t j) {
  int ok = 0, hit = 0;
  for (const auto& r : records) {
    if (r.failed) continue;
    ++ok;
    if (r.selected.at(j)) ++hit;
  }
  return ok == 0 ? 0.0 : 100.0 * hit / ok;
}

std::optional<double> coverage(const std::vector<ReplicationRecord>& records, const ScenarioTruth& truth,
                               std::size_t j, CoverageRule rule) {
  int denom = 0, covered = 0;
  for (const auto& r : records) {
    if (r.failed) continue;
    if (rule == CoverageRule::kTrueModel && r.selected != truth.modifier) continue;
    const auto& ci = r.ci.at(j);
    if (!ci) continue;
    ++denom;
    const double b = truth.beta[static_cast<Eigen::Index>(j)];
    if (ci->first <= b && b <= ci->second) ++covered;
  }
  if (denom == 0) return std::nullopt;
  return 100.0 * covered / denom;
}

double fcr(const std::vector<ReplicationRecord>& records, const ScenarioTruth& truth) {
  long selected = 0, missed = 0;
  for (const auto& r : records) {
    if (r.failed) continue;
    for (std::size_t j = 0; j < r.selected.size(); ++j) {
      if (!r.selected[j]) continue;
      ++selected;
      const auto& ci = r.ci.at(j);
      const double b = truth.beta[static_cast<Eigen::Index>(j)];
      if (!ci || b < ci->first || b > ci->second) ++missed;
    }
  }
  return selected == 0 ? 0.0 : static_cast<double>(missed) / static_cast<double>(selected);
}

ReplicationRecord run_replication(const ScenarioConfig& config, int rep) {
  ReplicationRecord record;
  record.rep = rep;
  Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(rep)));
  const ScenarioDraw draw = generate_scenario(config, rng);
  const auto& names = draw.truth.candidates;
  const std::size_t p = names.size();
  record.beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  record.selected.assign(p, false);
  record.ci.assign(p, std::nullopt);
  const ImplementationSpecs specs = implementation_specs(config);
  try {
    if (specs.comparator) {
      const auto est = naive_linear_analysis(draw.table, *specs.comparator, names, config.alpha);
      for (std::size_t j = 0; j < p; ++j) {
        record.beta[static_cast<Eigen::Index>(j)] = est[j].estimate;
        record.selected[j] = est[j].p_value < 0.05;
        record.ci[j] = std::make_pair(est[j].ci_lo, est[j].ci_hi);
      }
      return record;
    }
    PipelineOptions options;
    options.gamma = config.gamma;
    options.truncation = config.truncation;
    options.folds = config.folds;
    options.alpha = config.alpha;
    options.seed = derive_seed(derive_seed(config.seed, static_cast<std::uint64_t>(rep)), kPipelineStream);
    const PipelineResult result = run_pipeline(draw.table, specs.q, specs.g, EmCandidateSet{names}, options);
    record.beta = result.fit.beta;
    for (const auto& iv : result.intervals) {
      const auto j = static_cast<std::size_t>(iv.index);
      record.selected[j] = true;
      record.ci[j] = std::make_pair(iv.ci_lo, iv.ci_hi);
    }
  } catch (const PipelineError& e) {
    record.failed = true;
    record.error = e.what();
  } catch (const ValidationError& e) {
    record.failed = true;
    record.error = e.what();
  } catch (const NumericalError& e) {
    record.failed = true;
    record.error = e.what();
  }
  return record;
}

SimulationReport summarize(const ScenarioConfig& config, const std::vector<ReplicationRecord>& records) {
  const ScenarioTruth truth = scenario_truth(config);
  const CoverageRule rule =
      is_linear_comparator(config.implementation) ? CoverageRule::kAllReps : CoverageRule::kTrueModel;
  SimulationReport report;
  report.config = config;
  report.reps = static_cast<int>(records.size());
  for (const auto& r : records) report.failed_reps += r.failed ? 1 : 0;
  const int ok = report.reps - report.failed_reps;
  for (std::size_t j = 0; j < truth.candidates.size(); ++j) {
    VariableSummary v;
    v.name = truth.candidates[j];
    v.modifier = truth.modifier[j];
    double sum = 0.0;
    for (const auto& r : records)
      if (!r.failed) sum += r.beta[static_cast<Eigen::Index>(j)];
    v.mean_beta = ok == 0 ? 0.0 : sum / ok;
    v.pct_sel = percent_selection(records, j);
    v.pct_cov = coverage(records, truth, j, rule);
    report.variables.push_back(std::move(v));
  }
  report.fcr = fcr(records, truth);
  return report;
}

SimulationReport run_replications(const ScenarioConfig& config, int threads) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  std::vector<ReplicationRecord> records(static_cast<std::size_t>(config.reps));
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (int rep = next++; rep < config.reps; rep = next++) {
      try {
        records[static_cast<std::size_t>(rep)] = run_replication(config, rep);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        next = config.reps;
      }
    }
  };
  const int workers = std::clamp(threads, 1, config.reps);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  SimulationReport report = summarize(config, records);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace emlasso
