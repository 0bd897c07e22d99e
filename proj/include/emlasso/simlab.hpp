#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "emlasso/drpseudo.hpp"
#include "emlasso/emselect.hpp"
#include "emlasso/rng.hpp"
#include "emlasso/tabular.hpp"

namespace emlasso {

enum class Scenario { kS1, kS2, kS3, kHD1 };
enum class Implementation { kQcgc, kQc, kGc, kHal, kNLin, kCLin };

// Lower-case tokens: s1 s2 s3 hd1, qcgc qc gc hal nlin clin.
Scenario parse_scenario(std::string_view token);
Implementation parse_implementation(std::string_view token);
std::string to_string(Scenario s);
std::string to_string(Implementation impl);
bool is_linear_comparator(Implementation impl);

struct ScenarioConfig {
  Scenario scenario = Scenario::kS1;
  Eigen::Index n = 1000;
  int reps = 1000;
  std::uint64_t seed = 1;
  Implementation implementation = Implementation::kQcgc;
  double alpha = 0.05;
  int folds = 10;
  std::optional<Truncation> truncation;
  double gamma = 1.0;
  int noise_covariates = 50;  // HD1 only
  int hal_order = 3;

  void validate() const;
};

struct ScenarioTruth {
  std::vector<std::string> candidates;
  double beta0 = 0.0;
  Eigen::VectorXd beta;          // true CATE slopes, one per candidate
  std::vector<bool> modifier;    // beta_j != 0
  NuisanceEstimates nuisance;    // true Qbar(0,W), Qbar(1,W), g(1|W)
};

struct ScenarioDraw {
  ObservationTable table;
  ScenarioTruth truth;
};

// Covariate columns in order X, V1..V4, Z, then N1..Nk for HD1.
ScenarioDraw generate_scenario(const ScenarioConfig& config, Rng& rng);

// Truth without drawing data (candidates, beta, modifier flags).
ScenarioTruth scenario_truth(const ScenarioConfig& config);

// Names of the candidate effect modifiers for a scenario.
std::vector<std::string> scenario_candidates(const ScenarioConfig& config);

struct ImplementationSpecs {
  NuisanceModel q;
  NuisanceModel g;
  std::optional<ModelSpec> comparator;  // set for NLin and CLin
};

ImplementationSpecs implementation_specs(const ScenarioConfig& config);

struct InteractionEstimate {
  std::string name;  // candidate name
  double estimate = 0.0;
  double std_error = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double p_value = 1.0;
};

// OLS of Y on the comparator spec; Wald intervals with t quantiles for the
// A*candidate interaction of each candidate.
std::vector<InteractionEstimate> naive_linear_analysis(const ObservationTable& table, const ModelSpec& spec,
                                                       const std::vector<std::string>& candidates, double alpha);

struct ReplicationRecord {
  int rep = 0;
  bool failed = false;
  std::string error;
  Eigen::VectorXd beta;
  std::vector<bool> selected;
  std::vector<std::optional<std::pair<double, double>>> ci;
};

enum class CoverageRule {
  kTrueModel,  // only reps whose selected set equals the true modifier set
  kAllReps,    // every rep, unconditionally
};

// Failed records are skipped in every metric.
double percent_selection(const std::vector<ReplicationRecord>& records, std::size_t j);
std::optional<double> coverage(const std::vector<ReplicationRecord>& records, const ScenarioTruth& truth,
                               std::size_t j, CoverageRule rule = CoverageRule::kTrueModel);
// Non-covering intervals over selected coefficients, pooled; 0 when nothing
// was selected.
double fcr(const std::vector<ReplicationRecord>& records, const ScenarioTruth& truth);

struct VariableSummary {
  std::string name;
  double mean_beta = 0.0;
  double pct_sel = 0.0;
  std::optional<double> pct_cov;
  bool modifier = false;
};

struct SimulationReport {
  ScenarioConfig config;
  std::vector<VariableSummary> variables;
  double fcr = 0.0;
  int failed_reps = 0;
  int reps = 0;
  double wall_seconds = 0.0;  // informational, never serialized
  bool has_config = true;     // false when read back from CSV
};

ReplicationRecord run_replication(const ScenarioConfig& config, int rep);

SimulationReport summarize(const ScenarioConfig& config, const std::vector<ReplicationRecord>& records);

// Runs config.reps replications on `threads` workers. Output is identical
// for any thread count.
SimulationReport run_replications(const ScenarioConfig& config, int threads = 1);

}  // namespace emlasso
