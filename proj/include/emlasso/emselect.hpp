#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "emlasso/drpseudo.hpp"
#include "emlasso/hal.hpp"
#include "emlasso/lassocd.hpp"
#include "emlasso/linmod.hpp"
#include "emlasso/selinf.hpp"
#include "emlasso/tabular.hpp"

namespace emlasso {

struct EmFit {
  std::vector<std::string> names;
  Eigen::VectorXd pilot;  // full-model OLS slopes, one per candidate
  double pilot_intercept = 0.0;
  double pilot_sigma2 = 0.0;
  double gamma = 1.0;
  Eigen::VectorXd weights;  // +inf marks an excluded candidate
  double lambda = 0.0;
  double beta0 = 0.0;
  Eigen::VectorXd beta;
  std::vector<Eigen::Index> active_set;
  std::vector<int> signs;
  std::optional<CvResult> cv;

  std::vector<std::string> selected_names() const;
};

struct EmCvConfig {
  int folds = 10;
  int n_lambdas = 100;
  double ratio = 1e-4;
  std::uint64_t seed = 1;
};

LinearFit pilot_ols(const Eigen::VectorXd& d, const Eigen::MatrixXd& v, std::vector<std::string> names = {});

// w_j = |pilot_j|^-gamma; +inf when |pilot_j| < zero_tol. With no explicit
// tolerance, zero_tol = 1e-8 * max(1, max_j |pilot_j|).
Eigen::VectorXd adaptive_weights(const Eigen::VectorXd& pilot, double gamma, std::optional<double> zero_tol = {});

EmFit select_effect_modifiers(const Eigen::VectorXd& d, const Eigen::MatrixXd& v, double gamma,
                              const EmCvConfig& cv_config, std::vector<std::string> names = {});

double estimate_cate(const EmFit& fit, const Eigen::VectorXd& v);

// How to estimate one nuisance function.
struct HalModel {
  int max_order = 3;  // capped at the covariate count
  int folds = 10;
};
using NuisanceModel = std::variant<ModelSpec, HalModel>;

struct PipelineOptions {
  double gamma = 1.0;
  std::optional<Truncation> truncation;
  int folds = 10;
  int n_lambdas = 100;
  double ratio = 1e-4;
  double alpha = 0.05;
  std::uint64_t seed = 1;
};

struct NuisanceSummary {
  double mean_q0 = 0.0;
  double mean_q1 = 0.0;
  double mean_g1 = 0.0;
  double min_g1 = 0.0;
  double max_g1 = 0.0;
  std::string q_model;
  std::string g_model;
};

struct PipelineResult {
  EmFit fit;
  std::vector<SelectiveInterval> intervals;
  NuisanceEstimates nuisance;
  PseudoOutcome pseudo;
  NuisanceSummary summary;
};

// Which pipeline stage raised an error.
class PipelineError : public std::runtime_error {
 public:
  PipelineError(std::string stage, const std::string& what, bool numerical)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)), numerical_(numerical) {}
  const std::string& stage() const { return stage_; }
  bool numerical() const { return numerical_; }

 private:
  std::string stage_;
  bool numerical_;
};

// Steps 1-3: nuisance estimates from the table.
NuisanceEstimates estimate_nuisances(const ObservationTable& table, const NuisanceModel& q_model,
                                     const NuisanceModel& g_model, std::uint64_t seed);

// Nuisances, pseudo-outcome, adaptive-LASSO selection and selective
// inference on the active set. Deterministic given (table, options).
PipelineResult run_pipeline(const ObservationTable& table, const NuisanceModel& q_model, const NuisanceModel& g_model,
                            const EmCandidateSet& em, const PipelineOptions& options);

// Stage after nuisances; shared by run_pipeline and the simulation lab.
PipelineResult run_from_nuisances(const ObservationTable& table, NuisanceEstimates nuisance, const EmCandidateSet& em,
                                  const PipelineOptions& options);

std::string describe(const NuisanceModel& model);

}  // namespace emlasso
