#include "emlasso/emselect.hpp"

#include <cmath>
#include <sstream>

#include "emlasso/error.hpp"
#include "emlasso/rng.hpp"

namespace emlasso {

namespace {

enum SeedStream : std::uint64_t { kOutcomeStream = 1, kPropensityStream = 2, kSelectionStream = 3 };

template <class F>
auto staged(const char* stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const PipelineError&) {
    throw;
  } catch (const NumericalError& e) {
    throw PipelineError(stage, e.what(), true);
  } catch (const ValidationError& e) {
    throw PipelineError(stage, e.what(), false);
  }
}

Eigen::MatrixXd with_treatment(const Eigen::MatrixXd& w, const Eigen::VectorXd& a) {
  Eigen::MatrixXd out(w.rows(), w.cols() + 1);
  out.leftCols(w.cols()) = w;
  out.col(w.cols()) = a;
  return out;
}

}  // namespace

std::vector<std::string> EmFit::selected_names() const {
  std::vector<std::string> out;
  for (const auto j : active_set) out.push_back(names[static_cast<std::size_t>(j)]);
  return out;
}

LinearFit pilot_ols(const Eigen::VectorXd& d, const Eigen::MatrixXd& v, std::vector<std::string> names) {
  const Eigen::Index n = v.rows();
  const Eigen::Index p = v.cols();
  if (d.size() != n) throw ValidationError("pilot regression: pseudo-outcome length differs from candidate rows");
  if (n <= p + 1)
    throw ValidationError("pilot regression needs n > p + 1 (n=" + std::to_string(n) + ", p=" + std::to_string(p) + ")");
  Eigen::MatrixXd x(n, p + 1);
  x.col(0).setOnes();
  x.rightCols(p) = v;
  if (names.empty()) {
    for (Eigen::Index j = 0; j < p; ++j) names.push_back("V" + std::to_string(j + 1));
  }
  names.insert(names.begin(), "(Intercept)");
  return fit_ols(x, d, std::move(names));
}

Eigen::VectorXd adaptive_weights(const Eigen::VectorXd& pilot, double gamma, std::optional<double> zero_tol) {
  if (!(gamma > 0.0)) throw ValidationError("adaptive weights need gamma > 0");
  const double largest = pilot.size() > 0 ? pilot.cwiseAbs().maxCoeff() : 0.0;
  const double tol = zero_tol.value_or(1e-8 * std::max(1.0, largest));
  Eigen::VectorXd w(pilot.size());
  for (Eigen::Index j = 0; j < pilot.size(); ++j) {
    const double b = std::abs(pilot[j]);
    w[j] = b < tol ? kInfiniteWeight : std::pow(b, -gamma);
  }
  return w;
}

EmFit select_effect_modifiers(const Eigen::VectorXd& d, const Eigen::MatrixXd& v, double gamma,
                              const EmCvConfig& cv_config, std::vector<std::string> names) {
  const Eigen::Index p = v.cols();
  if (names.empty()) {
    for (Eigen::Index j = 0; j < p; ++j) names.push_back("V" + std::to_string(j + 1));
  }
  if (static_cast<Eigen::Index>(names.size()) != p) throw ValidationError("candidate name count differs from columns");

  EmFit fit;
  fit.names = names;
  fit.gamma = gamma;
  const LinearFit pilot = pilot_ols(d, v, names);
  fit.pilot_intercept = pilot.coefficients[0];
  fit.pilot = pilot.coefficients.tail(p);
  fit.pilot_sigma2 = pilot.residual_variance;
  fit.weights = adaptive_weights(fit.pilot, gamma);
  fit.beta = Eigen::VectorXd::Zero(p);

  const bool any_finite = (fit.weights.array() < kInfiniteWeight).any();
  if (!any_finite) {
    fit.beta0 = d.mean();
    return fit;
  }
  LassoProblem problem = LassoProblem::dense(v, d, fit.weights);
  const auto grid = lambda_grid(problem, cv_config.n_lambdas, cv_config.ratio);
  auto cv = cv_select_lambda(problem, cv_config.folds, grid, cv_config.seed);
  const LassoSolution sol = solve_weighted_lasso(problem, cv.chosen_lambda);
  fit.cv = std::move(cv);
  fit.lambda = sol.lambda;
  fit.beta0 = sol.intercept;
  fit.beta = sol.coefficients;
  fit.active_set = sol.active_set;
  fit.signs = sol.signs;
  return fit;
}

double estimate_cate(const EmFit& fit, const Eigen::VectorXd& v) {
  if (v.size() != fit.beta.size()) throw ValidationError("estimate_cate: candidate vector length mismatch");
  return fit.beta0 + v.dot(fit.beta);
}

std::string describe(const NuisanceModel& model) {
  if (const auto* hal = std::get_if<HalModel>(&model))
    return "hal(max_order=" + std::to_string(hal->max_order) + ")";
  const auto& spec = std::get<ModelSpec>(model);
  std::string out;
  for (const auto& label : spec.labels()) out += (out.empty() ? "" : " + ") + label;
  return out;
}

NuisanceEstimates estimate_nuisances(const ObservationTable& table, const NuisanceModel& q_model,
                                     const NuisanceModel& g_model, std::uint64_t seed) {
  NuisanceEstimates est;
  const Eigen::Index n = table.n();
  staged("outcome model", [&] {
    if (const auto* spec = std::get_if<ModelSpec>(&q_model)) {
      const Eigen::MatrixXd x = build_design(table, *spec);
      const Eigen::MatrixXd x0 = build_design(table, *spec, 0.0);
      const Eigen::MatrixXd x1 = build_design(table, *spec, 1.0);
      if (spec->family == Family::kLinear) {
        const LinearFit fit = fit_ols(x, table.outcome(), spec->labels());
        est.q0 = predict_linear(fit, x0);
        est.q1 = predict_linear(fit, x1);
      } else {
        const LogisticFit fit = fit_logistic(x, table.outcome(), {}, spec->labels());
        if (!fit.converged) throw NumericalError("logistic outcome regression did not converge");
        est.q0 = predict_probability(fit, x0);
        est.q1 = predict_probability(fit, x1);
      }
    } else {
      const auto& hal = std::get<HalModel>(q_model);
      const Eigen::MatrixXd wa = with_treatment(table.covariates(), table.treatment());
      HalOptions options;
      options.max_order = hal.max_order;
      options.folds = hal.folds;
      options.seed = derive_seed(seed, kOutcomeStream);
      const HalFit fit = fit_hal(wa, table.outcome(), Family::kLinear, options);
      est.q0 = hal_predict(fit, with_treatment(table.covariates(), Eigen::VectorXd::Zero(n)));
      est.q1 = hal_predict(fit, with_treatment(table.covariates(), Eigen::VectorXd::Ones(n)));
    }
  });
  staged("propensity model", [&] {
    if (const auto* spec = std::get_if<ModelSpec>(&g_model)) {
      if (spec->uses_treatment()) throw ValidationError("propensity model cannot contain the treatment");
      const Eigen::MatrixXd x = build_design(table, *spec);
      const LogisticFit fit = fit_logistic(x, table.treatment(), {}, spec->labels());
      if (!fit.converged) throw NumericalError("propensity regression did not converge");
      est.g1 = predict_probability(fit, x);
    } else {
      const auto& hal = std::get<HalModel>(g_model);
      if (table.num_covariates() == 0) throw ValidationError("HAL propensity model needs covariates");
      HalOptions options;
      options.max_order = hal.max_order;
      options.folds = hal.folds;
      options.seed = derive_seed(seed, kPropensityStream);
      const HalFit fit = fit_hal(table.covariates(), table.treatment(), Family::kLogistic, options);
      est.g1 = hal_predict(fit, table.covariates());
    }
  });
  return est;
}

PipelineResult run_from_nuisances(const ObservationTable& table, NuisanceEstimates nuisance, const EmCandidateSet& em,
                                  const PipelineOptions& options) {
  PipelineResult result;
  staged("candidates", [&] { em.validate(table); });
  result.nuisance = staged("pseudo-outcome", [&] { return with_truncation(std::move(nuisance), options.truncation); });
  result.pseudo =
      staged("pseudo-outcome", [&] { return pseudo_outcome(result.nuisance, table.treatment(), table.outcome()); });
  const Eigen::MatrixXd v = table.select(em.names);
  EmCvConfig cv;
  cv.folds = options.folds;
  cv.n_lambdas = options.n_lambdas;
  cv.ratio = options.ratio;
  cv.seed = derive_seed(options.seed, kSelectionStream);
  result.fit = staged("selection", [&] { return select_effect_modifiers(result.pseudo.d, v, options.gamma, cv, em.names); });
  result.intervals = staged("selective inference", [&] {
    return selective_inference(v, result.pseudo.d, result.fit.lambda, result.fit.weights, result.fit.active_set,
                               result.fit.signs, result.fit.pilot_sigma2, options.alpha, em.names);
  });

  const auto& g1 = result.nuisance.g1;
  result.summary.mean_q0 = result.nuisance.q0.mean();
  result.summary.mean_q1 = result.nuisance.q1.mean();
  result.summary.mean_g1 = g1.mean();
  result.summary.min_g1 = g1.minCoeff();
  result.summary.max_g1 = g1.maxCoeff();
  return result;
}

PipelineResult run_pipeline(const ObservationTable& table, const NuisanceModel& q_model, const NuisanceModel& g_model,
                            const EmCandidateSet& em, const PipelineOptions& options) {
  staged("candidates", [&] { em.validate(table); });
  NuisanceEstimates nuisance = estimate_nuisances(table, q_model, g_model, options.seed);
  PipelineResult result = run_from_nuisances(table, std::move(nuisance), em, options);
  result.summary.q_model = describe(q_model);
  result.summary.g_model = describe(g_model);
  std::ostringstream prov;
  prov << "q=" << result.summary.q_model << "; g=" << result.summary.g_model;
  result.pseudo.provenance = prov.str();
  return result;
}

}  // namespace emlasso
