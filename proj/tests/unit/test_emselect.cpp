#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "emlasso/emselect.hpp"
#include "emlasso/error.hpp"
#include "emlasso/simlab.hpp"
#include "support.hpp"

using namespace emlasso;

namespace {

Eigen::MatrixXd binary_candidates(Eigen::Index n, std::mt19937_64& rng) {
  const double probs[4] = {0.5, 0.6, 0.5, 0.7};
  Eigen::MatrixXd v(n, 4);
  for (int j = 0; j < 4; ++j) {
    std::bernoulli_distribution coin(probs[j]);
    for (Eigen::Index i = 0; i < n; ++i) v(i, j) = coin(rng) ? 1.0 : 0.0;
  }
  return v;
}

Eigen::VectorXd noiseless_d(const Eigen::MatrixXd& v) {
  return (1.0 + 0.5 * v.col(0).array() + v.col(2).array()).matrix();
}

}  // namespace

TEST_CASE("pilot_ols: noiseless pseudo-outcome") {
  std::mt19937_64 rng(1);
  const auto v = binary_candidates(200, rng);
  const auto fit = pilot_ols(noiseless_d(v), v);
  CHECK((fit.coefficients.tail(4) - Eigen::Vector4d(0.5, 0, 1, 0)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(fit.residual_variance < 1e-20);

  // permuting candidates permutes the pilot
  const Eigen::VectorXd d = noiseless_d(v) + 0.3 * testutil::gaussian_vector(200, rng);
  Eigen::MatrixXd vp(200, 4);
  vp << v.col(3), v.col(1), v.col(0), v.col(2);
  const Eigen::VectorXd a = pilot_ols(d, v).coefficients.tail(4);
  const Eigen::VectorXd b = pilot_ols(d, vp).coefficients.tail(4);
  CHECK(std::abs(a[3] - b[0]) < 1e-12);
  CHECK(std::abs(a[1] - b[1]) < 1e-12);
  CHECK(std::abs(a[0] - b[2]) < 1e-12);
  CHECK(std::abs(a[2] - b[3]) < 1e-12);
}

TEST_CASE("pilot_ols: needs n > p + 1") {
  std::mt19937_64 rng(2);
  const auto v = binary_candidates(5, rng);
  CHECK_THROWS_AS(pilot_ols(Eigen::VectorXd::Ones(5), v), ValidationError);
}

TEST_CASE("pilot_ols: scenario-1 Qcgc mean pilot at n = 10000") {
  ScenarioConfig c;
  c.n = 10000;
  const auto specs = implementation_specs(c);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(4);
  const int reps = 200;
  for (int rep = 0; rep < reps; ++rep) {
    Rng rng(derive_seed(31, static_cast<std::uint64_t>(rep)));
    const auto draw = generate_scenario(c, rng);
    const auto nuisance = estimate_nuisances(draw.table, specs.q, specs.g, 1);
    const auto d = pseudo_outcome(nuisance, draw.table.treatment(), draw.table.outcome());
    sum += pilot_ols(d.d, draw.table.select(draw.truth.candidates)).coefficients.tail(4);
  }
  CHECK((sum / reps - Eigen::Vector4d(0.5, 0, 1, 0)).cwiseAbs().maxCoeff() < 0.03);
}

TEST_CASE("adaptive_weights") {
  const Eigen::VectorXd w = adaptive_weights(Eigen::Vector2d(0.5, 1.0), 1.0);
  CHECK(w[0] == doctest::Approx(2.0));
  CHECK(w[1] == doctest::Approx(1.0));
  CHECK(adaptive_weights(Eigen::VectorXd::Constant(1, 0.5), 2.0)[0] == doctest::Approx(4.0));
  CHECK(adaptive_weights(Eigen::VectorXd::Constant(1, -0.25), 1.0)[0] == doctest::Approx(4.0));
  const Eigen::VectorXd z = adaptive_weights(Eigen::Vector2d(0.0, 3.0), 1.0);
  CHECK(std::isinf(z[0]));
  // default tolerance is relative to the largest pilot
  CHECK(std::isinf(adaptive_weights(Eigen::Vector2d(5e-8, 10.0), 1.0)[0]));
  CHECK_FALSE(std::isinf(adaptive_weights(Eigen::Vector2d(5e-8, 1.0), 1.0)[0]));
  CHECK_THROWS_AS(adaptive_weights(Eigen::Vector2d(1, 1), 0.0), ValidationError);
}

TEST_CASE("select: zero pilot excludes the candidate at every lambda") {
  std::mt19937_64 rng(3);
  const auto v = binary_candidates(300, rng);
  const Eigen::VectorXd d = Eigen::VectorXd::Constant(300, 2.5);
  const auto fit = select_effect_modifiers(d, v, 1.0, {});
  CHECK(fit.active_set.empty());
  CHECK(fit.beta.isZero());
  CHECK(fit.beta0 == doctest::Approx(2.5));
  CHECK((fit.weights.array() == kInfiniteWeight).all());
}

TEST_CASE("select: noiseless pipeline") {
  std::mt19937_64 rng(4);
  const auto v = binary_candidates(500, rng);
  const auto fit = select_effect_modifiers(noiseless_d(v), v, 1.0, {}, {"V1", "V2", "V3", "V4"});
  CHECK(fit.selected_names() == std::vector<std::string>{"V1", "V3"});
  CHECK(std::abs(fit.beta[0] - 0.5) < 1e-3);
  CHECK(std::abs(fit.beta[2] - 1.0) < 1e-3);
  CHECK(fit.cv);
}

TEST_CASE("estimate_cate") {
  EmFit fit;
  fit.beta0 = 1.0;
  fit.beta = Eigen::Vector4d(0.5, 0, 1, 0);
  CHECK(estimate_cate(fit, Eigen::Vector4d::Zero()) == 1.0);
  CHECK(estimate_cate(fit, Eigen::Vector4d(1, 0, 1, 0)) == doctest::Approx(2.5));
  CHECK_THROWS_AS(estimate_cate(fit, Eigen::Vector2d::Zero()), ValidationError);
}

TEST_CASE("select: fitted CATE averages to the pseudo-outcome mean") {
  std::mt19937_64 rng(5);
  const auto v = binary_candidates(400, rng);
  const Eigen::VectorXd d = noiseless_d(v) + 2.0 * testutil::gaussian_vector(400, rng);
  const auto fit = select_effect_modifiers(d, v, 1.0, {});
  double mean = 0.0;
  for (int i = 0; i < 400; ++i) mean += estimate_cate(fit, v.row(i).transpose());
  CHECK(mean / 400 == doctest::Approx(d.mean()).epsilon(1e-10));
}

TEST_CASE("select: scale equivariance") {
  std::mt19937_64 rng(6);
  const auto v = binary_candidates(300, rng);
  const Eigen::VectorXd d = noiseless_d(v) + testutil::gaussian_vector(300, rng);
  EmCvConfig cv;
  cv.seed = 17;
  const auto a = select_effect_modifiers(d, v, 1.0, cv);
  const auto b = select_effect_modifiers(3.0 * d, v, 1.0, cv);
  CHECK(a.active_set == b.active_set);
  CHECK(b.beta0 == doctest::Approx(3.0 * a.beta0).epsilon(1e-8));
  CHECK((b.beta - 3.0 * a.beta).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("select: candidate order does not change the selected names") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 10; ++rep) {
    const auto v = binary_candidates(300, rng);
    const Eigen::VectorXd d = noiseless_d(v) + 1.5 * testutil::gaussian_vector(300, rng);
    Eigen::MatrixXd vp(300, 4);
    vp << v.col(2), v.col(0), v.col(3), v.col(1);
    const auto a = select_effect_modifiers(d, v, 1.0, {}, {"V1", "V2", "V3", "V4"});
    const auto b = select_effect_modifiers(d, vp, 1.0, {}, {"V3", "V1", "V4", "V2"});
    const auto na = a.selected_names(), nb = b.selected_names();
    CHECK(std::set<std::string>(na.begin(), na.end()) == std::set<std::string>(nb.begin(), nb.end()));
  }
}

TEST_CASE("run_pipeline: scenario-1 Qcgc selects V1 and V3") {
  ScenarioConfig c;
  const auto specs = implementation_specs(c);
  const EmCandidateSet em{scenario_candidates(c)};
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(derive_seed(555, seed));
    const auto draw = generate_scenario(c, rng);
    PipelineOptions o;
    o.seed = seed;
    const auto r = run_pipeline(draw.table, specs.q, specs.g, em, o);
    const auto names = r.fit.selected_names();
    if (std::count(names.begin(), names.end(), "V1") && std::count(names.begin(), names.end(), "V3")) ++hits;
    for (const auto& iv : r.intervals) {
      CHECK(iv.nu_lo < iv.estimate);
      CHECK(iv.estimate < iv.nu_hi);
      CHECK(iv.ci_lo < iv.ci_hi);
      const double f = truncnorm_cdf(iv.estimate, iv.estimate, iv.sigma_star2, iv.nu_lo, iv.nu_hi).value;
      if (f >= 0.025 && f <= 0.975) {
        CHECK(iv.ci_lo <= iv.estimate);
        CHECK(iv.estimate <= iv.ci_hi);
      }
    }
    CHECK(r.intervals.size() == r.fit.active_set.size());
  }
  CHECK(hits >= 90);
}

TEST_CASE("run_pipeline: deterministic and stage-tagged") {
  ScenarioConfig c;
  c.n = 400;
  Rng rng(9);
  const auto draw = generate_scenario(c, rng);
  const auto specs = implementation_specs(c);
  const EmCandidateSet em{scenario_candidates(c)};
  PipelineOptions o;
  o.seed = 4;
  const auto a = run_pipeline(draw.table, specs.q, specs.g, em, o);
  const auto b = run_pipeline(draw.table, specs.q, specs.g, em, o);
  CHECK(a.fit.beta == b.fit.beta);
  CHECK(a.fit.lambda == b.fit.lambda);
  CHECK(a.pseudo.provenance.find("q=") == 0);

  try {
    run_pipeline(draw.table, specs.q, parse_formula("1 + A + X", Family::kLogistic), em, o);
    FAIL("expected PipelineError");
  } catch (const PipelineError& e) {
    CHECK(e.stage() == "propensity model");
    CHECK_FALSE(e.numerical());
  }
  try {
    run_pipeline(draw.table, specs.q, specs.g, EmCandidateSet{{"V1", "Nope"}}, o);
    FAIL("expected PipelineError");
  } catch (const PipelineError& e) {
    CHECK(e.stage() == "candidates");
  }
}

TEST_CASE("run_pipeline: HAL nuisances run end to end") {
  ScenarioConfig c;
  c.n = 300;
  c.implementation = Implementation::kHal;
  Rng rng(10);
  const auto draw = generate_scenario(c, rng);
  const auto specs = implementation_specs(c);
  PipelineOptions o;
  o.truncation = Truncation{0.05, 0.95};
  const auto r = run_pipeline(draw.table, specs.q, specs.g, EmCandidateSet{scenario_candidates(c)}, o);
  CHECK(r.summary.q_model == "hal(max_order=3)");
  CHECK(r.nuisance.g1.minCoeff() >= 0.05);
  CHECK(r.nuisance.g1.maxCoeff() <= 0.95);
}
