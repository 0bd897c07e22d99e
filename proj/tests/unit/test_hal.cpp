#include "doctest.h"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "emlasso/error.hpp"
#include "emlasso/hal.hpp"
#include "emlasso/linmod.hpp"
#include "emlasso/simlab.hpp"
#include "support.hpp"

using namespace emlasso;

namespace {

std::vector<Eigen::VectorXd> basis_columns(const HalBasis& b) {
  std::vector<Eigen::VectorXd> out;
  for (Eigen::Index j = 0; j < b.size(); ++j) out.push_back(b.columns->column(j));
  return out;
}

Eigen::MatrixXd bernoulli_matrix(Eigen::Index n, Eigen::Index d, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(p);
  Eigen::MatrixXd w(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < d; ++k) w(i, k) = coin(rng) ? 1.0 : 0.0;
  return w;
}

// Column values as a comparable key.
std::vector<double> key(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

TEST_CASE("basis: scalar binary covariate") {
  Eigen::MatrixXd w(5, 1);
  w << 0, 1, 1, 0, 1;
  const auto b = build_hal_basis(w, 1);
  REQUIRE(b.size() == 1);
  CHECK(b.columns->column(0) == w.col(0));
  CHECK(b.tags[0].knot == std::vector<double>{1.0});
}

TEST_CASE("basis: two binary covariates against the support enumeration") {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::MatrixXd w = bernoulli_matrix(12, 2, 0.5, rng);
    const auto b = build_hal_basis(w, 2);
    // every indicator over the 4 support points is one of v1, v2, v1*v2 (or constant)
    std::set<std::vector<double>> allowed;
    allowed.insert(key(w.col(0)));
    allowed.insert(key(w.col(1)));
    allowed.insert(key(w.col(0).cwiseProduct(w.col(1))));
    std::set<std::vector<double>> seen;
    for (const auto& c : basis_columns(b)) {
      CHECK(allowed.count(key(c)) == 1);
      CHECK(seen.insert(key(c)).second);
      CHECK(c.sum() > 0.0);
      CHECK(c.sum() < 12.0);
    }
    // and every non-constant member of that set is present
    for (const auto& a : allowed) {
      const double s = std::accumulate(a.begin(), a.end(), 0.0);
      if (s > 0.0 && s < 12.0) CHECK(seen.count(a) == 1);
    }
  }
}

TEST_CASE("basis: n distinct scalar values give n-1 columns") {
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd w = testutil::gaussian_matrix(25, 1, rng);
  const auto b = build_hal_basis(w, 1);
  REQUIRE(b.size() == 24);
  std::vector<std::pair<double, double>> by_knot;
  for (Eigen::Index j = 0; j < b.size(); ++j) by_knot.emplace_back(b.tags[static_cast<std::size_t>(j)].knot[0], b.columns->column(j).sum());
  std::sort(by_knot.begin(), by_knot.end());
  for (std::size_t k = 1; k < by_knot.size(); ++k) CHECK(by_knot[k].second < by_knot[k - 1].second);
  CHECK(by_knot.front().second == 24.0);
}

TEST_CASE("basis: no constants, no duplicates, tags reproduce columns") {
  std::mt19937_64 rng(3);
  Eigen::MatrixXd w = bernoulli_matrix(60, 4, 0.4, rng);
  w.col(3) = testutil::gaussian_vector(60, rng);
  const auto b = build_hal_basis(w, 3);
  std::set<std::vector<double>> seen;
  for (Eigen::Index j = 0; j < b.size(); ++j) {
    const Eigen::VectorXd c = b.columns->column(j);
    CHECK(seen.insert(key(c)).second);
    CHECK(c.sum() > 0.0);
    CHECK(c.sum() < 60.0);
    for (Eigen::Index i = 0; i < 60; ++i) CHECK(b.tags[static_cast<std::size_t>(j)].evaluate(w.row(i)) == c[i]);
  }
  for (const auto m : b.dedup_map) CHECK(m < b.size());
}

TEST_CASE("basis: row order only reorders columns") {
  std::mt19937_64 rng(4);
  Eigen::MatrixXd w = bernoulli_matrix(40, 3, 0.5, rng);
  w.col(2) = testutil::gaussian_vector(40, rng);
  std::vector<int> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::MatrixXd wp(40, 3);
  for (int i = 0; i < 40; ++i) wp.row(i) = w.row(perm[static_cast<std::size_t>(i)]);
  std::set<std::vector<double>> a, b;
  for (const auto& c : basis_columns(build_hal_basis(w, 2))) a.insert(key(c));
  for (const auto& c : basis_columns(build_hal_basis(wp, 2))) {
    Eigen::VectorXd back(40);
    for (int i = 0; i < 40; ++i) back[perm[static_cast<std::size_t>(i)]] = c[i];
    b.insert(key(back));
  }
  CHECK(a == b);
}

TEST_CASE("basis: bad input") {
  CHECK_THROWS_AS(build_hal_basis(Eigen::MatrixXd(0, 2), 1), ValidationError);
  CHECK_THROWS_AS(build_hal_basis(Eigen::MatrixXd::Zero(3, 2), 3), ValidationError);
  CHECK_THROWS_AS(build_hal_basis(Eigen::MatrixXd::Zero(3, 2), 0), ValidationError);
}

TEST_CASE("fit: y equal to a binary covariate") {
  std::mt19937_64 rng(5);
  const Eigen::MatrixXd w = bernoulli_matrix(200, 3, 0.5, rng);
  const Eigen::VectorXd y = w.col(0);
  HalOptions o;
  o.seed = 3;
  const auto fit = fit_hal(w, y, Family::kLinear, o);
  CHECK((hal_predict(fit, w) - y).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("fit: constant response") {
  std::mt19937_64 rng(6);
  const Eigen::MatrixXd w = testutil::gaussian_matrix(30, 2, rng);
  const auto fit = fit_hal(w, Eigen::VectorXd::Constant(30, 2.5), Family::kLinear);
  CHECK(fit.tags.empty());
  CHECK((hal_predict(fit, w).array() == 2.5).all());
  CHECK_THROWS_AS(fit_hal(w, Eigen::VectorXd::Ones(30), Family::kLogistic), ValidationError);
}

TEST_CASE("fit: predictions on training rows equal the fitted values") {
  std::mt19937_64 rng(7);
  const Eigen::MatrixXd w = testutil::gaussian_matrix(80, 2, rng);
  std::uniform_real_distribution<double> u;
  Eigen::VectorXd yb(80);
  for (int i = 0; i < 80; ++i) yb[i] = u(rng) < expit(w(i, 0)) ? 1.0 : 0.0;
  const Eigen::VectorXd y = w.col(0).array().sin() + 0.1 * testutil::gaussian_vector(80, rng).array();
  for (const auto family : {Family::kLinear, Family::kLogistic}) {
    const Eigen::VectorXd& resp = family == Family::kLinear ? y : yb;
    const auto fit = fit_hal(w, resp, family);
    const auto basis = build_hal_basis(w, 2);
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(80, fit.intercept);
    for (std::size_t k = 0; k < fit.tags.size(); ++k)
      for (int i = 0; i < 80; ++i) eta[i] += fit.coefficients[static_cast<Eigen::Index>(k)] * fit.tags[k].evaluate(w.row(i));
    const Eigen::VectorXd fitted = family == Family::kLinear ? eta : eta.unaryExpr([](double t) { return expit(t); });
    CHECK((hal_predict(fit, w) - fitted).cwiseAbs().maxCoeff() < 1e-12);
    // below every knot only the intercept remains
    Eigen::MatrixXd low = Eigen::MatrixXd::Constant(1, 2, -1e6);
    const double base = family == Family::kLinear ? fit.intercept : expit(fit.intercept);
    CHECK(hal_predict(fit, low)[0] == doctest::Approx(base));
    CHECK_THROWS_AS(hal_predict(fit, Eigen::MatrixXd::Zero(1, 3)), ValidationError);
  }
}

TEST_CASE("fit: piecewise constant between knots in 1-d") {
  std::mt19937_64 rng(8);
  const Eigen::MatrixXd w = testutil::gaussian_matrix(60, 1, rng);
  const Eigen::VectorXd y = (2.0 * w.col(0).array()).tanh().matrix() + 0.2 * testutil::gaussian_vector(60, rng);
  const auto fit = fit_hal(w, y, Family::kLinear);
  std::vector<double> knots;
  for (const auto& t : fit.tags) knots.push_back(t.knot[0]);
  std::sort(knots.begin(), knots.end());
  knots.insert(knots.begin(), -10.0);
  knots.push_back(10.0);
  for (std::size_t k = 0; k + 1 < knots.size(); ++k) {
    Eigen::MatrixXd grid(20, 1);
    for (int i = 0; i < 20; ++i) grid(i, 0) = knots[k] + (knots[k + 1] - knots[k]) * (0.001 + 0.998 * i / 19.0);
    const Eigen::VectorXd p = hal_predict(fit, grid);
    CHECK((p.array() - p[0]).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("fit: saturated binary design matches cell means") {
  std::mt19937_64 rng(9);
  const Eigen::MatrixXd w = bernoulli_matrix(400, 3, 0.5, rng);
  const Eigen::VectorXd y = w.col(0) * 1.5 - w.col(1).cwiseProduct(w.col(2)) + testutil::gaussian_vector(400, rng);
  HalOptions o;
  o.max_order = 3;
  o.fixed_lambda = 0.0;
  const auto fit = fit_hal(w, y, Family::kLinear, o);
  const Eigen::VectorXd pred = hal_predict(fit, w);
  std::map<int, std::pair<double, int>> cells;
  for (int i = 0; i < 400; ++i) {
    auto& c = cells[static_cast<int>(w(i, 0) + 2 * w(i, 1) + 4 * w(i, 2))];
    c.first += y[i];
    ++c.second;
  }
  REQUIRE(cells.size() == 8);
  for (int i = 0; i < 400; ++i) {
    const auto& c = cells[static_cast<int>(w(i, 0) + 2 * w(i, 1) + 4 * w(i, 2))];
    CHECK(std::abs(pred[i] - c.first / c.second) < 1e-5);
  }
}

TEST_CASE("fit: scenario-1 outcome beats a main-terms OLS") {
  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    ScenarioConfig c;
    Rng rng(derive_seed(seed, 77));
    const auto draw = generate_scenario(c, rng);
    const auto& t = draw.table;
    Eigen::MatrixXd wa(t.n(), t.num_covariates() + 1);
    wa << t.covariates(), t.treatment();
    HalOptions o;
    o.seed = seed;
    const auto fit = fit_hal(wa, t.outcome(), Family::kLinear, o);
    const double hal_mse = (hal_predict(fit, wa) - t.outcome()).squaredNorm() / static_cast<double>(t.n());
    Eigen::MatrixXd x(t.n(), wa.cols() + 1);
    x << Eigen::VectorXd::Ones(t.n()), wa;
    const auto ols = fit_ols(x, t.outcome());
    const double ols_mse = (predict_linear(ols, x) - t.outcome()).squaredNorm() / static_cast<double>(t.n());
    if (hal_mse < ols_mse) ++wins;
  }
  CHECK(wins == 20);
}
