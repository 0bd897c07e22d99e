#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace emlasso {

// Selection event {y : a * y <= b} for a weighted-LASSO active set and sign
// pattern.
struct Polyhedron {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;

  bool contains(const Eigen::VectorXd& y, double tol = 0.0) const;
  // max_r (a y - b)_r; negative when y is strictly inside.
  double max_violation(const Eigen::VectorXd& y) const;
};

struct SelectiveInterval {
  Eigen::Index index = 0;  // position in the candidate list
  std::string name;
  double estimate = 0.0;   // eta' y
  Eigen::VectorXd eta;
  double sigma_star2 = 0.0;
  double nu_lo = 0.0;
  double nu_hi = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double p_value = 1.0;
};

struct CdfValue {
  double value = 0.0;
  // x fell outside [lo, hi] and the value was clamped to 0 or 1.
  bool clamped = false;
};

// KKT polyhedron of
//   sum_i (y_i - b0 - x_i' b)^2 + lambda sum_j w_j |b_j|
// with an unpenalized intercept (added here; `candidates` excludes it).
// Coordinates with w_j = +inf never enter and carry no constraint.
Polyhedron selection_polyhedron(const Eigen::MatrixXd& candidates, double lambda, const Eigen::VectorXd& weights,
                                std::span<const Eigen::Index> active_set, std::span<const int> signs);

// Contrast vectors of the selected submodel [1, X_M]: column k is the
// least-squares contrast for active coordinate k (intercept excluded).
Eigen::MatrixXd submodel_contrasts(const Eigen::MatrixXd& candidates, std::span<const Eigen::Index> active_set);

// Polyhedral-lemma truncation limits for eta' y under Sigma = sigma2 * I.
std::pair<double, double> truncation_interval(const Polyhedron& poly, const Eigen::VectorXd& y,
                                              const Eigen::VectorXd& eta, double sigma2);

// CDF at x of N(mu, sigma2) truncated to [lo, hi]; tail-stable.
CdfValue truncnorm_cdf(double x, double mu, double sigma2, double lo, double hi);

// log of the standard normal upper tail, accurate far into the tail.
double log_normal_upper_tail(double z);

// Test-inversion interval: F(estimate; L) = 1 - alpha/2, F(estimate; U) = alpha/2.
std::pair<double, double> selective_ci(double estimate, double sigma_star2, double nu_lo, double nu_hi, double alpha);

double selective_pvalue(double estimate, double sigma_star2, double nu_lo, double nu_hi);

// Intervals and p-values for every selected coordinate. `sigma2` is the
// noise variance (the pilot full-model residual variance in the pipeline).
std::vector<SelectiveInterval> selective_inference(const Eigen::MatrixXd& candidates, const Eigen::VectorXd& y,
                                                   double lambda, const Eigen::VectorXd& weights,
                                                   std::span<const Eigen::Index> active_set, std::span<const int> signs,
                                                   double sigma2, double alpha,
                                                   const std::vector<std::string>& names = {});

}  // namespace emlasso
