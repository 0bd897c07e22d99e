#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace emlasso {

struct LinearFit {
  Eigen::VectorXd coefficients;
  // Mean squared residual with denominator n - k (k = design columns).
  double residual_variance = 0.0;
  // (X^T X)^{-1}
  Eigen::MatrixXd gram_inverse;
  std::vector<std::string> term_names;
  Eigen::Index n = 0;

  Eigen::Index df_residual() const { return n - coefficients.size(); }
  // Classical standard errors sqrt(sigma^2 * diag((X^T X)^{-1})).
  Eigen::VectorXd standard_errors() const;
};

struct LogisticFit {
  Eigen::VectorXd coefficients;
  bool converged = false;
  int iterations = 0;
  std::vector<std::string> term_names;
};

struct IrlsOptions {
  int max_iter = 100;
  double tol = 1e-8;
  double prob_clamp = 1e-10;
  // |coefficient| above this is treated as separation.
  double divergence_bound = 30.0;
};

// Rank tolerance for the Gram pivots, relative to the largest diagonal entry.
inline constexpr double kRankTolerance = 1e-10;

// Least squares via a pivot-checked Cholesky of X^T X. Rank deficiency is
// reported with the offending column index instead of silently dropped.
LinearFit fit_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                  std::vector<std::string> term_names = {});

LogisticFit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const IrlsOptions& options = {},
                         std::vector<std::string> term_names = {});

Eigen::VectorXd predict_linear(const LinearFit& fit, const Eigen::MatrixXd& x);
Eigen::VectorXd predict_probability(const LogisticFit& fit, const Eigen::MatrixXd& x);

double expit(double t);
double logit(double p);

// Inverse of the symmetric positive definite matrix `gram`, with the same
// pivot check as fit_ols. Throws NumericalError naming the dependent column.
Eigen::MatrixXd checked_spd_inverse(const Eigen::MatrixXd& gram);

}  // namespace emlasso
