#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "emlasso/tabular.hpp"

namespace emlasso {

inline constexpr double kInfiniteWeight = std::numeric_limits<double>::infinity();

// Column-access view of a design matrix. Coordinate descent only ever needs
// per-column inner products and updates, so dense and 0/1 indicator
// matrices share one solver.
class Design {
 public:
  virtual ~Design() = default;
  virtual Eigen::Index rows() const = 0;
  virtual Eigen::Index cols() const = 0;
  // sum_i x_ij * a_i * b_i
  virtual double weighted_dot(Eigen::Index j, const Eigen::VectorXd& a, const Eigen::VectorXd& b) const = 0;
  // sum_i x_ij^2 * a_i
  virtual double weighted_sq_norm(Eigen::Index j, const Eigen::VectorXd& a) const = 0;
  // v += alpha * x_j
  virtual void axpy(Eigen::Index j, double alpha, Eigen::VectorXd& v) const = 0;
  virtual Eigen::VectorXd column(Eigen::Index j) const = 0;

  // X * beta, visiting only the nonzero entries of beta.
  Eigen::VectorXd multiply(const Eigen::VectorXd& beta) const;
};

class DenseDesign final : public Design {
 public:
  explicit DenseDesign(Eigen::MatrixXd x) : x_(std::move(x)) {}
  Eigen::Index rows() const override { return x_.rows(); }
  Eigen::Index cols() const override { return x_.cols(); }
  double weighted_dot(Eigen::Index j, const Eigen::VectorXd& a, const Eigen::VectorXd& b) const override;
  double weighted_sq_norm(Eigen::Index j, const Eigen::VectorXd& a) const override;
  void axpy(Eigen::Index j, double alpha, Eigen::VectorXd& v) const override;
  Eigen::VectorXd column(Eigen::Index j) const override { return x_.col(j); }
  const Eigen::MatrixXd& matrix() const { return x_; }

 private:
  Eigen::MatrixXd x_;
};

// 0/1 matrix stored as the sorted row indices of each column's ones.
class BinaryDesign final : public Design {
 public:
  BinaryDesign(Eigen::Index rows, std::vector<std::vector<std::int32_t>> ones);
  Eigen::Index rows() const override { return rows_; }
  Eigen::Index cols() const override { return static_cast<Eigen::Index>(ones_.size()); }
  double weighted_dot(Eigen::Index j, const Eigen::VectorXd& a, const Eigen::VectorXd& b) const override;
  double weighted_sq_norm(Eigen::Index j, const Eigen::VectorXd& a) const override;
  void axpy(Eigen::Index j, double alpha, Eigen::VectorXd& v) const override;
  Eigen::VectorXd column(Eigen::Index j) const override;
  const std::vector<std::int32_t>& ones(Eigen::Index j) const { return ones_[static_cast<std::size_t>(j)]; }

 private:
  Eigen::Index rows_;
  std::vector<std::vector<std::int32_t>> ones_;
};

// Weighted LASSO problem. The intercept is implicit and unpenalized.
// penalty_factors[j] = +inf forces beta_j = 0; 0 leaves it unpenalized.
struct LassoProblem {
  std::shared_ptr<const Design> x;
  Eigen::VectorXd y;
  Eigen::VectorXd penalty_factors;
  Family family = Family::kLinear;
  // Optional per-row weights (empty means all ones). Cross-validation uses
  // zero weights to hold rows out without copying the design.
  Eigen::VectorXd observation_weights;

  static LassoProblem dense(Eigen::MatrixXd x, Eigen::VectorXd y, Eigen::VectorXd penalty_factors,
                            Family family = Family::kLinear);
  static LassoProblem dense(Eigen::MatrixXd x, Eigen::VectorXd y, Family family = Family::kLinear);

  Eigen::Index n() const { return x->rows(); }
  Eigen::Index p() const { return x->cols(); }
  void validate() const;
};

struct LassoSolution {
  // Linear family: lambda of  sum_i (y_i - b0 - x_i'b)^2 + lambda sum_j w_j |b_j|.
  // Logistic family: lambda of  -(1/N) loglik + lambda sum_j w_j |b_j|.
  double lambda = 0.0;
  double intercept = 0.0;
  Eigen::VectorXd coefficients;
  std::vector<Eigen::Index> active_set;
  std::vector<int> signs;
  bool converged = false;
  // Largest KKT residual found by the post-solve check, in the units above.
  double kkt_violation = 0.0;
  int sweeps = 0;

  Eigen::VectorXd predict_link(const Design& x) const;
};

struct CvResult {
  std::vector<double> lambda_grid;
  std::vector<double> cv_mse;
  std::vector<double> cv_se;
  double chosen_lambda = 0.0;
  std::size_t chosen_index = 0;
};

struct SolverOptions {
  double tol = 1e-9;
  int max_sweeps = 10000;
  int max_outer = 100;
  double outer_tol = 1e-8;
  // KKT tolerance relative to the problem's gradient scale.
  double kkt_tol = 1e-6;
  // Penalize beta_j * sd(x_j) instead of beta_j. Off by default.
  bool standardize = false;
};

struct CvOptions {
  int folds = 10;
  int n_lambdas = 100;
  double ratio = 1e-4;
  std::uint64_t seed = 1;
};

double soft_threshold(double z, double t);

LassoSolution solve_weighted_lasso(const LassoProblem& problem, double lambda, const SolverOptions& options = {});
LassoSolution solve_logistic_lasso(const LassoProblem& problem, double lambda, const SolverOptions& options = {});

// Warm-started fits along a decreasing grid (either family).
std::vector<LassoSolution> solve_path(const LassoProblem& problem, std::span<const double> lambdas,
                                      const SolverOptions& options = {});

// Smallest lambda at which every penalized coefficient is zero.
double lambda_max(const LassoProblem& problem);
std::vector<double> lambda_grid(const LassoProblem& problem, int n_lambdas, double ratio);

// K-fold CV over `grid`. Fold fits use lambda * (training rows / n) so that
// the per-observation penalty matches the full-data fit. With patience > 0
// the grid is abandoned once the mean loss has gone `patience` points
// without a new minimum and sits more than one SE above it; the result then
// covers only the evaluated prefix.
CvResult cv_select_lambda(const LassoProblem& problem, int folds, std::span<const double> grid,
                          std::uint64_t seed, const SolverOptions& options = {}, int patience = 0);

// Sum of squares plus lambda * sum w|b| for the linear family; penalized mean negative
// log-likelihood for the logistic family.
double lasso_objective(const LassoProblem& problem, double intercept, const Eigen::VectorXd& beta,
                       double lambda);

// Running totals of post-solve KKT verifications (process-wide).
struct KktStats {
  std::uint64_t checked = 0;
  std::uint64_t violations = 0;
  double worst = 0.0;
};
KktStats kkt_stats();
void reset_kkt_stats();

// Fold assignment: seeded random permutation split into near-equal parts.
std::vector<int> make_folds(Eigen::Index n, int folds, std::uint64_t seed);

}  // namespace emlasso
