#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "emlasso/lassocd.hpp"
#include "emlasso/tabular.hpp"

namespace emlasso {

// phi(v) = prod_{k in subset} I(v_k >= knot_k)
struct HalTag {
  std::vector<int> subset;
  std::vector<double> knot;
  Eigen::Index knot_row = 0;

  double evaluate(const Eigen::Ref<const Eigen::RowVectorXd>& v) const;
};

// Indicator basis over the observed support. Candidates are the distinct
// (subset, knot projection) pairs in deterministic order: subsets by size,
// then lexicographic, then knot row. Rows sharing a knot projection give
// identical columns and are merged before dedup.
struct HalBasis {
  std::shared_ptr<const BinaryDesign> columns;
  std::vector<HalTag> tags;  // one per retained column
  // Per candidate: index of the retained column it equals, or -1 when the
  // candidate is constant over the sample.
  std::vector<Eigen::Index> dedup_map;
  Eigen::Index num_covariates = 0;

  Eigen::Index size() const { return static_cast<Eigen::Index>(tags.size()); }
};

struct HalOptions {
  int max_order = 3;  // fit_hal caps it at the covariate count
  int folds = 10;
  int n_lambdas = 100;
  // Smallest lambda as a fraction of lambda_max; unset means 1e-4 when
  // n > columns and 1e-2 otherwise.
  std::optional<double> ratio;
  // Cross-validation stops this many grid points past the loss minimum
  // (once also one SE above it); 0 scans the whole grid.
  int cv_patience = 10;
  // Skip cross-validation and fit at this lambda.
  std::optional<double> fixed_lambda;
  std::uint64_t seed = 1;
};

struct HalFit {
  std::vector<HalTag> tags;  // columns with nonzero coefficients only
  Eigen::VectorXd coefficients;
  double intercept = 0.0;
  double lambda = 0.0;
  Family family = Family::kLinear;
  Eigen::Index num_covariates = 0;
  Eigen::Index basis_size = 0;
  std::optional<CvResult> cv;
};

HalBasis build_hal_basis(const Eigen::MatrixXd& w, int max_order);

HalFit fit_hal(const Eigen::MatrixXd& w, const Eigen::VectorXd& y, Family family, const HalOptions& options = {});

// Predictions on the response scale (probabilities for the logistic family).
Eigen::VectorXd hal_predict(const HalFit& fit, const Eigen::MatrixXd& w_new);

}  // namespace emlasso
