#pragma once

#include <optional>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace emlasso {

struct Truncation {
  double lo = 0.05;
  double hi = 0.95;
};

// Per-subject nuisance values: Qbar(0,W), Qbar(1,W) and g(1|W).
struct NuisanceEstimates {
  Eigen::VectorXd q0;
  Eigen::VectorXd q1;
  Eigen::VectorXd g1;
  std::optional<Truncation> truncation;

  void validate() const;
};

struct PseudoOutcome {
  Eigen::VectorXd d;
  // Short description of the nuisance settings that produced d.
  std::string provenance;
};

Eigen::VectorXd truncate_propensity(const Eigen::VectorXd& g1, double lo, double hi);

// Applies `truncation` (if any) to g1 in place and records it.
NuisanceEstimates with_truncation(NuisanceEstimates nuisance, std::optional<Truncation> truncation);

// D_i = (2A_i - 1) / g(A_i|W_i) * (Y_i - Qbar(A_i, W_i)) + Qbar(1, W_i) - Qbar(0, W_i)
// with g(0|W) = 1 - g1.
PseudoOutcome pseudo_outcome(const NuisanceEstimates& nuisance, const Eigen::VectorXd& a, const Eigen::VectorXd& y,
                             std::string provenance = {});

}  // namespace emlasso
