#include "emlasso/drpseudo.hpp"

#include <algorithm>
#include <cmath>

#include "emlasso/error.hpp"

namespace emlasso {

void NuisanceEstimates::validate() const {
  const Eigen::Index n = q0.size();
  if (q1.size() != n || g1.size() != n) throw ValidationError("nuisance vectors differ in length");
  if (truncation && !(truncation->lo < truncation->hi))
    throw ValidationError("propensity truncation needs lo < hi");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(g1[i] >= 0.0 && g1[i] <= 1.0))
      throw ValidationError("propensity at row " + std::to_string(i + 1) + " is outside [0, 1]");
  }
  if (!q0.allFinite() || !q1.allFinite()) throw ValidationError("outcome regression values must be finite");
}

Eigen::VectorXd truncate_propensity(const Eigen::VectorXd& g1, double lo, double hi) {
  if (!(lo > 0.0 && lo < hi && hi < 1.0)) throw ValidationError("truncation bounds must satisfy 0 < lo < hi < 1");
  return g1.unaryExpr([lo, hi](double g) { return std::clamp(g, lo, hi); });
}

NuisanceEstimates with_truncation(NuisanceEstimates nuisance, std::optional<Truncation> truncation) {
  if (truncation) nuisance.g1 = truncate_propensity(nuisance.g1, truncation->lo, truncation->hi);
  nuisance.truncation = truncation;
  return nuisance;
}

PseudoOutcome pseudo_outcome(const NuisanceEstimates& nuisance, const Eigen::VectorXd& a, const Eigen::VectorXd& y,
                             std::string provenance) {
  nuisance.validate();
  const Eigen::Index n = nuisance.q0.size();
  if (a.size() != n || y.size() != n) throw ValidationError("pseudo_outcome: A/Y length differs from nuisances");
  PseudoOutcome out;
  out.provenance = std::move(provenance);
  out.d.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool treated = a[i] == 1.0;
    if (!treated && a[i] != 0.0) throw ValidationError("pseudo_outcome: treatment must be 0/1");
    const double g = treated ? nuisance.g1[i] : 1.0 - nuisance.g1[i];
    if (!(g > 0.0))
      throw NumericalError("pseudo_outcome: g(A|W) = 0 at row " + std::to_string(i + 1) +
                           " (consider propensity truncation)");
    const double q_obs = treated ? nuisance.q1[i] : nuisance.q0[i];
    const double sign = treated ? 1.0 : -1.0;
    out.d[i] = sign / g * (y[i] - q_obs) + nuisance.q1[i] - nuisance.q0[i];
    if (!std::isfinite(out.d[i])) throw NumericalError("pseudo_outcome: non-finite value at row " + std::to_string(i + 1));
  }
  return out;
}

}  // namespace emlasso
