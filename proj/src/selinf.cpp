#include "emlasso/selinf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "emlasso/error.hpp"
#include "emlasso/linmod.hpp"

namespace emlasso {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// [1, X_M]
Eigen::MatrixXd submodel_design(const Eigen::MatrixXd& candidates, std::span<const Eigen::Index> active_set) {
  Eigen::MatrixXd e(candidates.rows(), static_cast<Eigen::Index>(active_set.size()) + 1);
  e.col(0).setOnes();
  for (std::size_t k = 0; k < active_set.size(); ++k) {
    const Eigen::Index j = active_set[k];
    if (j < 0 || j >= candidates.cols()) throw ValidationError("active index out of range");
    e.col(static_cast<Eigen::Index>(k) + 1) = candidates.col(j);
  }
  return e;
}

double log_normal_lower_tail(double z) { return log_normal_upper_tail(-z); }

}  // namespace

bool Polyhedron::contains(const Eigen::VectorXd& y, double tol) const {
  return a.rows() == 0 || max_violation(y) <= tol;
}

double Polyhedron::max_violation(const Eigen::VectorXd& y) const {
  if (a.rows() == 0) return -kInf;
  return (a * y - b).maxCoeff();
}

Polyhedron selection_polyhedron(const Eigen::MatrixXd& candidates, double lambda, const Eigen::VectorXd& weights,
                                std::span<const Eigen::Index> active_set, std::span<const int> signs) {
  const Eigen::Index n = candidates.rows();
  const Eigen::Index p = candidates.cols();
  if (weights.size() != p) throw ValidationError("selection_polyhedron: one weight per candidate required");
  if (signs.size() != active_set.size()) throw ValidationError("selection_polyhedron: one sign per active index");
  if (!(lambda >= 0.0)) throw ValidationError("selection_polyhedron: lambda must be >= 0");

  // objective halved: 1/2 ||y - E b||^2 + (lambda/2) sum w|b|.
  const double half = 0.5 * lambda;
  const Eigen::MatrixXd e = submodel_design(candidates, active_set);
  const Eigen::Index m = static_cast<Eigen::Index>(active_set.size());
  Eigen::MatrixXd gram_inv;
  try {
    gram_inv = checked_spd_inverse(e.transpose() * e);
  } catch (const NumericalError&) {
    throw NumericalError("selection_polyhedron: selected submodel is singular");
  }
  Eigen::VectorXd s_tilde = Eigen::VectorXd::Zero(m + 1);
  std::vector<char> is_active(static_cast<std::size_t>(p), 0);
  for (Eigen::Index k = 0; k < m; ++k) {
    const Eigen::Index j = active_set[static_cast<std::size_t>(k)];
    const int s = signs[static_cast<std::size_t>(k)];
    if (s != 1 && s != -1) throw ValidationError("selection_polyhedron: signs must be +1 or -1");
    if (!std::isfinite(weights[j])) throw ValidationError("selection_polyhedron: active coordinate with infinite weight");
    s_tilde[k + 1] = weights[j] * s;
    is_active[static_cast<std::size_t>(j)] = 1;
  }
  // E (E'E)^{-1} and the KKT offset (E'E)^{-1} (lambda/2) s~.
  const Eigen::MatrixXd e_ginv = e * gram_inv;
  const Eigen::VectorXd offset = half * (gram_inv * s_tilde);

  std::vector<Eigen::Index> inactive;
  for (Eigen::Index j = 0; j < p; ++j) {
    if (!is_active[static_cast<std::size_t>(j)] && std::isfinite(weights[j])) inactive.push_back(j);
  }
  const Eigen::Index rows = 2 * static_cast<Eigen::Index>(inactive.size()) + m;
  Polyhedron poly;
  poly.a.resize(rows, n);
  poly.b.resize(rows);

  Eigen::Index r = 0;
  for (const Eigen::Index j : inactive) {
    const Eigen::VectorXd xj = candidates.col(j);
    // (I - P_E) x_j and the fitted-penalty contribution x_j' E (E'E)^{-1} (lambda/2) s~.
    const Eigen::VectorXd resid_dir = xj - e_ginv * (e.transpose() * xj);
    const double shift = xj.dot(e * offset);
    const double bound = half * weights[j];
    poly.a.row(r) = resid_dir.transpose();
    poly.b[r] = bound - shift;
    ++r;
    poly.a.row(r) = -resid_dir.transpose();
    poly.b[r] = bound + shift;
    ++r;
  }
  for (Eigen::Index k = 0; k < m; ++k) {
    const double s = signs[static_cast<std::size_t>(k)];
    // s_k * [(E'E)^{-1} E' y - offset]_k > 0
    poly.a.row(r) = -s * e_ginv.col(k + 1).transpose();
    poly.b[r] = -s * offset[k + 1];
    ++r;
  }
  return poly;
}

Eigen::MatrixXd submodel_contrasts(const Eigen::MatrixXd& candidates, std::span<const Eigen::Index> active_set) {
  const Eigen::MatrixXd e = submodel_design(candidates, active_set);
  const Eigen::MatrixXd e_ginv = e * checked_spd_inverse(e.transpose() * e);
  return e_ginv.rightCols(static_cast<Eigen::Index>(active_set.size()));
}

std::pair<double, double> truncation_interval(const Polyhedron& poly, const Eigen::VectorXd& y,
                                              const Eigen::VectorXd& eta, double sigma2) {
  if (!(sigma2 > 0.0)) throw ValidationError("truncation_interval: sigma2 must be positive");
  if (poly.a.rows() > 0 && (poly.a.cols() != y.size() || eta.size() != y.size()))
    throw ValidationError("truncation_interval: dimension mismatch");
  const double eta_sq = eta.squaredNorm();
  if (!(eta_sq > 0.0)) throw ValidationError("truncation_interval: eta is zero");
  if (poly.a.rows() == 0) return {-kInf, kInf};

  const Eigen::VectorXd slack = poly.b - poly.a * y;
  const double scale = std::max(1.0, poly.b.cwiseAbs().maxCoeff());
  if (slack.minCoeff() < -1e-8 * scale) throw NumericalError("truncation_interval: response lies outside the polyhedron");

  // Sigma eta / (eta' Sigma eta); sigma2 cancels for isotropic noise.
  const Eigen::VectorXd c = eta / eta_sq;
  const double t = eta.dot(y);
  const Eigen::VectorXd ac = poly.a * c;
  const Eigen::VectorXd az = poly.a * y - ac * t;
  const double ac_tol = 1e-12 * std::max(1.0, ac.cwiseAbs().maxCoeff());
  double lo = -kInf;
  double hi = kInf;
  for (Eigen::Index r = 0; r < poly.a.rows(); ++r) {
    const double room = poly.b[r] - az[r];
    if (ac[r] < -ac_tol) {
      lo = std::max(lo, room / ac[r]);
    } else if (ac[r] > ac_tol) {
      hi = std::min(hi, room / ac[r]);
    } else if (room < -1e-8 * scale) {
      throw NumericalError("truncation_interval: constraint infeasible along eta");
    }
  }
  if (!(lo < hi)) throw NumericalError("truncation_interval: empty truncation interval (numerical degeneracy)");
  return {lo, hi};
}

double log_normal_upper_tail(double z) {
  if (z < 35.0) return std::log(0.5 * std::erfc(z / std::numbers::sqrt2));
  // Asymptotic expansion of the Mills ratio; terms beyond z^-8 are below
  // double precision for z >= 35.
  const double z2 = z * z;
  const double series = -1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2) + 105.0 / (z2 * z2 * z2 * z2);
  return -0.5 * z2 - std::log(z) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log1p(series);
}

CdfValue truncnorm_cdf(double x, double mu, double sigma2, double lo, double hi) {
  if (!(sigma2 > 0.0)) throw ValidationError("truncnorm_cdf: sigma2 must be positive");
  if (!(lo < hi)) throw ValidationError("truncnorm_cdf: need lo < hi");
  if (x <= lo) return {0.0, x < lo};
  if (x >= hi) return {1.0, x > hi};
  const double sd = std::sqrt(sigma2);
  const double a = (lo - mu) / sd;
  const double b = (hi - mu) / sd;
  const double t = (x - mu) / sd;
  double value;
  if (a + b > 0.0) {
    // Interval mostly above the mean: work with upper tails Q.
    // F = (Q(a) - Q(t)) / (Q(a) - Q(b))
    const double la = log_normal_upper_tail(a);
    const double lt = log_normal_upper_tail(t);
    const double lb = log_normal_upper_tail(b);
    value = std::expm1(lt - la) / std::expm1(lb - la);
  } else {
    // F = (Phi(t) - Phi(a)) / (Phi(b) - Phi(a))
    const double la = log_normal_lower_tail(a);
    const double lt = log_normal_lower_tail(t);
    const double lb = log_normal_lower_tail(b);
    value = std::exp(lt - lb) * std::expm1(la - lt) / std::expm1(la - lb);
  }
  if (std::isnan(value)) throw NumericalError("truncnorm_cdf: evaluation failed");
  return {std::clamp(value, 0.0, 1.0), false};
}

std::pair<double, double> selective_ci(double estimate, double sigma_star2, double nu_lo, double nu_hi, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ValidationError("selective_ci: alpha must lie in (0, 1]");
  if (!(sigma_star2 > 0.0)) throw ValidationError("selective_ci: sigma_star2 must be positive");
  if (!(nu_lo < estimate && estimate < nu_hi))
    throw ValidationError("selective_ci: estimate must lie inside the truncation interval");
  const double sd = std::sqrt(sigma_star2);
  const auto pivot = [&](double mu) { return truncnorm_cdf(estimate, mu, sigma_star2, nu_lo, nu_hi).value; };

  // The pivot decreases in mu; find mu with pivot(mu) = target.
  const auto solve = [&](double target) {
    double lo = estimate - 10.0 * sd;
    double hi = estimate + 10.0 * sd;
    double step = 10.0 * sd;
    int expansions = 0;
    while (pivot(lo) < target) {
      if (++expansions > 200) throw NumericalError("selective_ci: cannot bracket lower endpoint");
      hi = std::min(hi, lo);
      step *= 2.0;
      lo -= step;
    }
    step = 10.0 * sd;
    while (pivot(hi) > target) {
      if (++expansions > 200) throw NumericalError("selective_ci: cannot bracket upper endpoint");
      lo = std::max(lo, hi);
      step *= 2.0;
      hi += step;
    }
    const double tol = 1e-8 * sd;
    while (hi - lo > tol) {
      const double mid = 0.5 * (lo + hi);
      if (mid == lo || mid == hi) break;
      if (pivot(mid) > target) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    return 0.5 * (lo + hi);
  };
  return {solve(1.0 - 0.5 * alpha), solve(0.5 * alpha)};
}

double selective_pvalue(double estimate, double sigma_star2, double nu_lo, double nu_hi) {
  const double f = truncnorm_cdf(estimate, 0.0, sigma_star2, nu_lo, nu_hi).value;
  return std::min(1.0, 2.0 * std::min(f, 1.0 - f));
}

std::vector<SelectiveInterval> selective_inference(const Eigen::MatrixXd& candidates, const Eigen::VectorXd& y,
                                                   double lambda, const Eigen::VectorXd& weights,
                                                   std::span<const Eigen::Index> active_set, std::span<const int> signs,
                                                   double sigma2, double alpha, const std::vector<std::string>& names) {
  std::vector<SelectiveInterval> out;
  if (active_set.empty()) return out;
  if (!(sigma2 > 0.0)) throw NumericalError("selective inference: residual variance is zero");
  const Polyhedron poly = selection_polyhedron(candidates, lambda, weights, active_set, signs);
  const Eigen::MatrixXd etas = submodel_contrasts(candidates, active_set);
  for (std::size_t k = 0; k < active_set.size(); ++k) {
    SelectiveInterval si;
    si.index = active_set[k];
    if (!names.empty()) si.name = names[static_cast<std::size_t>(si.index)];
    si.eta = etas.col(static_cast<Eigen::Index>(k));
    si.estimate = si.eta.dot(y);
    si.sigma_star2 = sigma2 * si.eta.squaredNorm();
    std::tie(si.nu_lo, si.nu_hi) = truncation_interval(poly, y, si.eta, sigma2);
    std::tie(si.ci_lo, si.ci_hi) = selective_ci(si.estimate, si.sigma_star2, si.nu_lo, si.nu_hi, alpha);
    si.p_value = selective_pvalue(si.estimate, si.sigma_star2, si.nu_lo, si.nu_hi);
    out.push_back(std::move(si));
  }
  return out;
}

}  // namespace emlasso
