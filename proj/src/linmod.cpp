#include "emlasso/linmod.hpp"

#include <algorithm>
#include <cmath>

#include "emlasso/error.hpp"

namespace emlasso {

namespace {

void require_names(std::vector<std::string>& names, Eigen::Index k) {
  if (names.empty()) {
    for (Eigen::Index j = 0; j < k; ++j) names.push_back("x" + std::to_string(j));
  } else if (static_cast<Eigen::Index>(names.size()) != k) {
    throw ValidationError("term name count does not match design columns");
  }
}

// Column-order LDL^T without pivoting; the first pivot that collapses
// identifies a column that is a combination of the earlier ones.
void check_rank(const Eigen::MatrixXd& gram) {
  const Eigen::Index k = gram.rows();
  if (k == 0) return;
  const double max_diag = gram.diagonal().maxCoeff();
  if (!(max_diag > 0.0)) throw NumericalError("rank-deficient design: column 0 is identically zero");
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(k, k);
  Eigen::VectorXd d(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    double dj = gram(j, j);
    for (Eigen::Index m = 0; m < j; ++m) dj -= l(j, m) * l(j, m) * d[m];
    if (dj <= kRankTolerance * max_diag)
      throw NumericalError("rank-deficient design: column " + std::to_string(j) +
                           " is linearly dependent on earlier columns");
    d[j] = dj;
    l(j, j) = 1.0;
    for (Eigen::Index i = j + 1; i < k; ++i) {
      double v = gram(i, j);
      for (Eigen::Index m = 0; m < j; ++m) v -= l(i, m) * l(j, m) * d[m];
      l(i, j) = v / dj;
    }
  }
}

}  // namespace

double expit(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

Eigen::MatrixXd checked_spd_inverse(const Eigen::MatrixXd& gram) {
  check_rank(gram);
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success) throw NumericalError("Gram matrix is not positive definite");
  Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(gram.rows(), gram.cols()));
  return 0.5 * (inv + inv.transpose());
}

Eigen::VectorXd LinearFit::standard_errors() const {
  return (residual_variance * gram_inverse.diagonal().array()).sqrt();
}

LinearFit fit_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::vector<std::string> term_names) {
  if (x.rows() != y.size()) throw ValidationError("fit_ols: design rows differ from response length");
  if (x.rows() < x.cols()) throw ValidationError("fit_ols: fewer rows than columns");
  require_names(term_names, x.cols());

  LinearFit fit;
  fit.n = x.rows();
  const Eigen::MatrixXd gram = x.transpose() * x;
  fit.gram_inverse = checked_spd_inverse(gram);
  // Solve through the factorization rather than the explicit inverse.
  fit.coefficients = gram.llt().solve(x.transpose() * y);
  const Eigen::VectorXd resid = y - x * fit.coefficients;
  const Eigen::Index df = x.rows() - x.cols();
  fit.residual_variance = df > 0 ? resid.squaredNorm() / static_cast<double>(df) : 0.0;
  fit.term_names = std::move(term_names);
  return fit;
}

LogisticFit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const IrlsOptions& options,
                         std::vector<std::string> term_names) {
  if (x.rows() != y.size()) throw ValidationError("fit_logistic: design rows differ from response length");
  if (x.rows() < x.cols()) throw ValidationError("fit_logistic: fewer rows than columns");
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i] != 0.0 && y[i] != 1.0) throw ValidationError("fit_logistic: response must be 0/1");
  }
  require_names(term_names, x.cols());
  check_rank(x.transpose() * x);

  const Eigen::Index n = x.rows();
  LogisticFit fit;
  fit.term_names = std::move(term_names);
  fit.coefficients = Eigen::VectorXd::Zero(x.cols());
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd w(n), z(n);

  for (int iter = 1; iter <= options.max_iter; ++iter) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = std::clamp(expit(eta[i]), options.prob_clamp, 1.0 - options.prob_clamp);
      w[i] = p * (1.0 - p);
      z[i] = eta[i] + (y[i] - p) / w[i];
    }
    const Eigen::MatrixXd xtw = x.transpose() * w.asDiagonal();
    Eigen::LLT<Eigen::MatrixXd> llt(xtw * x);
    if (llt.info() != Eigen::Success) throw NumericalError("fit_logistic: weighted Gram matrix is singular");
    const Eigen::VectorXd next = llt.solve(xtw * z);
    if (!next.allFinite() || next.cwiseAbs().maxCoeff() > options.divergence_bound)
      throw NumericalError("fit_logistic: coefficients diverge (quasi-complete separation)");
    const double change = (next - fit.coefficients).cwiseAbs().maxCoeff();
    fit.coefficients = next;
    eta = x * fit.coefficients;
    fit.iterations = iter;
    if (change < options.tol) {
      fit.converged = true;
      break;
    }
  }
  return fit;
}

Eigen::VectorXd predict_linear(const LinearFit& fit, const Eigen::MatrixXd& x) {
  if (x.cols() != fit.coefficients.size()) throw ValidationError("predict_linear: column count mismatch");
  return x * fit.coefficients;
}

Eigen::VectorXd predict_probability(const LogisticFit& fit, const Eigen::MatrixXd& x) {
  if (x.cols() != fit.coefficients.size()) throw ValidationError("predict_probability: column count mismatch");
  const Eigen::VectorXd eta = x * fit.coefficients;
  return eta.unaryExpr([](double t) { return expit(t); });
}

}  // namespace emlasso
