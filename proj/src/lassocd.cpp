#include "emlasso/lassocd.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <mutex>
#include <numeric>
#include <sstream>

#include "emlasso/error.hpp"
#include "emlasso/linmod.hpp"
#include "emlasso/rng.hpp"

namespace emlasso {

namespace {

std::atomic<std::uint64_t> g_kkt_checked{0};
std::atomic<std::uint64_t> g_kkt_violations{0};
std::mutex g_kkt_mutex;
double g_kkt_worst = 0.0;

void record_kkt(double relative_violation, bool ok) {
  g_kkt_checked.fetch_add(1, std::memory_order_relaxed);
  if (!ok) g_kkt_violations.fetch_add(1, std::memory_order_relaxed);
  std::lock_guard lock(g_kkt_mutex);
  g_kkt_worst = std::max(g_kkt_worst, relative_violation);
}

constexpr double kMinIrlsWeight = 1e-5;
// Largest nonzero set the Newton polish will factor.
constexpr Eigen::Index kMaxPolish = 2000;

// Coordinate descent state for one fit along a path.
class PathSolver {
 public:
  PathSolver(const LassoProblem& problem, const SolverOptions& options)
      : problem_(problem), options_(options), x_(*problem.x), p_(x_.cols()) {
    problem.validate();
    const Eigen::Index n = x_.rows();
    obs_ = problem.observation_weights.size() == 0 ? Eigen::VectorXd::Ones(n) : problem.observation_weights;
    n_eff_ = obs_.sum();
    if (!(n_eff_ > 0.0)) throw ValidationError("lasso: observation weights sum to zero");
    pf_ = problem.penalty_factors;
    eligible_.assign(static_cast<std::size_t>(p_), 0);
    for (Eigen::Index j = 0; j < p_; ++j) eligible_[static_cast<std::size_t>(j)] = std::isfinite(pf_[j]) ? 1 : 0;

    const double ybar = obs_.dot(problem.y) / n_eff_;
    const Eigen::VectorXd centered = (problem.y.array() - ybar).matrix();
    if (options.standardize) {
      for (Eigen::Index j = 0; j < p_; ++j) {
        if (!eligible_[static_cast<std::size_t>(j)]) continue;
        const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
        const double mean = x_.weighted_dot(j, obs_, ones) / n_eff_;
        const double var = x_.weighted_sq_norm(j, obs_) / n_eff_ - mean * mean;
        pf_[j] *= std::sqrt(std::max(var, 0.0));
      }
    }

    double max_col = 0.0;
    for (Eigen::Index j = 0; j < p_; ++j) {
      if (eligible_[static_cast<std::size_t>(j)]) max_col = std::max(max_col, x_.weighted_sq_norm(j, obs_));
    }
    const double y_norm = std::sqrt((obs_.array() * centered.array().square()).sum());
    const double gradient_scale = std::sqrt(max_col) * y_norm;
    kkt_scale_ = problem.family == Family::kLinear ? std::max(1.0, 2.0 * gradient_scale)
                                                    : std::max(1.0, gradient_scale / n_eff_);

    beta_ = Eigen::VectorXd::Zero(p_);
    grad_ = Eigen::VectorXd::Zero(p_);
    xv_ = Eigen::VectorXd::Constant(p_, std::numeric_limits<double>::quiet_NaN());
    xs_ = xv_;
    ones_ = Eigen::VectorXd::Ones(n);
    slot_of_.assign(static_cast<std::size_t>(p_), -1);
    fit_null();
  }

  double lambda_max() const {
    double best = 0.0;
    bool any = false;
    for (Eigen::Index j = 0; j < p_; ++j) {
      if (!eligible_[static_cast<std::size_t>(j)] || pf_[j] <= 0.0) continue;
      any = true;
      best = std::max(best, std::abs(null_grad_[j]) / pf_[j]);
    }
    if (!any) throw ValidationError("lambda grid: no column carries a finite positive penalty factor");
    return to_lambda(best);
  }

  LassoSolution solve(double lambda) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("lasso: lambda must be finite and >= 0");
    const double pen = to_penalty(lambda);

    // Working set: unpenalized, currently active, and sequential-strong-rule survivors.
    std::vector<Eigen::Index> work;
    std::vector<char> in_work(static_cast<std::size_t>(p_), 0);
    const double strong_cut = std::isfinite(last_pen_) ? 2.0 * pen - last_pen_ : pen;
    for (Eigen::Index j = 0; j < p_; ++j) {
      if (!eligible_[static_cast<std::size_t>(j)]) continue;
      if (pf_[j] == 0.0 || beta_[j] != 0.0 || std::abs(grad_[j]) >= strong_cut * pf_[j]) {
        work.push_back(j);
        in_work[static_cast<std::size_t>(j)] = 1;
      }
    }

    int sweeps = 0;
    bool ok = true;
    if (problem_.family == Family::kLinear) {
      z_ = problem_.y;
      ok = cd_quadratic(pen, work, in_work, sweeps);
    } else {
      // IRLS on the working set, then one exact gradient pass over all
      // columns; repeat while it finds violators.
      ok = false;
      int outer = 0;
      bool stuck = false;
      while (!ok && !stuck) {
        bool inner_ok = false;
        for (; outer < options_.max_outer; ++outer) {
          set_irls_weights();
          const Eigen::VectorXd beta_old = beta_;
          const double b0_old = b0_;
          if (!cd_quadratic(pen, work, in_work, sweeps, false)) break;
          if (!beta_.allFinite() || !std::isfinite(b0_)) break;
          const double change = std::max(std::abs(b0_ - b0_old),
                                         p_ > 0 ? (beta_ - beta_old).cwiseAbs().maxCoeff() : 0.0);
          if (change < options_.outer_tol) {
            inner_ok = true;
            ++outer;
            break;
          }
        }
        if (!inner_ok) break;
        exact_kkt(pen);
        bool added = false;
        for (Eigen::Index j = 0; j < p_; ++j) {
          if (!eligible_[static_cast<std::size_t>(j)] || in_work[static_cast<std::size_t>(j)]) continue;
          if (std::abs(grad_[j]) > pen * pf_[j]) {
            in_work[static_cast<std::size_t>(j)] = 1;
            work.push_back(j);
            added = true;
          }
        }
        if (!added) ok = true;
        stuck = outer >= options_.max_outer;
      }
    }

    LassoSolution sol;
    sol.lambda = lambda;
    sol.sweeps = sweeps;
    sol.intercept = b0_;
    sol.coefficients = beta_;
    sol.kkt_violation = exact_kkt(pen);
    last_pen_ = pen;
    const bool kkt_ok = sol.kkt_violation <= options_.kkt_tol * to_lambda_units_scale();
    record_kkt(sol.kkt_violation / to_lambda_units_scale(), ok && kkt_ok);
    sol.converged = ok && kkt_ok;
    for (Eigen::Index j = 0; j < p_; ++j) {
      if (beta_[j] != 0.0) {
        sol.active_set.push_back(j);
        sol.signs.push_back(beta_[j] > 0.0 ? 1 : -1);
      }
    }
    return sol;
  }

  const Eigen::VectorXd& effective_penalty() const { return pf_; }

 private:
  // Quadratic subproblem penalty L in  1/2 sum v r^2 + L sum pf |b|.
  double to_penalty(double lambda) const {
    return problem_.family == Family::kLinear ? 0.5 * lambda : n_eff_ * lambda;
  }
  double to_lambda(double penalty) const {
    return problem_.family == Family::kLinear ? 2.0 * penalty : penalty / n_eff_;
  }
  double to_lambda_units_scale() const { return kkt_scale_; }

  void set_irls_weights() {
    const Eigen::Index n = x_.rows();
    const Eigen::VectorXd eta = x_.multiply(beta_).array() + b0_;
    v_.resize(n);
    z_.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = expit(eta[i]);
      const double q = std::max(p * (1.0 - p), kMinIrlsWeight);
      v_[i] = obs_[i] * q;
      z_[i] = eta[i] + (problem_.y[i] - p) / q;
    }
    xv_.setConstant(std::numeric_limits<double>::quiet_NaN());
    xs_.setConstant(std::numeric_limits<double>::quiet_NaN());
    reset_gram();
  }

  double xv(Eigen::Index j) {
    if (std::isnan(xv_[j])) xv_[j] = x_.weighted_sq_norm(j, v_);
    return xv_[j];
  }

  void recompute_residual() { r_ = z_ - x_.multiply(beta_) - Eigen::VectorXd::Constant(z_.size(), b0_); }

  double xs(Eigen::Index j) {
    if (std::isnan(xs_[j])) xs_[j] = x_.weighted_dot(j, v_, ones_);
    return xs_[j];
  }

  // Solves the weighted quadratic subproblem to tolerance. With full_check,
  // columns outside the working set that violate KKT are added and grad_
  // holds sum_i v_i x_ij r_i for every eligible column on return.
  // Columns are centered implicitly at their v-weighted means so the
  // intercept stays decoupled; the true residual is r_ + shift.
  bool cd_quadratic(double pen, std::vector<Eigen::Index>& work, std::vector<char>& in_work, int& sweeps,
                    bool full_check = true) {
    recompute_residual();
    const double sum_v = v_.sum();
    auto recenter = [&] {
      if (sum_v <= 0.0) return;
      const double d0 = v_.dot(r_) / sum_v;
      b0_ += d0;
      r_.array() -= d0;
    };
    recenter();
    while (true) {
      double shift = 0.0;
      int since_polish = 0, next_polish = 3;
      while (true) {
        if (++sweeps > options_.max_sweeps) return false;
        double max_change = 0.0;
        for (const Eigen::Index j : work) {
          const double m = sum_v > 0.0 ? xs(j) / sum_v : 0.0;
          const double s = xv(j) - sum_v * m * m;
          double updated = 0.0;
          if (s > 1e-12 * std::max(1.0, xv(j))) {
            const double g = x_.weighted_dot(j, v_, r_) + shift * xs(j);
            updated = soft_threshold(g + s * beta_[j], pen * pf_[j]) / s;
          }
          const double delta = updated - beta_[j];
          if (delta != 0.0) {
            x_.axpy(j, -delta, r_);
            shift += delta * m;
            b0_ -= delta * m;
            beta_[j] = updated;
            max_change = std::max(max_change, std::abs(delta));
          }
        }
        if (max_change < options_.tol) break;
        if (++since_polish >= next_polish) {
          since_polish = 0;
          // Back off while steps keep stopping at sign changes.
          next_polish = polish(pen, work, sum_v, shift) ? 5 : std::min(2 * std::max(next_polish, 5), 40);
        }
      }
      r_.array() += shift;
      recenter();
      if (!full_check) return true;
      bool added = false;
      for (Eigen::Index j = 0; j < p_; ++j) {
        if (!eligible_[static_cast<std::size_t>(j)]) continue;
        grad_[j] = x_.weighted_dot(j, v_, r_);
        if (!in_work[static_cast<std::size_t>(j)] && std::abs(grad_[j]) > pen * pf_[j]) {
          in_work[static_cast<std::size_t>(j)] = 1;
          work.push_back(j);
          added = true;
        }
      }
      if (!added) return true;
    }
  }

  void reset_gram() {
    for (const Eigen::Index j : slot_cols_) slot_of_[static_cast<std::size_t>(j)] = -1;
    slot_cols_.clear();
  }

  // Row/column of the cached uncentered Gram sum_i v_i x_ij x_il for j.
  Eigen::Index ensure_slot(Eigen::Index j) {
    auto& slot = slot_of_[static_cast<std::size_t>(j)];
    if (slot >= 0) return slot;
    const auto k = static_cast<Eigen::Index>(slot_cols_.size());
    if (gram_.rows() <= k) {
      const Eigen::Index cap = std::max<Eigen::Index>(16, 2 * k);
      Eigen::MatrixXd grown(cap, cap);
      grown.topLeftCorner(k, k) = gram_.topLeftCorner(k, k);
      gram_.swap(grown);
    }
    const Eigen::VectorXd col = x_.column(j);
    for (Eigen::Index t = 0; t < k; ++t) {
      gram_(k, t) = gram_(t, k) = x_.weighted_dot(slot_cols_[static_cast<std::size_t>(t)], v_, col);
    }
    gram_(k, k) = xv(j);
    slot_cols_.push_back(j);
    slot = k;
    return k;
  }

  // Newton step on the current nonzero set with signs held fixed, cut
  // short at the first sign change. CD sweeps then confirm it. Returns
  // true when the full step was taken.
  bool polish(double pen, const std::vector<Eigen::Index>& work, double sum_v, double& shift) {
    std::vector<Eigen::Index> act;
    for (const Eigen::Index j : work)
      if (beta_[j] != 0.0 || pf_[j] == 0.0) act.push_back(j);
    const auto k = static_cast<Eigen::Index>(act.size());
    if (k == 0 || k > kMaxPolish || k >= x_.rows() || !(sum_v > 0.0)) return false;
    std::vector<Eigen::Index> slot(act.size());
    Eigen::VectorXd m(k), rhs(k);
    const double sum_vr = v_.dot(r_) + shift * sum_v;
    for (Eigen::Index c = 0; c < k; ++c) {
      const Eigen::Index j = act[static_cast<std::size_t>(c)];
      slot[static_cast<std::size_t>(c)] = ensure_slot(j);
      m[c] = xs(j) / sum_v;
      rhs[c] = x_.weighted_dot(j, v_, r_) + shift * xs(j) - m[c] * sum_vr;
      if (beta_[j] != 0.0) rhs[c] -= pen * pf_[j] * (beta_[j] > 0.0 ? 1.0 : -1.0);
    }
    Eigen::MatrixXd h(k, k);
    for (Eigen::Index c = 0; c < k; ++c)
      for (Eigen::Index e = 0; e < k; ++e)
        h(c, e) = gram_(slot[static_cast<std::size_t>(c)], slot[static_cast<std::size_t>(e)]) - sum_v * m[c] * m[e];
    const Eigen::LLT<Eigen::MatrixXd> llt(h);
    if (llt.info() != Eigen::Success) return false;
    const Eigen::VectorXd d = llt.matrixLLT().diagonal().array().square();
    if (!(d.minCoeff() > 1e-10 * std::max(1.0, d.maxCoeff()))) return false;
    const Eigen::VectorXd delta = llt.solve(rhs);
    if (!delta.allFinite()) return false;
    // Stop at the first sign change; that coordinate leaves the set.
    double t = 1.0;
    Eigen::Index hit = -1;
    for (Eigen::Index c = 0; c < k; ++c) {
      const double b = beta_[act[static_cast<std::size_t>(c)]];
      if (b == 0.0 || (b + delta[c] > 0.0) == (b > 0.0)) continue;
      const double tc = -b / delta[c];
      if (tc < t) {
        t = tc;
        hit = c;
      }
    }
    for (Eigen::Index c = 0; c < k; ++c) {
      const Eigen::Index j = act[static_cast<std::size_t>(c)];
      const double step = c == hit ? -beta_[j] : t * delta[c];
      if (step == 0.0) continue;
      x_.axpy(j, -step, r_);
      shift += step * m[c];
      b0_ -= step * m[c];
      beta_[j] = c == hit ? 0.0 : beta_[j] + step;
    }
    return hit < 0;
  }

  // Largest KKT residual in lambda units; refreshes grad_ with the exact
  // gradient of the original (not the quadratic) objective.
  double exact_kkt(double pen) {
    const Eigen::Index n = x_.rows();
    Eigen::VectorXd resid;
    if (problem_.family == Family::kLinear) {
      resid = problem_.y - x_.multiply(beta_) - Eigen::VectorXd::Constant(n, b0_);
    } else {
      const Eigen::VectorXd eta = x_.multiply(beta_).array() + b0_;
      resid = problem_.y - eta.unaryExpr([](double t) { return expit(t); });
    }
    double worst = std::abs(obs_.dot(resid));
    for (Eigen::Index j = 0; j < p_; ++j) {
      if (!eligible_[static_cast<std::size_t>(j)]) continue;
      grad_[j] = x_.weighted_dot(j, obs_, resid);
      const double g = std::abs(grad_[j]);
      const double bound = pen * pf_[j];
      const double residual = beta_[j] != 0.0 ? std::abs(grad_[j] - bound * (beta_[j] > 0 ? 1.0 : -1.0))
                                              : std::max(0.0, g - bound);
      worst = std::max(worst, residual);
    }
    return to_lambda(worst);
  }

  void fit_null() {
    // Intercept plus unpenalized columns; everything else at zero.
    std::vector<Eigen::Index> work;
    std::vector<char> in_work(static_cast<std::size_t>(p_), 1);
    for (Eigen::Index j = 0; j < p_; ++j) {
      if (eligible_[static_cast<std::size_t>(j)] && pf_[j] == 0.0) work.push_back(j);
    }
    const double ybar = obs_.dot(problem_.y) / n_eff_;
    int sweeps = 0;
    if (problem_.family == Family::kLinear) {
      b0_ = ybar;
      v_ = obs_;
      z_ = problem_.y;
      xv_.setConstant(std::numeric_limits<double>::quiet_NaN());
      xs_.setConstant(std::numeric_limits<double>::quiet_NaN());
      reset_gram();
      if (!cd_quadratic(0.0, work, in_work, sweeps)) throw NumericalError("lasso: null model did not converge");
    } else {
      if (!(ybar > 0.0 && ybar < 1.0)) throw ValidationError("logistic lasso: response has a single class");
      b0_ = logit(ybar);
      bool converged = false;
      for (int outer = 0; outer < options_.max_outer && !converged; ++outer) {
        set_irls_weights();
        const Eigen::VectorXd beta_old = beta_;
        const double b0_old = b0_;
        if (!cd_quadratic(0.0, work, in_work, sweeps)) break;
        const double change = std::max(std::abs(b0_ - b0_old),
                                       p_ > 0 ? (beta_ - beta_old).cwiseAbs().maxCoeff() : 0.0);
        converged = change < options_.outer_tol;
      }
      if (!converged) throw NumericalError("logistic lasso: null model did not converge");
    }
    exact_kkt(0.0);
    null_grad_ = grad_;
  }

  const LassoProblem& problem_;
  SolverOptions options_;
  const Design& x_;
  Eigen::Index p_;
  Eigen::VectorXd obs_;
  double n_eff_ = 0.0;
  Eigen::VectorXd pf_;
  std::vector<char> eligible_;
  double kkt_scale_ = 1.0;

  Eigen::VectorXd beta_;
  double b0_ = 0.0;
  Eigen::VectorXd grad_;
  Eigen::VectorXd null_grad_;
  double last_pen_ = std::numeric_limits<double>::quiet_NaN();

  // Current quadratic subproblem.
  Eigen::VectorXd v_, z_, r_, xv_, xs_, ones_;
  std::vector<Eigen::Index> slot_of_;
  std::vector<Eigen::Index> slot_cols_;
  Eigen::MatrixXd gram_;
};

[[noreturn]] void throw_nonconvergence(const LassoSolution& sol) {
  std::ostringstream msg;
  msg << "lasso did not converge at lambda=" << sol.lambda << " (KKT violation " << sol.kkt_violation
      << ", sweeps " << sol.sweeps << ")";
  throw NumericalError(msg.str());
}

}  // namespace

Eigen::VectorXd Design::multiply(const Eigen::VectorXd& beta) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(rows());
  for (Eigen::Index j = 0; j < cols(); ++j) {
    if (beta[j] != 0.0) axpy(j, beta[j], out);
  }
  return out;
}

double DenseDesign::weighted_dot(Eigen::Index j, const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
  return (x_.col(j).array() * a.array() * b.array()).sum();
}

double DenseDesign::weighted_sq_norm(Eigen::Index j, const Eigen::VectorXd& a) const {
  return (x_.col(j).array().square() * a.array()).sum();
}

void DenseDesign::axpy(Eigen::Index j, double alpha, Eigen::VectorXd& v) const { v.noalias() += alpha * x_.col(j); }

BinaryDesign::BinaryDesign(Eigen::Index rows, std::vector<std::vector<std::int32_t>> ones)
    : rows_(rows), ones_(std::move(ones)) {
  for (const auto& col : ones_) {
    for (const auto i : col) {
      if (i < 0 || i >= rows_) throw ValidationError("BinaryDesign: row index out of range");
    }
  }
}

double BinaryDesign::weighted_dot(Eigen::Index j, const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
  double s = 0.0;
  for (const auto i : ones_[static_cast<std::size_t>(j)]) s += a[i] * b[i];
  return s;
}

double BinaryDesign::weighted_sq_norm(Eigen::Index j, const Eigen::VectorXd& a) const {
  double s = 0.0;
  for (const auto i : ones_[static_cast<std::size_t>(j)]) s += a[i];
  return s;
}

void BinaryDesign::axpy(Eigen::Index j, double alpha, Eigen::VectorXd& v) const {
  for (const auto i : ones_[static_cast<std::size_t>(j)]) v[i] += alpha;
}

Eigen::VectorXd BinaryDesign::column(Eigen::Index j) const {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(rows_);
  for (const auto i : ones_[static_cast<std::size_t>(j)]) c[i] = 1.0;
  return c;
}

LassoProblem LassoProblem::dense(Eigen::MatrixXd x, Eigen::VectorXd y, Eigen::VectorXd penalty_factors,
                                 Family family) {
  LassoProblem p;
  p.x = std::make_shared<DenseDesign>(std::move(x));
  p.y = std::move(y);
  p.penalty_factors = std::move(penalty_factors);
  p.family = family;
  return p;
}

LassoProblem LassoProblem::dense(Eigen::MatrixXd x, Eigen::VectorXd y, Family family) {
  const Eigen::Index cols = x.cols();
  return dense(std::move(x), std::move(y), Eigen::VectorXd::Ones(cols), family);
}

void LassoProblem::validate() const {
  if (!x) throw ValidationError("lasso: missing design");
  if (y.size() != x->rows()) throw ValidationError("lasso: response length differs from design rows");
  if (penalty_factors.size() != x->cols()) throw ValidationError("lasso: one penalty factor per column required");
  for (Eigen::Index j = 0; j < penalty_factors.size(); ++j) {
    const double w = penalty_factors[j];
    if (std::isnan(w) || w < 0.0) throw ValidationError("lasso: penalty factors must be >= 0 or +inf");
  }
  if (observation_weights.size() != 0 && observation_weights.size() != y.size())
    throw ValidationError("lasso: observation weight length differs from response length");
  if (family == Family::kLogistic) {
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (y[i] != 0.0 && y[i] != 1.0) throw ValidationError("logistic lasso: response must be 0/1");
    }
  }
}

Eigen::VectorXd LassoSolution::predict_link(const Design& x) const {
  return x.multiply(coefficients).array() + intercept;
}

double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

LassoSolution solve_weighted_lasso(const LassoProblem& problem, double lambda, const SolverOptions& options) {
  if (problem.family != Family::kLinear) throw ValidationError("solve_weighted_lasso expects the linear family");
  PathSolver solver(problem, options);
  auto sol = solver.solve(lambda);
  if (!sol.converged) throw_nonconvergence(sol);
  return sol;
}

LassoSolution solve_logistic_lasso(const LassoProblem& problem, double lambda, const SolverOptions& options) {
  if (problem.family != Family::kLogistic) throw ValidationError("solve_logistic_lasso expects the logistic family");
  PathSolver solver(problem, options);
  auto sol = solver.solve(lambda);
  if (!sol.converged) throw_nonconvergence(sol);
  return sol;
}

std::vector<LassoSolution> solve_path(const LassoProblem& problem, std::span<const double> lambdas,
                                      const SolverOptions& options) {
  PathSolver solver(problem, options);
  std::vector<LassoSolution> out;
  out.reserve(lambdas.size());
  for (const double lambda : lambdas) {
    out.push_back(solver.solve(lambda));
    if (!out.back().converged) throw_nonconvergence(out.back());
  }
  return out;
}

double lambda_max(const LassoProblem& problem) {
  PathSolver solver(problem, SolverOptions{});
  return solver.lambda_max();
}

std::vector<double> lambda_grid(const LassoProblem& problem, int n_lambdas, double ratio) {
  if (n_lambdas < 1) throw ValidationError("lambda grid: n_lambdas must be >= 1");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ValidationError("lambda grid: ratio must lie in (0, 1)");
  const double top = lambda_max(problem);
  if (!(top > 0.0)) throw ValidationError("lambda grid: lambda_max is zero (response has no signal to penalize)");
  std::vector<double> grid(static_cast<std::size_t>(n_lambdas));
  for (int k = 0; k < n_lambdas; ++k) {
    const double frac = n_lambdas == 1 ? 0.0 : static_cast<double>(k) / (n_lambdas - 1);
    grid[static_cast<std::size_t>(k)] = top * std::pow(ratio, frac);
  }
  grid.front() = top;
  return grid;
}

std::vector<int> make_folds(Eigen::Index n, int folds, std::uint64_t seed) {
  if (folds < 2) throw ValidationError("cross-validation needs at least 2 folds");
  if (n < folds) throw ValidationError("cross-validation needs at least as many rows as folds");
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> fold_of(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k) {
    fold_of[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = static_cast<int>(k * folds / n);
  }
  return fold_of;
}

CvResult cv_select_lambda(const LassoProblem& problem, int folds, std::span<const double> grid,
                          std::uint64_t seed, const SolverOptions& options, int patience) {
  problem.validate();
  if (grid.empty()) throw ValidationError("cross-validation: empty lambda grid");
  for (std::size_t k = 1; k < grid.size(); ++k) {
    if (!(grid[k] < grid[k - 1])) throw ValidationError("cross-validation: lambda grid must be strictly decreasing");
  }
  if (patience < 0) throw ValidationError("cross-validation: patience must be >= 0");
  const Eigen::Index n = problem.n();
  const auto fold_of = make_folds(n, folds, seed);
  const Eigen::VectorXd base =
      problem.observation_weights.size() == 0 ? Eigen::VectorXd::Ones(n) : problem.observation_weights;
  const double n_total = base.sum();
  const std::size_t m = grid.size();
  const auto nf = static_cast<std::size_t>(folds);

  // Folds advance along the grid together so the loss curve can be
  // watched as it forms.
  std::vector<LassoProblem> train(nf, problem);
  std::vector<double> factor(nf), fold_weight(nf, 0.0);
  for (std::size_t f = 0; f < nf; ++f) {
    train[f].observation_weights = base;
    Eigen::Index held = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (fold_of[static_cast<std::size_t>(i)] == static_cast<int>(f)) {
        train[f].observation_weights[i] = 0.0;
        fold_weight[f] += base[i];
        ++held;
      }
    }
    if (held < 2) throw ValidationError("cross-validation: fold " + std::to_string(f) + " has fewer than 2 rows");
    factor[f] = problem.family == Family::kLinear ? train[f].observation_weights.sum() / n_total : 1.0;
  }
  std::vector<std::unique_ptr<PathSolver>> solvers;
  for (std::size_t f = 0; f < nf; ++f) solvers.push_back(std::make_unique<PathSolver>(train[f], options));
  const double total_w = std::accumulate(fold_weight.begin(), fold_weight.end(), 0.0);

  CvResult result;
  std::size_t best = 0;
  std::vector<double> loss(nf);
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t f = 0; f < nf; ++f) {
      const LassoSolution sol = solvers[f]->solve(grid[k] * factor[f]);
      if (!sol.converged) throw_nonconvergence(sol);
      const Eigen::VectorXd eta = sol.predict_link(*problem.x);
      double sum = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (fold_of[static_cast<std::size_t>(i)] != static_cast<int>(f)) continue;
        double li;
        if (problem.family == Family::kLinear) {
          const double e = problem.y[i] - eta[i];
          li = e * e;
        } else {
          const double p = std::clamp(expit(eta[i]), 1e-10, 1.0 - 1e-10);
          li = -2.0 * (problem.y[i] * std::log(p) + (1.0 - problem.y[i]) * std::log(1.0 - p));
        }
        sum += base[i] * li;
      }
      loss[f] = sum / fold_weight[f];
    }
    double mean = 0.0;
    for (std::size_t f = 0; f < nf; ++f) mean += fold_weight[f] * loss[f];
    mean /= total_w;
    double var = 0.0;
    for (std::size_t f = 0; f < nf; ++f) var += fold_weight[f] * (loss[f] - mean) * (loss[f] - mean);
    var /= total_w;
    result.lambda_grid.push_back(grid[k]);
    result.cv_mse.push_back(mean);
    result.cv_se.push_back(std::sqrt(var / (folds - 1)));
    if (mean < result.cv_mse[best]) best = k;
    if (patience > 0 && k - best >= static_cast<std::size_t>(patience) &&
        mean > result.cv_mse[best] + result.cv_se[best])
      break;
  }
  result.chosen_index = best;
  result.chosen_lambda = grid[best];
  return result;
}

double lasso_objective(const LassoProblem& problem, double intercept, const Eigen::VectorXd& beta, double lambda) {
  const Eigen::Index n = problem.n();
  const Eigen::VectorXd obs =
      problem.observation_weights.size() == 0 ? Eigen::VectorXd::Ones(n) : problem.observation_weights;
  const Eigen::VectorXd eta = problem.x->multiply(beta).array() + intercept;
  double penalty = 0.0;
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    if (beta[j] == 0.0) continue;
    if (!std::isfinite(problem.penalty_factors[j])) return std::numeric_limits<double>::infinity();
    penalty += problem.penalty_factors[j] * std::abs(beta[j]);
  }
  if (problem.family == Family::kLinear) {
    return (obs.array() * (problem.y - eta).array().square()).sum() + lambda * penalty;
  }
  double nll = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    // log(1 + e^eta) - y * eta, evaluated without overflow.
    const double t = eta[i];
    const double softplus = t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
    nll += obs[i] * (softplus - problem.y[i] * t);
  }
  return nll / obs.sum() + lambda * penalty;
}

KktStats kkt_stats() {
  std::lock_guard lock(g_kkt_mutex);
  return {g_kkt_checked.load(), g_kkt_violations.load(), g_kkt_worst};
}

void reset_kkt_stats() {
  std::lock_guard lock(g_kkt_mutex);
  g_kkt_checked = 0;
  g_kkt_violations = 0;
  g_kkt_worst = 0.0;
}

}  // namespace emlasso
