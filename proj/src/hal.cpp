#include "emlasso/hal.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <unordered_map>

#include "emlasso/error.hpp"
#include "emlasso/linmod.hpp"

namespace emlasso {

namespace {

using Word = std::uint64_t;

class Bitset {
 public:
  explicit Bitset(Eigen::Index n) : n_(n), words_(static_cast<std::size_t>((n + 63) / 64), 0) {}
  void set(Eigen::Index i) { words_[static_cast<std::size_t>(i / 64)] |= Word{1} << (i % 64); }
  void and_with(const Bitset& o) {
    for (std::size_t k = 0; k < words_.size(); ++k) words_[k] &= o.words_[k];
  }
  Eigen::Index count() const {
    Eigen::Index c = 0;
    for (const Word w : words_) c += std::popcount(w);
    return c;
  }
  std::size_t hash() const {
    std::size_t h = 1469598103934665603ULL;
    for (const Word w : words_) h = (h ^ static_cast<std::size_t>(w)) * 1099511628211ULL;
    return h;
  }
  bool operator==(const Bitset& o) const { return words_ == o.words_; }
  std::vector<std::int32_t> indices() const {
    std::vector<std::int32_t> out;
    for (std::size_t k = 0; k < words_.size(); ++k) {
      Word w = words_[k];
      while (w) {
        const int b = std::countr_zero(w);
        out.push_back(static_cast<std::int32_t>(k * 64 + static_cast<std::size_t>(b)));
        w &= w - 1;
      }
    }
    return out;
  }

 private:
  Eigen::Index n_;
  std::vector<Word> words_;
};

// Calls f(subset) for every k-subset of {0..d-1} in lexicographic order.
template <class F>
void for_each_subset(int d, int k, F&& f) {
  std::vector<int> s(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) s[static_cast<std::size_t>(i)] = i;
  while (true) {
    f(s);
    int i = k - 1;
    while (i >= 0 && s[static_cast<std::size_t>(i)] == d - k + i) --i;
    if (i < 0) return;
    ++s[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < k; ++j) s[static_cast<std::size_t>(j)] = s[static_cast<std::size_t>(j - 1)] + 1;
  }
}

}  // namespace

double HalTag::evaluate(const Eigen::Ref<const Eigen::RowVectorXd>& v) const {
  for (std::size_t k = 0; k < subset.size(); ++k) {
    if (!(v[subset[k]] >= knot[k])) return 0.0;
  }
  return 1.0;
}

HalBasis build_hal_basis(const Eigen::MatrixXd& w, int max_order) {
  const Eigen::Index n = w.rows();
  const int d = static_cast<int>(w.cols());
  if (n == 0 || d == 0) throw ValidationError("HAL basis: empty covariate matrix");
  if (max_order < 1 || max_order > d)
    throw ValidationError("HAL basis: max_order must lie in [1, number of covariates]");
  if (!w.allFinite()) throw ValidationError("HAL basis: covariates must be finite");

  // Per coordinate: sorted distinct values, each row's rank, and the
  // threshold sets {r : w_rk >= value} for every distinct value.
  std::vector<std::vector<double>> levels(static_cast<std::size_t>(d));
  std::vector<std::vector<std::uint32_t>> rank(static_cast<std::size_t>(d));
  std::vector<std::vector<Bitset>> at_least(static_cast<std::size_t>(d));
  for (int k = 0; k < d; ++k) {
    auto& lv = levels[static_cast<std::size_t>(k)];
    lv.assign(w.col(k).data(), w.col(k).data() + n);
    std::sort(lv.begin(), lv.end());
    lv.erase(std::unique(lv.begin(), lv.end()), lv.end());
    auto& rk = rank[static_cast<std::size_t>(k)];
    rk.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      rk[static_cast<std::size_t>(i)] =
          static_cast<std::uint32_t>(std::lower_bound(lv.begin(), lv.end(), w(i, k)) - lv.begin());
    }
    auto& sets = at_least[static_cast<std::size_t>(k)];
    sets.assign(lv.size(), Bitset(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      for (std::uint32_t t = 0; t <= rk[static_cast<std::size_t>(i)]; ++t) sets[t].set(i);
    }
  }

  HalBasis basis;
  basis.num_covariates = d;
  std::vector<Bitset> kept;
  std::unordered_multimap<std::size_t, Eigen::Index> by_hash;
  std::map<std::vector<std::uint32_t>, Eigen::Index> seen_knots;

  for (int order = 1; order <= max_order; ++order) {
    for_each_subset(d, order, [&](const std::vector<int>& s) {
      seen_knots.clear();
      std::vector<std::uint32_t> key(s.size());
      for (Eigen::Index i = 0; i < n; ++i) {
        for (std::size_t m = 0; m < s.size(); ++m) key[m] = rank[static_cast<std::size_t>(s[m])][static_cast<std::size_t>(i)];
        if (seen_knots.count(key)) continue;
        seen_knots.emplace(key, i);

        Bitset col = at_least[static_cast<std::size_t>(s[0])][key[0]];
        for (std::size_t m = 1; m < s.size(); ++m) col.and_with(at_least[static_cast<std::size_t>(s[m])][key[m]]);
        const Eigen::Index ones = col.count();
        if (ones == 0 || ones == n) {
          basis.dedup_map.push_back(-1);
          continue;
        }
        const std::size_t h = col.hash();
        Eigen::Index match = -1;
        const auto range = by_hash.equal_range(h);
        for (auto it = range.first; it != range.second; ++it) {
          if (kept[static_cast<std::size_t>(it->second)] == col) {
            match = it->second;
            break;
          }
        }
        if (match < 0) {
          match = static_cast<Eigen::Index>(kept.size());
          by_hash.emplace(h, match);
          kept.push_back(std::move(col));
          HalTag tag;
          tag.subset = s;
          tag.knot_row = i;
          for (const int k : s) tag.knot.push_back(w(i, k));
          basis.tags.push_back(std::move(tag));
        }
        basis.dedup_map.push_back(match);
      }
    });
  }

  std::vector<std::vector<std::int32_t>> ones;
  ones.reserve(kept.size());
  for (const auto& b : kept) ones.push_back(b.indices());
  basis.columns = std::make_shared<BinaryDesign>(n, std::move(ones));
  return basis;
}

HalFit fit_hal(const Eigen::MatrixXd& w, const Eigen::VectorXd& y, Family family, const HalOptions& options) {
  if (w.rows() != y.size()) throw ValidationError("fit_hal: covariate rows differ from response length");
  if (options.max_order < 1) throw ValidationError("fit_hal: max_order must be at least 1");
  HalBasis basis = build_hal_basis(w, std::min<int>(options.max_order, static_cast<int>(w.cols())));

  HalFit fit;
  fit.family = family;
  fit.num_covariates = w.cols();
  fit.basis_size = basis.size();

  const double ybar = y.mean();
  const bool constant_y = (y.array() == y[0]).all();
  if (family == Family::kLogistic && constant_y) throw ValidationError("fit_hal: binary response has a single class");
  if (basis.size() == 0 || constant_y) {
    fit.intercept = family == Family::kLinear ? ybar : logit(ybar);
    fit.coefficients.resize(0);
    return fit;
  }

  LassoProblem problem;
  problem.x = basis.columns;
  problem.y = y;
  problem.penalty_factors = Eigen::VectorXd::Ones(basis.size());
  problem.family = family;

  LassoSolution sol;
  if (options.fixed_lambda) {
    sol = family == Family::kLinear ? solve_weighted_lasso(problem, *options.fixed_lambda)
                                    : solve_logistic_lasso(problem, *options.fixed_lambda);
  } else {
    const double ratio = options.ratio.value_or(w.rows() > basis.size() ? 1e-4 : 1e-2);
    const auto grid = lambda_grid(problem, options.n_lambdas, ratio);
    SolverOptions solver;
    auto cv = cv_select_lambda(problem, options.folds, grid, options.seed, solver, options.cv_patience);
    auto path = solve_path(problem, std::span<const double>(grid.data(), cv.chosen_index + 1), solver);
    sol = std::move(path.back());
    fit.cv = std::move(cv);
  }

  fit.lambda = sol.lambda;
  fit.intercept = sol.intercept;
  fit.coefficients.resize(static_cast<Eigen::Index>(sol.active_set.size()));
  for (std::size_t k = 0; k < sol.active_set.size(); ++k) {
    const Eigen::Index j = sol.active_set[k];
    fit.coefficients[static_cast<Eigen::Index>(k)] = sol.coefficients[j];
    fit.tags.push_back(basis.tags[static_cast<std::size_t>(j)]);
  }
  return fit;
}

Eigen::VectorXd hal_predict(const HalFit& fit, const Eigen::MatrixXd& w_new) {
  if (w_new.cols() != fit.num_covariates) throw ValidationError("hal_predict: covariate dimension mismatch");
  Eigen::VectorXd eta = Eigen::VectorXd::Constant(w_new.rows(), fit.intercept);
  for (Eigen::Index i = 0; i < w_new.rows(); ++i) {
    for (std::size_t k = 0; k < fit.tags.size(); ++k) {
      if (fit.tags[k].evaluate(w_new.row(i))) eta[i] += fit.coefficients[static_cast<Eigen::Index>(k)];
    }
  }
  if (fit.family == Family::kLogistic) return eta.unaryExpr([](double t) { return expit(t); });
  return eta;
}

}  // namespace emlasso
