#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace emlasso {

// n observations of (W, A, Y). Immutable once constructed; the constructor
// enforces every invariant (binary treatment, equal lengths, unique names).
class ObservationTable {
 public:
  ObservationTable(std::vector<std::string> covariate_names, Eigen::MatrixXd covariates,
                   Eigen::VectorXd treatment, Eigen::VectorXd outcome);

  Eigen::Index n() const { return outcome_.size(); }
  Eigen::Index num_covariates() const { return covariates_.cols(); }

  const std::vector<std::string>& covariate_names() const { return names_; }
  const Eigen::MatrixXd& covariates() const { return covariates_; }
  const Eigen::VectorXd& treatment() const { return treatment_; }
  const Eigen::VectorXd& outcome() const { return outcome_; }

  // Column index of a covariate, or nullopt.
  std::optional<Eigen::Index> find(std::string_view name) const;
  // Column index of a covariate; throws ValidationError naming the column.
  Eigen::Index index_of(std::string_view name) const;
  Eigen::VectorXd column(std::string_view name) const { return covariates_.col(index_of(name)); }

  // Covariate submatrix for the given names, in the given order.
  Eigen::MatrixXd select(const std::vector<std::string>& names) const;

 private:
  std::vector<std::string> names_;
  Eigen::MatrixXd covariates_;
  Eigen::VectorXd treatment_;
  Eigen::VectorXd outcome_;
};

// One design column: product of covariates, optionally times the treatment.
// The empty product without treatment is the intercept; the empty product
// with treatment is the main treatment effect.
struct Term {
  std::vector<std::string> factors;
  bool treatment = false;

  bool is_intercept() const { return factors.empty() && !treatment; }
  std::string label() const;
  bool operator==(const Term&) const = default;
};

enum class Family { kLinear, kLogistic };

struct ModelSpec {
  std::vector<Term> terms;
  Family family = Family::kLinear;

  std::vector<std::string> labels() const;
  bool uses_treatment() const;
};

// Candidate effect modifiers V, in output order.
struct EmCandidateSet {
  std::vector<std::string> names;

  std::size_t size() const { return names.size(); }
  void validate(const ObservationTable& table) const;
};

// Parses the formula mini-language: terms separated by '+', factors joined
// by '*', `A` is the treatment and `1` the intercept, e.g.
// "1 + A + X + V1*V2*V3 + A*V1". The intercept is always placed first;
// "0" or "-1" as a term drops it. Duplicate terms are rejected.
ModelSpec parse_formula(std::string_view formula, Family family = Family::kLinear);

// Reads a header-first CSV. Every column other than the treatment and the
// outcome becomes a covariate, in file order.
ObservationTable load_csv(const std::filesystem::path& path, std::string_view treatment_name,
                          std::string_view outcome_name);

// Writes covariates, then treatment and outcome, with round-trip precision.
void write_csv(const ObservationTable& table, const std::filesystem::path& path,
               std::string_view treatment_name = "A", std::string_view outcome_name = "Y");

// One column per term in spec order. When `a_override` is set every
// occurrence of the treatment uses that value instead of the observed A.
Eigen::MatrixXd build_design(const ObservationTable& table, const ModelSpec& spec,
                             std::optional<double> a_override = std::nullopt);

}  // namespace emlasso
