#include "emlasso/tabular.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "emlasso/error.hpp"

namespace emlasso {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::optional<double> parse_real(std::string_view cell) {
  cell = trim(cell);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  if (cell.empty()) return std::nullopt;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc{} || ptr != cell.data() + cell.size()) return std::nullopt;
  if (!std::isfinite(value)) return std::nullopt;
  return value;
}

}  // namespace

ObservationTable::ObservationTable(std::vector<std::string> covariate_names,
                                   Eigen::MatrixXd covariates, Eigen::VectorXd treatment,
                                   Eigen::VectorXd outcome)
    : names_(std::move(covariate_names)),
      covariates_(std::move(covariates)),
      treatment_(std::move(treatment)),
      outcome_(std::move(outcome)) {
  const Eigen::Index n = outcome_.size();
  if (n < 2) throw ValidationError("observation table needs at least 2 rows, got " + std::to_string(n));
  if (treatment_.size() != n) throw ValidationError("treatment column length differs from outcome");
  if (covariates_.rows() != n && covariates_.cols() > 0)
    throw ValidationError("covariate columns differ in length from outcome");
  if (covariates_.cols() == 0) covariates_.resize(n, 0);
  if (static_cast<Eigen::Index>(names_.size()) != covariates_.cols())
    throw ValidationError("covariate name count does not match column count");
  std::set<std::string> seen;
  for (const auto& name : names_) {
    if (name.empty()) throw ValidationError("empty covariate name");
    if (!seen.insert(name).second) throw ValidationError("duplicate covariate name '" + name + "'");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (treatment_[i] != 0.0 && treatment_[i] != 1.0)
      throw ValidationError("treatment value at row " + std::to_string(i + 1) + " is not 0 or 1");
  }
  if (!covariates_.allFinite() || !outcome_.allFinite())
    throw ValidationError("observation table contains non-finite values");
}

std::optional<Eigen::Index> ObservationTable::find(std::string_view name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<Eigen::Index>(it - names_.begin());
}

Eigen::Index ObservationTable::index_of(std::string_view name) const {
  if (auto idx = find(name)) return *idx;
  throw ValidationError("unknown covariate '" + std::string(name) + "'");
}

Eigen::MatrixXd ObservationTable::select(const std::vector<std::string>& names) const {
  Eigen::MatrixXd out(n(), static_cast<Eigen::Index>(names.size()));
  for (std::size_t j = 0; j < names.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = column(names[j]);
  return out;
}

std::string Term::label() const {
  if (is_intercept()) return "1";
  std::string out = treatment ? "A" : "";
  for (const auto& f : factors) {
    if (!out.empty()) out += '*';
    out += f;
  }
  return out;
}

std::vector<std::string> ModelSpec::labels() const {
  std::vector<std::string> out;
  out.reserve(terms.size());
  for (const auto& t : terms) out.push_back(t.label());
  return out;
}

bool ModelSpec::uses_treatment() const {
  return std::any_of(terms.begin(), terms.end(), [](const Term& t) { return t.treatment; });
}

void EmCandidateSet::validate(const ObservationTable& table) const {
  if (names.empty()) throw ValidationError("effect-modifier candidate set is empty");
  std::set<std::string> seen;
  for (const auto& name : names) {
    table.index_of(name);
    if (!seen.insert(name).second) throw ValidationError("duplicate candidate '" + name + "'");
  }
}

ModelSpec parse_formula(std::string_view formula, Family family) {
  ModelSpec spec;
  spec.family = family;
  bool intercept = true;
  std::vector<Term> terms;
  for (auto raw : split(formula, '+')) {
    const auto text = trim(raw);
    if (text.empty()) throw ValidationError("empty term in formula '" + std::string(formula) + "'");
    if (text == "1") continue;
    if (text == "0" || text == "-1") {
      intercept = false;
      continue;
    }
    Term term;
    for (auto raw_factor : split(text, '*')) {
      const auto factor = trim(raw_factor);
      if (factor.empty()) throw ValidationError("empty factor in term '" + std::string(text) + "'");
      if (factor == "A") {
        if (term.treatment) throw ValidationError("treatment repeated in term '" + std::string(text) + "'");
        term.treatment = true;
      } else if (factor == "1") {
        continue;
      } else {
        term.factors.emplace_back(factor);
      }
    }
    if (term.is_intercept()) continue;
    if (std::find(terms.begin(), terms.end(), term) != terms.end())
      throw ValidationError("duplicate term '" + term.label() + "' in formula");
    terms.push_back(std::move(term));
  }
  if (intercept) spec.terms.push_back(Term{});
  spec.terms.insert(spec.terms.end(), terms.begin(), terms.end());
  if (spec.terms.empty()) throw ValidationError("formula has no terms");
  return spec;
}

ObservationTable load_csv(const std::filesystem::path& path, std::string_view treatment_name,
                          std::string_view outcome_name) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");

  std::string line;
  if (!std::getline(in, line)) throw ValidationError("'" + path.string() + "' is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::vector<std::string> header;
  for (auto cell : split(line, ',')) header.emplace_back(trim(cell));

  auto locate = [&](std::string_view name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ValidationError("missing column '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t a_col = locate(treatment_name);
  const std::size_t y_col = locate(outcome_name);

  std::vector<std::vector<double>> rows;
  std::size_t row_number = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row_number;
    const auto cells = split(line, ',');
    if (cells.size() != header.size())
      throw ValidationError("row " + std::to_string(row_number) + " has " + std::to_string(cells.size()) +
                            " cells, header has " + std::to_string(header.size()));
    std::vector<double> values(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto v = parse_real(cells[c]);
      if (!v)
        throw ValidationError("row " + std::to_string(row_number) + ", column '" + header[c] +
                              "': cannot parse '" + std::string(trim(cells[c])) + "'");
      values[c] = *v;
    }
    if (values[a_col] != 0.0 && values[a_col] != 1.0)
      throw ValidationError("row " + std::to_string(row_number) + ": treatment '" + header[a_col] +
                            "' must be 0 or 1");
    rows.push_back(std::move(values));
  }

  const auto n = static_cast<Eigen::Index>(rows.size());
  std::vector<std::string> names;
  std::vector<std::size_t> cov_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == a_col || c == y_col) continue;
    names.push_back(header[c]);
    cov_cols.push_back(c);
  }
  Eigen::MatrixXd w(n, static_cast<Eigen::Index>(cov_cols.size()));
  Eigen::VectorXd a(n), y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < cov_cols.size(); ++j) w(i, static_cast<Eigen::Index>(j)) = r[cov_cols[j]];
    a[i] = r[a_col];
    y[i] = r[y_col];
  }
  return ObservationTable(std::move(names), std::move(w), std::move(a), std::move(y));
}

void write_csv(const ObservationTable& table, const std::filesystem::path& path,
               std::string_view treatment_name, std::string_view outcome_name) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& name : table.covariate_names()) out << name << ',';
  out << treatment_name << ',' << outcome_name << '\n';
  for (Eigen::Index i = 0; i < table.n(); ++i) {
    for (Eigen::Index j = 0; j < table.num_covariates(); ++j) out << table.covariates()(i, j) << ',';
    out << table.treatment()[i] << ',' << table.outcome()[i] << '\n';
  }
}

Eigen::MatrixXd build_design(const ObservationTable& table, const ModelSpec& spec,
                             std::optional<double> a_override) {
  const Eigen::Index n = table.n();
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(spec.terms.size()));
  for (std::size_t k = 0; k < spec.terms.size(); ++k) {
    const Term& term = spec.terms[k];
    auto col = x.col(static_cast<Eigen::Index>(k));
    col.setOnes();
    for (const auto& factor : term.factors) col.array() *= table.column(factor).array();
    if (term.treatment) {
      if (a_override) {
        col *= *a_override;
      } else {
        col.array() *= table.treatment().array();
      }
    }
  }
  return x;
}

}  // namespace emlasso
