#include "emlasso/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "json.hpp"

#include "emlasso/error.hpp"

namespace emlasso {

namespace {

using nlohmann::json;

constexpr const char* kCsvHeader = "variable,mean_beta,pct_sel,pct_cov,fcr,failed_reps";

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_number(const std::string& s, const std::string& what) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ValidationError("report: bad " + what + " '" + s + "'");
  return v;
}

json config_json(const ScenarioConfig& c) {
  json j;
  j["scenario"] = to_string(c.scenario);
  j["implementation"] = to_string(c.implementation);
  j["n"] = c.n;
  j["reps"] = c.reps;
  j["seed"] = c.seed;
  j["alpha"] = c.alpha;
  j["folds"] = c.folds;
  j["gamma"] = c.gamma;
  j["truncation"] = c.truncation ? json::array({c.truncation->lo, c.truncation->hi}) : json(nullptr);
  j["noise_covariates"] = c.noise_covariates;
  j["hal_order"] = c.hal_order;
  return j;
}

ScenarioConfig config_from_json(const json& j) {
  ScenarioConfig c;
  c.scenario = parse_scenario(j.at("scenario").get<std::string>());
  c.implementation = parse_implementation(j.at("implementation").get<std::string>());
  c.n = j.at("n").get<Eigen::Index>();
  c.reps = j.at("reps").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.alpha = j.at("alpha").get<double>();
  c.folds = j.at("folds").get<int>();
  c.gamma = j.at("gamma").get<double>();
  if (!j.at("truncation").is_null()) c.truncation = Truncation{j["truncation"].at(0), j["truncation"].at(1)};
  c.noise_covariates = j.at("noise_covariates").get<int>();
  c.hal_order = j.at("hal_order").get<int>();
  return c;
}

SimulationReport parse_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("report: invalid JSON: ") + e.what());
  }
  try {
    if (!j.is_object() || !j.contains("schema") || j["schema"] != kReportSchema)
      throw ValidationError("report: unsupported schema (expected " + std::to_string(kReportSchema) + ")");
    SimulationReport r;
    r.config = config_from_json(j.at("config"));
    r.reps = j.at("reps").get<int>();
    r.failed_reps = j.at("failed_reps").get<int>();
    r.fcr = j.at("fcr").get<double>();
    for (const auto& v : j.at("variables")) {
      VariableSummary s;
      s.name = v.at("name").get<std::string>();
      s.mean_beta = v.at("mean_beta").get<double>();
      s.pct_sel = v.at("pct_sel").get<double>();
      if (!v.at("pct_cov").is_null()) s.pct_cov = v["pct_cov"].get<double>();
      s.modifier = v.at("em").get<bool>();
      r.variables.push_back(std::move(s));
    }
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("report: schema mismatch: ") + e.what());
  }
}

SimulationReport parse_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) throw ValidationError("report: unsupported CSV header '" + line + "'");
  SimulationReport r;
  r.has_config = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 6) throw ValidationError("report: expected 6 CSV fields in '" + line + "'");
    VariableSummary s;
    s.name = f[0];
    s.mean_beta = parse_number(f[1], "mean_beta");
    s.pct_sel = parse_number(f[2], "pct_sel");
    if (!f[3].empty()) s.pct_cov = parse_number(f[3], "pct_cov");
    r.fcr = parse_number(f[4], "fcr");
    r.failed_reps = static_cast<int>(parse_number(f[5], "failed_reps"));
    r.variables.push_back(std::move(s));
  }
  if (r.variables.empty()) throw ValidationError("report: CSV has no variable rows");
  return r;
}

std::string fixed(double v, int digits) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << v;
  return out.str();
}

std::string pad_left(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

std::string pad_right(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string group_label(const SimulationReport& r, std::size_t k) {
  if (!r.has_config) return "report " + std::to_string(k + 1);
  return to_string(r.config.scenario) + "/" + to_string(r.config.implementation) + " n=" + std::to_string(r.config.n);
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string report_csv(const SimulationReport& report) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& v : report.variables) {
    out += v.name + "," + format_double(v.mean_beta) + "," + format_double(v.pct_sel) + "," +
           (v.pct_cov ? format_double(*v.pct_cov) : "") + "," + format_double(report.fcr) + "," +
           std::to_string(report.failed_reps) + "\n";
  }
  return out;
}

std::string report_json(const SimulationReport& report) {
  json j;
  j["schema"] = kReportSchema;
  j["config"] = config_json(report.config);
  j["reps"] = report.reps;
  j["failed_reps"] = report.failed_reps;
  j["fcr"] = report.fcr;
  j["variables"] = json::array();
  for (const auto& v : report.variables) {
    j["variables"].push_back({{"name", v.name},
                              {"mean_beta", v.mean_beta},
                              {"pct_sel", v.pct_sel},
                              {"pct_cov", v.pct_cov ? json(*v.pct_cov) : json(nullptr)},
                              {"em", v.modifier}});
  }
  return j.dump(2) + "\n";
}

SimulationReport parse_report(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) throw ValidationError("report: empty input");
  text.remove_prefix(first);
  if (text.front() == '{') return parse_json(text);
  return parse_csv(text);
}

std::string render_table(const std::vector<SimulationReport>& reports) {
  if (reports.empty()) throw ValidationError("report: nothing to render");
  // row order: first appearance across reports
  std::vector<std::string> rows;
  for (const auto& r : reports)
    for (const auto& v : r.variables)
      if (std::find(rows.begin(), rows.end(), v.name) == rows.end()) rows.push_back(v.name);

  std::size_t name_w = 4;
  for (const auto& name : rows) name_w = std::max(name_w, name.size());
  const std::size_t w_beta = 9, w_sel = 4, w_cov = 4, w_fcr = 3;
  const std::size_t group_w = w_beta + w_sel + w_cov + w_fcr + 6;

  std::ostringstream out;
  if (reports.size() > 1) {
    std::string line = std::string(name_w, ' ');
    for (std::size_t k = 0; k < reports.size(); ++k) line += "  " + pad_right(group_label(reports[k], k), group_w);
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << "\n";
  }
  std::string header = pad_right("Coef", name_w);
  for (std::size_t k = 0; k < reports.size(); ++k) header += "  mean_beta  %sel  %cov  FCR";
  out << header << "\n";

  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::string line = pad_right(rows[i], name_w);
    for (const auto& r : reports) {
      const auto it = std::find_if(r.variables.begin(), r.variables.end(),
                                   [&](const VariableSummary& v) { return v.name == rows[i]; });
      if (it == r.variables.end()) {
        line += "  " + std::string(group_w, ' ');
        continue;
      }
      line += "  " + pad_left(fixed(it->mean_beta, 2), w_beta);
      line += "  " + pad_left(fixed(it->pct_sel, 0), w_sel);
      line += "  " + pad_left(it->pct_cov ? fixed(*it->pct_cov, 0) : "-", w_cov);
      line += "  " + pad_left(i == 0 ? fixed(100.0 * r.fcr, 0) : "", w_fcr);
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << "\n";
  }
  bool any_failed = false;
  for (const auto& r : reports) any_failed = any_failed || r.failed_reps > 0;
  if (any_failed) {
    std::string line = "failed reps:";
    for (const auto& r : reports) line += " " + std::to_string(r.failed_reps);
    out << line << "\n";
  }
  return out.str();
}

}  // namespace emlasso
