#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "emlasso/simlab.hpp"

namespace emlasso {

inline constexpr int kReportSchema = 1;

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

// One row per variable: variable,mean_beta,pct_sel,pct_cov,fcr,failed_reps.
// An undefined coverage is an empty field.
std::string report_csv(const SimulationReport& report);

// Config echo plus per-variable records, with a "schema" field.
std::string report_json(const SimulationReport& report);

// Accepts either serialization. Throws ValidationError on empty input, an
// unknown schema or malformed content.
SimulationReport parse_report(std::string_view text);

// Fixed-width table, one column group per report.
std::string render_table(const std::vector<SimulationReport>& reports);

}  // namespace emlasso
