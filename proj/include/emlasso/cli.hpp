#pragma once

#include <iosfwd>

namespace emlasso {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;

// Entry point for the `emlasso` tool: subcommands fit, simulate, report.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace emlasso
