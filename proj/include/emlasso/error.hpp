#pragma once

#include <stdexcept>
#include <string>

namespace emlasso {

// Bad input: malformed data, unknown names, violated preconditions.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A numerical procedure failed: rank deficiency, separation, non-convergence.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace emlasso
