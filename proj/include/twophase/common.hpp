#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace twophase {

// Invalid model, design or run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Requested quantity does not exist or no exact path is available
// (missing moment, closed form requiring a one-stage population, ...).
class UnsupportedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Exact enumeration would exceed the configured cap. `required_cap` is the
// cap that would have been needed for this configuration.
class EnumerationCapError : public std::runtime_error {
 public:
  EnumerationCapError(const std::string& what, std::size_t required)
      : std::runtime_error(what), required_cap(required) {}
  std::size_t required_cap;
};

// Root finding failed: no convergence or an effectively singular Jacobian.
class SolveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace twophase
