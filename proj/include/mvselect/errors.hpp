#pragma once

#include <stdexcept>
#include <string>

namespace mvsel {

// Shape or width mismatch between tensors, layers or worlds.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An operation was called in the wrong order (e.g. backward without forward).
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf showed up where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration. `path` names the offending key (dot separated) when known.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& message)
      : std::runtime_error(path.empty() ? message : path + ": " + message), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// Checkpoint / world mismatch.
class CompatibilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Exhaustive oracle search would exceed the configured enumeration budget.
class BudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mvsel
