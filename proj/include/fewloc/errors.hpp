#pragma once

#include <stdexcept>
#include <string>

namespace fewloc {

// Error categories map to process exit codes in the CLI:
// ConfigError -> 2, DataError -> 3, NumericalError -> 4.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown by ransac() when no hypothesis survives the budget.
class NoPoseError : public NumericalError {
 public:
  explicit NoPoseError(const std::string& what) : NumericalError(what) {}
};

}  // namespace fewloc
