#pragma once

#include <stdexcept>
#include <string>

namespace albumcrf {

// Invalid configuration (bad parameter values, inconsistent settings).
// CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent input data (corpus files, datasets, splits).
// CLI maps this to exit code 3.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Failures during execution (divergence, refused enumeration, I/O).
// CLI maps this to exit code 4.
class RuntimeError : public std::runtime_error {
 public:
  explicit RuntimeError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace albumcrf
