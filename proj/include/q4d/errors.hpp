#pragma once

// Error categories mapped to process exit codes by the CLI:
// config errors -> 2, data errors -> 3, numeric failures -> 4.

#include <stdexcept>
#include <string>

namespace q4d {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& m) : std::runtime_error(m) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace q4d
