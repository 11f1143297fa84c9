#pragma once

#include <stdexcept>
#include <string>

namespace otlab {

// Bad inputs: malformed measures, invalid model parameters, unusable
// configuration. Maps to process exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Unreadable or unwritable files. A subspecies of bad configuration.
class IoError : public ConfigError {
 public:
  explicit IoError(const std::string& what) : ConfigError(what) {}
};

// The math broke down: solver failed to converge, root finder left its
// bracket, eigenvalues out of range mid-computation. Exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace otlab
