#pragma once

#include <stdexcept>
#include <string>

namespace ms4 {

/// Invalid argument values or mismatched shapes.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A configuration that cannot be run, e.g. a split leaving one side empty.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. The message names the file and line.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line)
      : std::runtime_error(what), line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

/// Misuse of an API contract (e.g. backward from a non-scalar root).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// NaN losses, unstable dynamics, failed gradient checks.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ms4
