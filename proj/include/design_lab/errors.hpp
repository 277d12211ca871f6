#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace design_lab {

// Invalid state, action, schema or model. Messages name the offending feature.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when an action arrives after a session completed or timed out.
class SessionEndedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Estimation/calibration preconditions that depend on data rather than shape.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace design_lab
