#pragma once

#include <stdexcept>
#include <string>

namespace cogfuse {

// Shape or width contract violated by an operation's inputs.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN or otherwise unusable numeric input.
class InvalidValueError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Caller broke an operation's precondition (non-scalar loss, bad target, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class MissingNodeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class RoutingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace cogfuse
