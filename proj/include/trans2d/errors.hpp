#pragma once

#include <stdexcept>
#include <string>

namespace trans2d {

// Shape or extent disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-scalar tensor handed to an operation that requires a scalar.
class RankError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A softmax slice (or attention row) with every entry masked out.
class DegenerateMaskError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// NaN or infinity where a finite value is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Attribute id outside its channel vocabulary.
class EncodingError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Invalid run, model, or data configuration (maps to CLI exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dataset file or header does not match what was requested.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace trans2d
