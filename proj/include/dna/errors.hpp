#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dna {

// Shapes of two operands do not agree.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite loss or gradient during optimisation.
struct TrainingError : std::runtime_error {
  TrainingError(const std::string& what, std::int64_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step(step) {}
  std::int64_t step;
};

struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Malformed architecture id; position is the byte offset where parsing failed.
struct ParseError : std::invalid_argument {
  ParseError(const std::string& what, std::size_t position)
      : std::invalid_argument(what + " at position " + std::to_string(position)),
        position(position) {}
  std::size_t position;
};

// A precondition of an operation was violated by its caller.
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DegenerateTargetError : std::domain_error {
  using std::domain_error::domain_error;
};

struct InfeasibleError : std::runtime_error {
  InfeasibleError(const std::string& what, double min_cost)
      : std::runtime_error(what), min_cost(min_cost) {}
  double min_cost;
};

// Artifacts produced under a different configuration.
struct HashMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Correlation of an input with zero variance.
struct UndefinedCorrelationError : std::domain_error {
  using std::domain_error::domain_error;
};

// An architecture has no entry in the provided score lists.
struct CoverageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dna
