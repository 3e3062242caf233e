#pragma once

#include <stdexcept>
#include <string>

namespace bangacmm {

// Shape disagreement between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Caller violated an operation precondition (non-scalar loss, empty batch...).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Out-of-range scalar parameter (dropout p >= 1, zero resize target...).
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid model / run configuration.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed input file; message carries the line number when known.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Loaded data failed validation (missing images, duplicate ids...).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite value encountered during optimization.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace bangacmm
