// errors.hpp - exception types shared across the toolkit
#pragma once

#include <stdexcept>
#include <string>

namespace qlstm {

// Non-finite values, diverging losses, failed numerical postconditions.
// The CLI maps this to exit code 2.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration, bad CLI usage, schema violations. Exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or argument contract violations between tensors/operations.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Corrupt, truncated or incompatible files (checkpoints, tables, profiles).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qlstm
