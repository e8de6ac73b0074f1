#pragma once

#include <stdexcept>
#include <string>

namespace stal3d {

/// Invalid configuration or input file; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf encountered during a forward or backward pass; exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace stal3d
