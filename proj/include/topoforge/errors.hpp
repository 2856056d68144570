#pragma once

#include <stdexcept>
#include <string>

namespace topoforge {

/// Invalid argument, shape mismatch or out-of-range parameter.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical procedure failed (singular system, bisection could not bracket, NaN).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed, truncated or unsupported on-disk data.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Object used in a state that does not allow the operation.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Checkpoint does not match the requested architecture.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace topoforge
