#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace matten {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Out-of-domain scalar parameter (non-positive step, too few timesteps, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value produced during evaluation. `index()` locates the first
/// failure (token index for scans, timestep for sampling) or is -1.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what, std::ptrdiff_t index = -1)
      : Error(what), index_(index) {}
  std::ptrdiff_t index() const noexcept { return index_; }

 private:
  std::ptrdiff_t index_;
};

/// Sampling trajectory went non-finite; `index()` is the timestep.
class SamplingError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Token layout does not match what an operation expects.
class LayoutError : public Error {
 public:
  using Error::Error;
};

/// Invalid model or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input exceeds a size guard.
class SizeError : public Error {
 public:
  using Error::Error;
};

/// Index out of range (class ids, timesteps).
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Two parameter trees do not line up.
class StructureError : public Error {
 public:
  using Error::Error;
};

/// Invalid dataset specification.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Malformed archive or checkpoint. The message names the offending field.
class LoadError : public Error {
 public:
  using Error::Error;
};

}  // namespace matten
