#pragma once

#include <stdexcept>
#include <string>

namespace dsrc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor/matrix extents that do not fit the requested operation.
class InvalidShape : public Error {
 public:
  using Error::Error;
};

/// Out-of-domain hyperparameter (p <= 0, negative rate, ...).
class InvalidHyperparameter : public Error {
 public:
  using Error::Error;
};

/// Non-finite or otherwise unusable numeric input.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Misuse of the compute graph (stale graph, non-scalar loss).
class GraphError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file, bad magic, version mismatch.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf appeared during optimization.
class DivergedTraining : public Error {
 public:
  using Error::Error;
};

/// A training sample with zero l2 norm cannot become a dictionary atom.
class DegenerateSample : public Error {
 public:
  DegenerateSample(std::size_t index)
      : Error("degenerate sample: column " + std::to_string(index) + " has zero l2 norm"),
        index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// A fold that leaves some class without training samples.
class InvalidFold : public Error {
 public:
  using Error::Error;
};

/// Dataset too small for the requested subset.
class InsufficientSamples : public Error {
 public:
  using Error::Error;
};

}  // namespace dsrc
