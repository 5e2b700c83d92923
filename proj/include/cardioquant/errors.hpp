#pragma once

#include <stdexcept>
#include <string>

namespace cq {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor or operation shape mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// API called out of order (e.g. backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration, spec, or input values.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Mask lacks a required class or is otherwise unusable for quantification.
class InvalidMaskError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Fewer samples than a fit requires.
class InsufficientDataError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Batch statistics undefined (fewer than two samples per channel).
class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

// All-equal sequence: no threshold exists.
class DegenerateSequenceError : public Error {
 public:
  using Error::Error;
};

// Training failure (divergence, non-finite loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Filesystem failure, with path context in the message.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Weight blob does not match its manifest checksum.
class ChecksumError : public Error {
 public:
  using Error::Error;
};

// Weight file format version not supported.
class FormatVersionError : public Error {
 public:
  using Error::Error;
};

// Weight manifest does not match the requested architecture's parameter plan.
class ArchitectureMismatchError : public Error {
 public:
  using Error::Error;
};

}  // namespace cq
