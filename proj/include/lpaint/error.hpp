#pragma once

#include <stdexcept>
#include <string>

namespace lpaint {

// Base for every error raised by the library. Callers that only need a
// message can catch this; the subclasses exist so tests and the service can
// tell validation failures from numerical ones.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor/array dimensions disagree with what an operation or file declares.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Archive footer missing, unreadable or from an unsupported format version.
class VersionError : public Error {
 public:
  using Error::Error;
};

// Malformed user input: bad edit ops, unknown classes, bad images.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Optimizer produced a non-finite loss or failed to reach its target.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A long-running job observed its cancellation flag between steps.
class CancelledError : public Error {
 public:
  using Error::Error;
};

}  // namespace lpaint
