#pragma once

#include <stdexcept>
#include <string>

namespace mope2 {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Violated precondition or malformed argument.
struct InvalidArgument : Error {
  using Error::Error;
};

/// Mismatched tensor/vector dimensions.
struct ShapeError : InvalidArgument {
  using InvalidArgument::InvalidArgument;
};

/// Non-finite value encountered where a finite one is required.
struct NumericError : Error {
  using Error::Error;
};

/// Input data without spread (e.g. all points identical).
struct DegenerateDataError : Error {
  using Error::Error;
};

/// Every candidate trajectory diverged during planning.
struct PlanningFailure : Error {
  using Error::Error;
};

/// Bad configuration key or value; message carries the dotted key path.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace mope2
