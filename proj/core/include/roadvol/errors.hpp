#pragma once
#include <stdexcept>
#include <string>

namespace roadvol {

// Error taxonomy shared across the library. The CLI maps these onto exit
// codes: ConfigError -> 2, DataError -> 3, ShapeError/NumericError/StateError -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration values or conflicting options.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed input files, inconsistent graph structures, unknown ids.
struct DataError : Error {
  using Error::Error;
};

// Tensor shape mismatch; message names both shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Non-finite values, diverging optimization.
struct NumericError : Error {
  using Error::Error;
};

// API misuse, e.g. backward() called twice on one tape.
struct StateError : Error {
  using Error::Error;
};

}  // namespace roadvol
