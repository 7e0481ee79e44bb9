#pragma once

#include <stdexcept>
#include <string>

namespace benchsel {

// Error categories map one-to-one onto CLI exit codes (see cli.hpp).

/// Invalid arguments or configuration supplied by the caller.
class UsageError : public std::invalid_argument {
 public:
  explicit UsageError(const std::string& what) : std::invalid_argument(what) {}
};

/// Input data violates a structural invariant (malformed CSV, empty column, ...).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// A factorization or solve failed even after regularization.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace benchsel
