#pragma once

#include <stdexcept>
#include <string>

namespace moca {

/// Raised when a caller breaks an operation's preconditions (shapes, ranges).
class ContractViolation : public std::invalid_argument {
public:
  explicit ContractViolation(const std::string &what)
      : std::invalid_argument(what) {}
};

/// Every run-length hypothesis has zero (or NaN) posterior mass.
class DegenerateBelief : public std::runtime_error {
public:
  explicit DegenerateBelief(const std::string &what)
      : std::runtime_error(what) {}
};

/// A numerical routine produced a non-finite or invalid value.
class NumericalError : public std::runtime_error {
public:
  explicit NumericalError(const std::string &what)
      : std::runtime_error(what) {}
};

/// A file could not be read or written.
class FileError : public std::runtime_error {
public:
  explicit FileError(const std::string &what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string &msg) {
  if (!cond) throw ContractViolation(msg);
}

} // namespace moca
