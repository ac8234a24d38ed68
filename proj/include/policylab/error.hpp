#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace policylab {

// Base for every error the library raises. The CLI maps subclasses to exit
// codes: ConfigError -> 2, DataError family -> 3, anything else -> 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// A mandatory column is absent or the column-role mapping is inconsistent.
class SchemaError : public DataError {
 public:
  using DataError::DataError;
};

// A value violates a precondition (e.g. treatment outside {0,1}).
class ValidationError : public DataError {
 public:
  ValidationError(const std::string& what, long row = -1)
      : DataError(row >= 0 ? what + " (row " + std::to_string(row) + ")" : what), row_(row) {}

  long row() const noexcept { return row_; }

 private:
  long row_;
};

// An iterative solver hit its iteration cap. Carries the last gap so callers
// can decide whether the iterate is usable.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, int iterations, double gap,
                   std::vector<double> last_iterate = {})
      : Error(what + " (iterations=" + std::to_string(iterations) +
              ", gap=" + std::to_string(gap) + ")"),
        iterations_(iterations),
        gap_(gap),
        last_iterate_(std::move(last_iterate)) {}

  int iterations() const noexcept { return iterations_; }
  double gap() const noexcept { return gap_; }
  const std::vector<double>& last_iterate() const noexcept { return last_iterate_; }

 private:
  int iterations_;
  double gap_;
  std::vector<double> last_iterate_;
};

// An estimator has no usable input (e.g. zero matched IPW weight).
class EstimationError : public Error {
 public:
  using Error::Error;
};

}  // namespace policylab
