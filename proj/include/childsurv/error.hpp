#pragma once

#include <stdexcept>
#include <string>

namespace childsurv {

// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed or inconsistent input data (files, records, exposures).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Aggregated VR counts that contradict their parts.
class InconsistencyError : public DataError {
 public:
  using DataError::DataError;
};

// Floating-point breakdown (underflow, singular matrix after regularisation).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Parameters not determined by the available statistics.
class IdentifiabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace childsurv
