#pragma once

#include <stdexcept>
#include <string>

namespace vbtta {

// Base class for every failure raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
  using Error::Error;
};

// Inconsistent or missing configuration (e.g. mixup without a pool).
class ConfigError : public Error {
public:
  using Error::Error;
};

// Data that carries no information for the requested statistic
// (zero covariance, zero responsibility mass, impossible labels).
class DegenerateInputError : public Error {
public:
  using Error::Error;
};

// Non-finite intermediate value.
class NumericalError : public Error {
public:
  using Error::Error;
};

// Integrand or objective returned NaN.
class EvaluationError : public Error {
public:
  using Error::Error;
};

// Optimizer produced a non-finite objective.
class DivergenceError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

} // namespace vbtta
