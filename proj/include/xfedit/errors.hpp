#pragma once

#include <stdexcept>
#include <string>

namespace xfedit {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Violated numeric precondition (bad schedule bounds, thresholds out of range, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value showed up where the algorithm needs finite ones.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Input data is structurally valid but unusable (empty video, empty mask, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

}  // namespace xfedit
