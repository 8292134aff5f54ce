#pragma once

#include <stdexcept>
#include <string>

namespace pgpref {

// Base of every error thrown by the library. The CLI maps the subclasses onto
// exit codes (config 2, numeric 3, budget 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class BudgetError : public Error {
 public:
  using Error::Error;
};

}  // namespace pgpref
