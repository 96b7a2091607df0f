#pragma once

#include <stdexcept>
#include <string>

namespace beatsim {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the domain of a closed-form expression.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Invalid or unparsable experiment configuration. `key()` names the
// offending field when one can be identified.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what, std::string key = {})
      : Error(what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

// An estimator could not produce a meaningful value from its input data.
class EstimationError : public Error {
 public:
  using Error::Error;
};

// Malformed table or document on disk.
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace beatsim
