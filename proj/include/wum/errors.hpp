#pragma once

#include <stdexcept>
#include <string>

namespace wum {

// Precondition violated by the caller (bad shape, rate, length, config key).
class InvalidInput : public std::invalid_argument {
 public:
  explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

// A NaN/Inf showed up where the math says it cannot.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Bad configuration file, override, or value; the message names the key path.
class ConfigError : public InvalidInput {
 public:
  explicit ConfigError(const std::string& what) : InvalidInput(what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidInput(msg);
}

}  // namespace detail
}  // namespace wum
