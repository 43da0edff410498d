#pragma once

#include <stdexcept>
#include <string>

namespace erpd {

// Malformed configuration, dimension mismatch or an unknown override key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed a value outside the operation's domain (e.g. token >= vocab).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Lookup of a snapshot tag or file that does not exist.
class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite objective during training. Carries the offending step.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, long step)
      : std::runtime_error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace erpd
