#pragma once

#include <stdexcept>
#include <string>

namespace bem {

// A precondition stated by an operation's contract was violated by the caller.
class ContractViolation : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

// Invalid configuration: unknown key, bad type, out-of-range value or shape mismatch.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& message, std::string key = {}, int line = 0)
      : std::runtime_error(message), key_(std::move(key)), line_(line) {}

  const std::string& key() const noexcept { return key_; }
  int line() const noexcept { return line_; }

private:
  std::string key_;
  int line_;
};

// NaN/Inf encountered in a gradient or activation.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace bem
