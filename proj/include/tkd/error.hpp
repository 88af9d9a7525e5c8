#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tkd {

// Invalid or inconsistent configuration. Maps to CLI exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A non-finite value reached a parameter update or loss.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed trace or checkpoint content. line() is 1-based, 0 when unknown.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::int64_t line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::int64_t line() const { return line_; }

 private:
  std::int64_t line_;
};

}  // namespace tkd
