#pragma once

#include <stdexcept>
#include <string>

namespace cloudtomo {

// Invalid or unparseable experiment configuration. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// Non-finite cost, failed series convergence, degenerate inputs at run time. CLI exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cloudtomo
