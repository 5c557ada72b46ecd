#pragma once

#include <stdexcept>
#include <string>

namespace mvgame {

class NoConvergence : public std::runtime_error {
 public:
  NoConvergence(const std::string& what, double last_residual)
      : std::runtime_error(what), last_residual_(last_residual) {}
  double last_residual() const { return last_residual_; }

 private:
  double last_residual_;
};

class SingularJacobian : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// No candidate branch is compatible with ergodicity.
class EmptyResult : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularMeanMatrix : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A particle coordinate left the divergence guard.
class Diverged : public std::runtime_error {
 public:
  Diverged(const std::string& what, double time) : std::runtime_error(what), time_(time) {}
  double time() const { return time_; }

 private:
  double time_;
};

/// Scenario file or value problem; line is 0 when not tied to a line.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace mvgame
