#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace wrp {

/// Shapes that do not compose (wrong fanin, kernel larger than input, ...).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Inputs outside an operation's domain (bad label, batch of one in train mode, ...).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operation invoked on state that is not ready for it.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Architecture string rejected; `token()` names the offending token.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string token, const std::string& what)
      : std::runtime_error("architecture token '" + token + "': " + what),
        token_(std::move(token)) {}
  const std::string& token() const noexcept { return token_; }

 private:
  std::string token_;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Batch-norm folding failed to preserve the network function.
class FoldError : public std::runtime_error {
 public:
  FoldError(double residual, const std::string& what)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace wrp
