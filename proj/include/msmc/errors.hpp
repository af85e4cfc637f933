#pragma once

#include <stdexcept>
#include <string>

namespace msmc {

/// Caller broke a documented precondition (shape mismatch, out-of-range index).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Structurally invalid configuration. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad data handed in from outside (non-finite values, short waveforms, corrupt files).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training went non-finite. `term()` names the offending loss component or activation.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::string term, double value)
      : std::runtime_error("non-finite value in '" + term + "' (value " + std::to_string(value) + ")"),
        term_(std::move(term)) {}

  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

}  // namespace msmc
