#pragma once

#include <stdexcept>
#include <string>

namespace escalate {

// Argument outside the mathematical domain of a function (e.g. p = 0 for cibp).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Configuration or payload that fails validation. `path` names the offending
// field in JSON-pointer-ish dotted form, e.g. "designs[0].skeleton.values".
class ValidationError : public std::invalid_argument {
 public:
  ValidationError(std::string path, const std::string& message)
      : std::invalid_argument(path.empty() ? message : path + ": " + message),
        path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// Operation not permitted in the current trial state (complete, terminated...).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Dose outside the admissible set (or differing from the recommendation)
// without an explicit override.
class AdmissibilityError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numerical failure inside the inference engine.
class EngineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace escalate
