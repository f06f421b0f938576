#pragma once

#include <stdexcept>
#include <string>

namespace autoannot {

/// Broad failure classes. The CLI maps each one to its own exit code.
enum class ErrorCategory {
  invalid_argument,
  config,
  io,
  checkpoint,
  propagation,
  resource,
  processing,
  validation,
};

inline const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::invalid_argument: return "invalid_argument";
    case ErrorCategory::config: return "config";
    case ErrorCategory::io: return "io";
    case ErrorCategory::checkpoint: return "checkpoint";
    case ErrorCategory::propagation: return "propagation";
    case ErrorCategory::resource: return "resource";
    case ErrorCategory::processing: return "processing";
    case ErrorCategory::validation: return "validation";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

}  // namespace autoannot
