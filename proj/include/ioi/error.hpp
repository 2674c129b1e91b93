#pragma once

#include <stdexcept>
#include <string>

namespace ioi {

// Exit codes used by the command-line front end. Every library error maps onto
// one of these through Error::exit_code().
enum class ErrorCategory { usage = 2, data = 3, numerical = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, std::string kind, const std::string& message)
      : std::runtime_error(message), category_(category), kind_(std::move(kind)) {}

  ErrorCategory category() const noexcept { return category_; }
  int exit_code() const noexcept { return static_cast<int>(category_); }
  // Short machine-readable tag, e.g. "dimension_mismatch".
  const std::string& kind() const noexcept { return kind_; }

 private:
  ErrorCategory category_;
  std::string kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& message)
      : Error(ErrorCategory::data, "dimension_mismatch", message) {}
};

class DomainError : public Error {
 public:
  DomainError(std::string kind, const std::string& message)
      : Error(ErrorCategory::data, std::move(kind), message) {}
};

class NumericalError : public Error {
 public:
  NumericalError(std::string kind, const std::string& message)
      : Error(ErrorCategory::numerical, std::move(kind), message) {}
};

class UsageError : public Error {
 public:
  UsageError(std::string kind, const std::string& message)
      : Error(ErrorCategory::usage, std::move(kind), message) {}
};

}  // namespace ioi
