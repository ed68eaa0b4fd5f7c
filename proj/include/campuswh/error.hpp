#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cwh {

enum class ErrorCode {
  kValidation,
  kNotFound,
  kConflict,
  kIo,
  kCorruption,
  kAuthentication,
  kLimit,
  kUsage,
};

std::string_view to_string(ErrorCode code);

/// Single exception type carried across module boundaries. The code maps to
/// the machine-parseable prefix printed by the CLI and the service.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cwh
