#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hallufield {

enum class ErrorCode {
  Domain,
  MissingPerturbation,
  ModeUnavailable,
  EnumerationTooLarge,
  Parse,
  Io,
};

std::string_view error_code_name(ErrorCode code) noexcept;

/// Exception carried across the C++ core. The C API maps `code()` onto
/// hf_status values; `detail()` is an optional JSON fragment with
/// machine-readable context (missing delta_t keys, line numbers, ...).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string detail = {})
      : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] inline void throw_domain(const std::string& message) {
  throw Error(ErrorCode::Domain, message);
}

}  // namespace hallufield
