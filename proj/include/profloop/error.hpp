// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace profloop {

enum class Errc {
  invalid_argument,
  invalid_timing,
  unknown_backend,
  unknown_metric,
  backend_mismatch,
  parse_error,
  empty_profile,
  unknown_alias,
  dispatch_error,
  profile_timeout,
  profiler_failure,
  ingest_error,
  build_error,
  coverage_error,
  malformed_output,
  provider_unavailable,
  configuration_error,
  no_code_found,
  format_error,
  timing_protocol,
  infrastructure_error,
  resume_error,
  io_error,
};

std::string_view to_string(Errc code);

/// Base exception for every failure raised by the library. The code lets callers
/// route candidate failures and infrastructure failures to different channels.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Raised by text parsers; carries the 1-based line number and the offending text.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::string text, const std::string& reason);

  std::size_t line() const noexcept { return line_; }
  const std::string& text() const noexcept { return text_; }

 private:
  std::size_t line_;
  std::string text_;
};

}  // namespace profloop
