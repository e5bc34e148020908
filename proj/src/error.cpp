// SPDX-License-Identifier: Apache-2.0
#include "profloop/error.hpp"

#include <fmt/format.h>

namespace profloop {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::invalid_timing: return "invalid-timing";
    case Errc::unknown_backend: return "unknown-backend";
    case Errc::unknown_metric: return "unknown-metric";
    case Errc::backend_mismatch: return "backend-mismatch";
    case Errc::parse_error: return "parse-error";
    case Errc::empty_profile: return "empty-profile";
    case Errc::unknown_alias: return "unknown-alias";
    case Errc::dispatch_error: return "dispatch-error";
    case Errc::profile_timeout: return "profile-timeout";
    case Errc::profiler_failure: return "profiler-failure";
    case Errc::ingest_error: return "ingest-error";
    case Errc::build_error: return "build-error";
    case Errc::coverage_error: return "coverage-error";
    case Errc::malformed_output: return "malformed-output";
    case Errc::provider_unavailable: return "provider-unavailable";
    case Errc::configuration_error: return "configuration-error";
    case Errc::no_code_found: return "no-code-found";
    case Errc::format_error: return "format-error";
    case Errc::timing_protocol: return "timing-protocol";
    case Errc::infrastructure_error: return "infrastructure-error";
    case Errc::resume_error: return "resume-error";
    case Errc::io_error: return "io-error";
  }
  return "unknown";
}

ParseError::ParseError(std::size_t line, std::string text, const std::string& reason)
    : Error(Errc::parse_error, fmt::format("line {}: {} (\"{}\")", line, reason, text)),
      line_(line),
      text_(std::move(text)) {}

}  // namespace profloop
