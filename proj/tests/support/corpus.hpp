// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "profloop/error.hpp"
#include "profloop/metrics.hpp"
#include "profloop/profiler.hpp"
#include "profloop/util.hpp"

namespace profloop::testing {

enum class CorpusFormat { perf, ncu };

struct CorpusOutcome {
  int files = 0;
  int valid_files = 0;
  int error_files = 0;
  std::vector<std::string> failures;  // one line per mismatch
};

/// Integer-valued units must match exactly; other values within 1e-12 relative.
inline bool corpus_value_matches(metrics::Unit unit, double got, double want) {
  switch (unit) {
    case metrics::Unit::count:
    case metrics::Unit::cycles:
    case metrics::Unit::nanoseconds:
    case metrics::Unit::dimensionless:
      return got == want;
    default:
      if (want == 0.0) return got == 0.0;
      return std::abs(got - want) <= 1e-12 * std::abs(want);
  }
}

/// Parses every file listed in `<dir>/expected.json` and compares the result
/// with the hand-written expectation. Values are numbers or [numerator,
/// denominator] pairs for ratios.
inline CorpusOutcome check_corpus(const std::filesystem::path& dir, CorpusFormat format) {
  using nlohmann::json;
  CorpusOutcome out;
  const auto& catalog = metrics::Catalog::builtin();
  const metrics::Backend backend = format == CorpusFormat::perf ? metrics::Backend::cpu : metrics::Backend::gpu;
  json expected = json::parse(util::read_file(dir / "expected.json"));

  for (const auto& [file, spec] : expected.items()) {
    ++out.files;
    auto fail = [&](std::string what) { out.failures.push_back(fmt::format("{}: {}", file, what)); };
    std::vector<metrics::MetricId> requested;
    if (spec.contains("requested")) {
      for (const auto& name : spec["requested"]) requested.push_back(catalog.id(name.get<std::string>()));
    } else {
      requested = metrics::default_metric_set(backend, catalog);
    }
    std::string raw = util::read_file(dir / file);
    auto parse = [&] {
      return format == CorpusFormat::perf ? profiling::perf_parse(raw, requested)
                                          : profiling::ncu_parse(raw, requested);
    };

    if (spec.contains("error")) {
      ++out.error_files;
      std::string want = spec["error"].get<std::string>();
      try {
        parse();
        fail(fmt::format("expected {} but parsing succeeded", want));
      } catch (const ParseError& e) {
        if (want != "parse_error") fail(fmt::format("expected {} got parse_error: {}", want, e.what()));
        if (spec.contains("line") && e.line() != spec["line"].get<std::size_t>()) {
          fail(fmt::format("parse_error on line {} instead of {}", e.line(), spec["line"].get<std::size_t>()));
        }
      } catch (const Error& e) {
        std::string got(to_string(e.code()));
        std::replace(got.begin(), got.end(), '-', '_');
        if (got != want) fail(fmt::format("expected {} got {}: {}", want, got, e.what()));
        if (spec.contains("message_contains") &&
            std::string(e.what()).find(spec["message_contains"].get<std::string>()) == std::string::npos) {
          fail(fmt::format("message '{}' lacks '{}'", e.what(), spec["message_contains"].get<std::string>()));
        }
      }
      continue;
    }

    ++out.valid_files;
    metrics::ProfileReport report;
    try {
      report = parse();
    } catch (const std::exception& e) {
      fail(fmt::format("unexpected error: {}", e.what()));
      continue;
    }
    if (report.backend != backend) fail("wrong backend");
    for (const auto& [name, value] : spec["values"].items()) {
      double want = value.is_array() ? value[0].get<double>() / value[1].get<double>() : value.get<double>();
      auto got = report.get(name);
      if (!got) {
        fail(fmt::format("{} missing", name));
        continue;
      }
      if (!corpus_value_matches(catalog.at(name).unit, *got, want)) {
        fail(fmt::format("{} = {} expected {}", name, util::format_double(*got), util::format_double(want)));
      }
    }
    if (report.values.size() != spec["values"].size()) {
      fail(fmt::format("{} values reported, {} expected", report.values.size(), spec["values"].size()));
    }
    if (report.wall_time_ns != spec["wall_time_ns"].get<double>()) {
      fail(fmt::format("wall_time_ns {} expected {}", util::format_double(report.wall_time_ns),
                       spec["wall_time_ns"].dump()));
    }
    if (static_cast<int>(report.warnings.size()) != spec["warnings"].get<int>()) {
      fail(fmt::format("{} warnings, {} expected", report.warnings.size(), spec["warnings"].get<int>()));
    }
  }
  return out;
}

}  // namespace profloop::testing
