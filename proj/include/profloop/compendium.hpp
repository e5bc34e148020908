// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "profloop/llm.hpp"
#include "profloop/metrics.hpp"

namespace profloop::compendium {

struct DocSegment {
  std::string source;
  std::string tool;  // "perf", "ncu" or "generic"
  std::string text;
  std::size_t offset = 0;
  std::string segment_id;  // stable hash of (source, offset)
};

struct MetricKnowledgeEntry {
  std::string metric;  // catalog id when resolvable, else the tool's own name
  std::string description;
  std::string mechanism;
  std::vector<std::string> bottlenecks;
  std::vector<std::string> provenance;  // segment ids
  bool flagged = false;                 // merged from differing descriptions
  std::vector<std::string> variants;    // the differing source descriptions, when flagged

  bool operator==(const MetricKnowledgeEntry&) const = default;
};

inline constexpr int kSchemaVersion = 1;

struct Compendium {
  std::vector<MetricKnowledgeEntry> entries;
  int schema_version = kSchemaVersion;
  std::string built_at;

  nlohmann::json to_json() const;
  static Compendium from_json(const nlohmann::json& doc);
  static Compendium load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  /// Hash of the serialized form with built_at excluded.
  std::string content_hash() const;
};

inline constexpr std::size_t kDefaultSegmentBudget = 4000;

/// Splits one document into contiguous segments of at most `budget` characters.
/// Cuts prefer heading lines, then blank lines, then line ends. Concatenating the
/// segment texts reproduces `text` exactly.
std::vector<DocSegment> split_document(const std::string& source, const std::string& tool, std::string_view text,
                                       std::size_t budget = kDefaultSegmentBudget);

/// Tag-stripping text extraction; headings become markdown-style "# " lines.
std::string strip_html(std::string_view html);

std::string infer_tool(std::string_view source);

/// One url-or-path per line; blank lines and `#` comments ignored.
std::vector<std::string> read_sources_file(const std::filesystem::path& path);

struct IngestResult {
  std::vector<DocSegment> segments;
  std::vector<std::string> warnings;  // e.g. empty documents
  std::vector<std::string> errors;    // unreachable sources
};

/// Reads local files (relative paths resolve against `base_dir`) and http(s) URLs.
/// Per-source failures are recorded; zero segments overall raises Errc::build_error.
IngestResult ingest(const std::vector<std::string>& sources, std::size_t budget = kDefaultSegmentBudget,
                    const std::filesystem::path& base_dir = {});

struct SummarizeOptions {
  int retries = 2;
};

struct SummarizeResult {
  std::vector<MetricKnowledgeEntry> entries;
  int retries = 0;
  std::string failure;  // non-empty when the segment was skipped
};

/// Maps a free-form metric name onto a catalog id where possible.
std::string resolve_metric_name(std::string_view name, const metrics::Catalog& catalog);

/// Parses a summarize response; throws Errc::malformed_output on schema violations.
std::vector<MetricKnowledgeEntry> parse_summary(std::string_view response, const DocSegment& segment,
                                                const metrics::Catalog& catalog);

SummarizeResult summarize_segment(const DocSegment& segment, llm::Session& session,
                                  const metrics::Catalog& catalog = metrics::Catalog::builtin(),
                                  const SummarizeOptions& options = {});

/// Merges entries per metric and checks that every default metric of each backend
/// is covered; throws Errc::coverage_error listing the missing ids otherwise.
Compendium synthesize(const std::vector<MetricKnowledgeEntry>& intermediate, llm::Session& session,
                      std::span<const metrics::Backend> backends,
                      const metrics::Catalog& catalog = metrics::Catalog::builtin(),
                      const SummarizeOptions& options = {});

struct BuildOptions {
  std::size_t budget = kDefaultSegmentBudget;
  int parallelism = 4;
  SummarizeOptions summarize;
  std::vector<metrics::Backend> backends = {metrics::Backend::cpu, metrics::Backend::gpu};
  std::filesystem::path base_dir;
};

struct BuildReport {
  Compendium compendium;
  std::vector<DocSegment> segments;
  std::vector<std::string> failures;
  std::vector<std::string> warnings;
};

BuildReport build(const std::vector<std::string>& sources, llm::Session& session, const BuildOptions& options = {},
                  const metrics::Catalog& catalog = metrics::Catalog::builtin());

/// Top-k entries by lexical relevance: term frequency with field boosts
/// (metric name > bottlenecks > description/mechanism), plus a bonus when the
/// query names the metric outright. Ties break on metric name. Zero-score
/// entries are never returned.
std::vector<MetricKnowledgeEntry> lookup(const Compendium& compendium, std::string_view query, std::size_t k);

}  // namespace profloop::compendium
