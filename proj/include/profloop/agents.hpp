// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "profloop/compendium.hpp"
#include "profloop/llm.hpp"
#include "profloop/metrics.hpp"
#include "profloop/records.hpp"
#include "profloop/task.hpp"
#include "profloop/verifier.hpp"

namespace profloop::agents {

// ---------------------------------------------------------------------------
// hardware

struct CacheLevel {
  std::string level;  // "L1d", "L1i", "L2", "L3", ...
  std::uint64_t size_bytes = 0;

  bool operator==(const CacheLevel&) const = default;
};

struct HardwareSpec {
  metrics::Backend backend = metrics::Backend::cpu;
  int core_or_sm_count = 1;
  std::vector<CacheLevel> cache_hierarchy;
  std::optional<double> memory_bandwidth_gbps;
  std::string model;
  std::string notes;

  /// Throws Errc::invalid_argument unless core_or_sm_count >= 1.
  void validate() const;
  /// Compact multi-line text used in prompts.
  std::string describe() const;
  static HardwareSpec load(const std::filesystem::path& path);

  bool operator==(const HardwareSpec&) const = default;
};

void to_json(nlohmann::json& j, const HardwareSpec& hw);
void from_json(const nlohmann::json& j, HardwareSpec& hw);

/// Parses sizes such as "48K", "1280K", "32M" or "1024" into bytes.
std::uint64_t parse_cache_size(std::string_view text);

/// Reads the host CPU description from sysfs and /proc/cpuinfo. Both roots are
/// parameters so tests can point them at a fabricated tree.
HardwareSpec probe_cpu(const std::filesystem::path& sys_cpu_root = "/sys/devices/system/cpu",
                       const std::filesystem::path& cpuinfo = "/proc/cpuinfo");

// ---------------------------------------------------------------------------
// bottleneck rules

enum class BottleneckKind {
  frontend_bound,
  backend_memory_bound,
  backend_core_bound,
  bad_speculation,
  low_occupancy,
  register_pressure,
  low_memory_throughput,
  low_tensor_core_util,
  underparallelized,
  other
};

std::string_view to_string(BottleneckKind kind);
BottleneckKind parse_bottleneck(std::string_view text);

struct Evidence {
  metrics::MetricId metric;
  double value = 0.0;
  double threshold = 0.0;

  bool operator==(const Evidence&) const = default;
};

struct BottleneckLabel {
  BottleneckKind label = BottleneckKind::other;
  std::vector<Evidence> evidence;
  double severity = 0.0;  // normalized distance past the threshold

  bool operator==(const BottleneckLabel&) const = default;
};

void to_json(nlohmann::json& j, const BottleneckLabel& b);
void from_json(const nlohmann::json& j, BottleneckLabel& b);

enum class Comparator { greater, greater_equal, less, less_equal };

struct Condition {
  std::string metric;
  Comparator comparator = Comparator::greater;
  double threshold = 0.0;
  BottleneckKind label = BottleneckKind::other;
};

struct Rule {
  metrics::Backend backend = metrics::Backend::cpu;
  Condition condition;
  /// Threshold multiplier taken from the hardware spec ("memory_bandwidth" uses
  /// memory_bandwidth_gbps converted to bytes per second).
  std::string scale;
  std::vector<Category> categories;  // empty means every category
  std::optional<Condition> split;    // refines the label when its own condition holds
};

class RuleTable {
 public:
  RuleTable() = default;
  explicit RuleTable(std::vector<Rule> rules) : rules_(std::move(rules)) {}

  /// Rules compiled in from data/rules.json.
  static const RuleTable& builtin();
  static RuleTable from_json(const nlohmann::json& doc);
  static RuleTable load(const std::filesystem::path& path);

  const std::vector<Rule>& rules() const noexcept { return rules_; }

 private:
  std::vector<Rule> rules_;
};

/// Applies the rule table and sorts the fired labels by descending severity
/// (ties by label name). Throws Errc::backend_mismatch when the profile and
/// hardware backends differ.
std::vector<BottleneckLabel> classify_bottlenecks(const metrics::ProfileReport& profile, const HardwareSpec& hw,
                                                  std::optional<Category> category = std::nullopt,
                                                  const RuleTable& rules = RuleTable::builtin(),
                                                  const metrics::Catalog& catalog = metrics::Catalog::builtin());

// ---------------------------------------------------------------------------
// conductor

enum class Verdict { first_measurement, improvement, regression, correctness_failure };

std::string_view to_string(Verdict verdict);
Verdict parse_verdict(std::string_view text);

/// Pure function of the two speedups: no best is a first measurement, a strictly
/// higher speedup is an improvement and anything else (ties included) a regression.
/// Throws Errc::invalid_argument unless current_speedup > 0.
Verdict compare_with_best(double current_speedup, std::optional<double> best_speedup);

struct Diagnosis {
  Verdict verdict = Verdict::first_measurement;
  std::vector<BottleneckLabel> bottlenecks;
  std::vector<std::string> hints;
  std::vector<metrics::MetricId> extra_metrics;
  std::string rationale;
  std::string feedback_excerpt;  // verifier log excerpt for failed candidates
  std::vector<std::string> warnings;
  bool fallback = false;         // true when the LLM output could not be used

  bool operator==(const Diagnosis&) const = default;
};

void to_json(nlohmann::json& j, const Diagnosis& d);
void from_json(const nlohmann::json& j, Diagnosis& d);

struct ConductorContext {
  std::string task_id;
  metrics::Backend backend = metrics::Backend::cpu;
  Category category = Category::other;
  int attempt = 1;
  int max_attempts = kDefaultMaxAttempts;

  CandidateKernel current_code;
  verify::VerificationOutcome verifier_feedback;
  std::vector<compendium::MetricKnowledgeEntry> metric_docs;
  std::optional<metrics::ProfileReport> current_profile;
  /// The best record before this iteration; the verdict is measured against it.
  std::optional<BestRecord> best_record;
  HardwareSpec hardware_spec;
  std::vector<std::string> history;  // one line per earlier iteration
};

inline constexpr std::size_t kDefaultMetricDocs = 6;
inline constexpr std::size_t kFeedbackExcerptCap = 4096;

/// Compendium entries for the Conductor prompt: lookups seeded by the fired
/// labels and their evidence first, then entries for the profiled metrics.
std::vector<compendium::MetricKnowledgeEntry> select_metric_docs(const compendium::Compendium& compendium,
                                                                 const std::vector<BottleneckLabel>& labels,
                                                                 const metrics::ProfileReport* profile,
                                                                 std::size_t k = kDefaultMetricDocs);

struct ConductorOptions {
  int retries = 2;
  const RuleTable* rules = nullptr;  // defaults to the builtin table
  const metrics::Catalog* catalog = nullptr;
};

/// Verdict computed from the context alone.
Verdict context_verdict(const ConductorContext& ctx);

llm::ChatRequest build_conductor_request(const ConductorContext& ctx, const std::vector<BottleneckLabel>& labels,
                                         Verdict verdict, const metrics::Catalog& catalog);

/// Parses the Conductor's JSON block into hints, extra metrics and rationale.
/// Unknown or wrong-backend metrics are dropped with a warning. Throws
/// Errc::malformed_output when the block is missing or ill-typed.
Diagnosis parse_conductor_response(std::string_view text, metrics::Backend backend, const metrics::Catalog& catalog);

/// Rule-only diagnosis used when the LLM output stays unusable.
Diagnosis fallback_diagnosis(const ConductorContext& ctx, const std::vector<BottleneckLabel>& labels,
                             Verdict verdict);

Diagnosis conduct(const ConductorContext& ctx, llm::Session& session, const ConductorOptions& options = {});

// ---------------------------------------------------------------------------
// coder

std::string programming_interface(const TaskSpec& task);

llm::ChatRequest build_generate_request(const TaskSpec& task, const HardwareSpec& hw, int iteration);
llm::ChatRequest build_refine_request(const TaskSpec& task, const CandidateKernel& previous,
                                      const Diagnosis& diagnosis, const BestRecord* best, const HardwareSpec& hw,
                                      int iteration);

/// First-attempt candidate. Throws Errc::no_code_found when the response holds no code.
CandidateKernel generate(const TaskSpec& task, const HardwareSpec& hw, llm::Session& session, int iteration = 0);

/// Next candidate from the previous one and the Conductor's diagnosis.
CandidateKernel refine(const TaskSpec& task, const CandidateKernel& previous, const Diagnosis& diagnosis,
                       const BestRecord* best, const HardwareSpec& hw, llm::Session& session, int iteration);

}  // namespace profloop::agents
