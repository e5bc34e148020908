// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "profloop/agents.hpp"
#include "profloop/compendium.hpp"
#include "profloop/llm.hpp"
#include "profloop/profiler.hpp"
#include "profloop/records.hpp"
#include "profloop/task.hpp"
#include "profloop/verifier.hpp"

namespace profloop::orchestrator {

struct IterationRecord {
  int iteration = 0;
  CandidateKernel candidate;
  verify::VerificationOutcome verification;
  std::optional<metrics::ProfileReport> profile;
  std::optional<agents::Diagnosis> diagnosis;
  bool promoted_to_best = false;
  std::optional<double> speedup;      // present iff verification is correct
  std::vector<std::string> warnings;  // e.g. profiler failures

  bool operator==(const IterationRecord&) const = default;
};

void to_json(nlohmann::json& j, const IterationRecord& r);
void from_json(const nlohmann::json& j, IterationRecord& r);

enum class TaskStatus { completed, infrastructure_failed, aborted };

std::string_view to_string(TaskStatus status);
TaskStatus parse_task_status(std::string_view text);

struct TaskResult {
  std::string task_id;
  Category category = Category::other;
  std::vector<IterationRecord> records;
  std::optional<BestRecord> best;
  bool success = false;
  int attempts_used = 0;
  TaskStatus status = TaskStatus::completed;
  std::string error;

  bool operator==(const TaskResult&) const = default;
};

void to_json(nlohmann::json& j, const TaskResult& r);
void from_json(const nlohmann::json& j, TaskResult& r);

/// Best record recomputed from the records: the earliest correct iteration with
/// the strictly highest speedup.
std::optional<BestRecord> fold_best(const std::vector<IterationRecord>& records);

struct Dependencies {
  llm::Session* session = nullptr;
  verify::CandidateVerifier* verifier = nullptr;
  const profiling::ProfilerAdapter* profiler = nullptr;  // null disables profiling
  const compendium::Compendium* compendium = nullptr;    // null means no metric docs
  agents::HardwareSpec hardware;
  const metrics::Catalog* catalog = nullptr;
  const agents::RuleTable* rules = nullptr;
};

struct RunOptions {
  std::filesystem::path state_dir = "state";
  std::optional<int> max_attempts;        // overrides the task's budget
  std::optional<double> target_speedup;   // stop once the best reaches it
  double profile_timeout_s = 300.0;
  std::size_t metric_docs = agents::kDefaultMetricDocs;
  int conductor_retries = 2;
  /// Called after each record is durably written; tests use it to inject crashes.
  std::function<void(const IterationRecord&)> on_persisted;
};

std::filesystem::path task_dir(const std::filesystem::path& state_dir, const std::string& task_id);
std::filesystem::path record_path(const std::filesystem::path& state_dir, const std::string& task_id, int iteration);
std::filesystem::path result_path(const std::filesystem::path& state_dir, const std::string& task_id);

/// Reads one persisted record; throws Errc::resume_error naming the iteration
/// when the file is unreadable or inconsistent.
IterationRecord load_record(const std::filesystem::path& state_dir, const std::string& task_id, int iteration);
/// Every consecutive record from iteration 0 on.
std::vector<IterationRecord> load_records(const std::filesystem::path& state_dir, const std::string& task_id);
std::optional<TaskResult> load_result(const std::filesystem::path& state_dir, const std::string& task_id);

/// Runs the generate/verify/profile/conduct/refine loop from scratch, discarding
/// earlier state for the task.
TaskResult run_task(const TaskSpec& task, Dependencies& deps, const RunOptions& options);

/// Continues a task from its persisted records. A completed task is returned
/// unchanged without any LLM traffic.
TaskResult resume_task(const TaskSpec& task, Dependencies& deps, const RunOptions& options);

/// Runs tasks on up to `parallel` worker threads; results follow input order.
/// With `resume` set, tasks continue from their persisted state.
std::vector<TaskResult> run_suite(const std::vector<TaskSpec>& tasks, Dependencies& deps, const RunOptions& options,
                                  int parallel = 1, bool resume = false);

}  // namespace profloop::orchestrator
