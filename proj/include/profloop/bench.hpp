// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "profloop/orchestrator.hpp"
#include "profloop/task.hpp"

namespace profloop::bench {

struct TaskEntry {
  std::string task_id;
  Category category = Category::other;
  orchestrator::TaskStatus status = orchestrator::TaskStatus::completed;
  bool success = false;
  std::optional<double> best_speedup;

  bool operator==(const TaskEntry&) const = default;
};

TaskEntry entry_from(const orchestrator::TaskResult& result);

enum class SpeedupScope { successes_only, all_tasks };

struct EvaluateOptions {
  bool fast1_inclusive = false;           // count best_speedup == 1.0 as fast
  bool exclude_infrastructure = true;     // drop infrastructure failures from denominators
  SpeedupScope speedup_scope = SpeedupScope::successes_only;  // all_tasks counts failures as 1x
};

struct Aggregate {
  int tasks = 0;
  int successes = 0;
  int fast1 = 0;
  double success_rate = 0.0;  // percent
  double fast1_rate = 0.0;    // percent
  std::optional<double> geomean_speedup;
  std::optional<double> mean_speedup;

  bool operator==(const Aggregate&) const = default;
};

struct SuiteReport {
  std::vector<TaskEntry> per_task;  // sorted by task id
  Aggregate overall;
  std::map<Category, Aggregate> by_category;  // all six categories
  std::vector<std::string> excluded;          // infrastructure failures left out of the denominators
  EvaluateOptions options;

  bool operator==(const SuiteReport& other) const {
    return per_task == other.per_task && overall == other.overall && by_category == other.by_category &&
           excluded == other.excluded && options.fast1_inclusive == other.options.fast1_inclusive &&
           options.exclude_infrastructure == other.options.exclude_infrastructure &&
           options.speedup_scope == other.options.speedup_scope;
  }
};

/// Success and Fast1 percentages plus geometric and arithmetic speedup means.
/// The result does not depend on input order. Throws Errc::invalid_argument for
/// an empty input.
SuiteReport evaluate_suite(const std::vector<TaskEntry>& entries, const EvaluateOptions& options = {});
SuiteReport evaluate_suite(const std::vector<orchestrator::TaskResult>& results, const EvaluateOptions& options = {});

enum class Format { table, json, csv };
Format parse_format(std::string_view text);

std::string report_render(const SuiteReport& report, Format format);

nlohmann::json report_to_json(const SuiteReport& report);
SuiteReport report_from_json(const nlohmann::json& doc);

/// Reads every <state>/<task>/task_result.json.
std::vector<orchestrator::TaskResult> load_suite_results(const std::filesystem::path& state_dir);

}  // namespace profloop::bench
