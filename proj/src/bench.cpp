// SPDX-License-Identifier: Apache-2.0
#include "profloop/bench.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include <fmt/format.h>

#include "profloop/error.hpp"
#include "profloop/util.hpp"

namespace profloop::bench {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

bool is_fast(const TaskEntry& e, const EvaluateOptions& o) {
  if (!e.success || !e.best_speedup) return false;
  return o.fast1_inclusive ? *e.best_speedup >= 1.0 : *e.best_speedup > 1.0;
}

Aggregate aggregate(const std::vector<const TaskEntry*>& entries, const EvaluateOptions& o) {
  Aggregate a;
  std::vector<double> speedups;
  for (const auto* e : entries) {
    ++a.tasks;
    if (e->success) ++a.successes;
    if (is_fast(*e, o)) ++a.fast1;
    if (e->success && e->best_speedup) {
      speedups.push_back(*e->best_speedup);
    } else if (o.speedup_scope == SpeedupScope::all_tasks) {
      speedups.push_back(1.0);
    }
  }
  if (a.tasks > 0) {
    a.success_rate = 100.0 * a.successes / a.tasks;
    a.fast1_rate = 100.0 * a.fast1 / a.tasks;
  }
  if (!speedups.empty()) {
    double log_sum = 0.0;
    double sum = 0.0;
    for (double s : speedups) {
      log_sum += std::log(s);
      sum += s;
    }
    a.geomean_speedup = std::exp(log_sum / static_cast<double>(speedups.size()));
    a.mean_speedup = sum / static_cast<double>(speedups.size());
  }
  return a;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_double(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

json aggregate_json(const Aggregate& a) {
  return {{"tasks", a.tasks},
          {"successes", a.successes},
          {"fast1", a.fast1},
          {"success_rate", a.success_rate},
          {"fast1_rate", a.fast1_rate},
          {"geomean_speedup", optional_json(a.geomean_speedup)},
          {"mean_speedup", optional_json(a.mean_speedup)}};
}

Aggregate aggregate_from(const json& j) {
  Aggregate a;
  a.tasks = j.at("tasks").get<int>();
  a.successes = j.at("successes").get<int>();
  a.fast1 = j.at("fast1").get<int>();
  a.success_rate = j.at("success_rate").get<double>();
  a.fast1_rate = j.at("fast1_rate").get<double>();
  a.geomean_speedup = optional_double(j, "geomean_speedup");
  a.mean_speedup = optional_double(j, "mean_speedup");
  return a;
}

std::string speedup_cell(const std::optional<double>& v) { return v ? fmt::format("{:.2f}", *v) : "-"; }

std::string csv_field(std::string_view text) {
  if (text.find_first_of(",\"\n") == std::string_view::npos) return std::string(text);
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

TaskEntry entry_from(const orchestrator::TaskResult& result) {
  TaskEntry e;
  e.task_id = result.task_id;
  e.category = result.category;
  e.status = result.status;
  e.success = result.success;
  if (result.best) e.best_speedup = result.best->speedup;
  return e;
}

SuiteReport evaluate_suite(const std::vector<TaskEntry>& entries, const EvaluateOptions& options) {
  if (entries.empty()) throw Error(Errc::invalid_argument, "cannot evaluate an empty suite");
  SuiteReport report;
  report.options = options;
  report.per_task = entries;
  std::sort(report.per_task.begin(), report.per_task.end(), [](const TaskEntry& a, const TaskEntry& b) {
    return std::tie(a.task_id, a.success, a.best_speedup) < std::tie(b.task_id, b.success, b.best_speedup);
  });

  std::vector<const TaskEntry*> counted;
  for (const auto& e : report.per_task) {
    if (options.exclude_infrastructure && e.status == orchestrator::TaskStatus::infrastructure_failed) {
      report.excluded.push_back(e.task_id);
    } else {
      counted.push_back(&e);
    }
  }
  report.overall = aggregate(counted, options);
  for (auto category : kAllCategories) {
    std::vector<const TaskEntry*> subset;
    for (const auto* e : counted) {
      if (e->category == category) subset.push_back(e);
    }
    report.by_category[category] = aggregate(subset, options);
  }
  return report;
}

SuiteReport evaluate_suite(const std::vector<orchestrator::TaskResult>& results, const EvaluateOptions& options) {
  std::vector<TaskEntry> entries;
  entries.reserve(results.size());
  for (const auto& r : results) entries.push_back(entry_from(r));
  return evaluate_suite(entries, options);
}

Format parse_format(std::string_view text) {
  if (text == "table") return Format::table;
  if (text == "json") return Format::json;
  if (text == "csv") return Format::csv;
  throw Error(Errc::invalid_argument, fmt::format("unknown report format '{}'", text));
}

json report_to_json(const SuiteReport& report) {
  json per_task = json::array();
  for (const auto& e : report.per_task) {
    per_task.push_back({{"task_id", e.task_id},
                        {"category", to_string(e.category)},
                        {"status", orchestrator::to_string(e.status)},
                        {"success", e.success},
                        {"best_speedup", optional_json(e.best_speedup)},
                        {"fast1", is_fast(e, report.options)}});
  }
  json by_category = json::object();
  for (const auto& [category, a] : report.by_category) by_category[std::string(to_string(category))] = aggregate_json(a);
  return {{"schema_version", 1},
          {"options",
           {{"fast1_inclusive", report.options.fast1_inclusive},
            {"exclude_infrastructure", report.options.exclude_infrastructure},
            {"speedup_scope",
             report.options.speedup_scope == SpeedupScope::all_tasks ? "all_tasks" : "successes_only"}}},
          {"overall", aggregate_json(report.overall)},
          {"by_category", std::move(by_category)},
          {"excluded", report.excluded},
          {"per_task", std::move(per_task)}};
}

SuiteReport report_from_json(const json& doc) {
  try {
    SuiteReport report;
    const auto& o = doc.at("options");
    report.options.fast1_inclusive = o.at("fast1_inclusive").get<bool>();
    report.options.exclude_infrastructure = o.at("exclude_infrastructure").get<bool>();
    report.options.speedup_scope =
        o.at("speedup_scope").get<std::string>() == "all_tasks" ? SpeedupScope::all_tasks : SpeedupScope::successes_only;
    report.overall = aggregate_from(doc.at("overall"));
    for (const auto& [name, a] : doc.at("by_category").items()) report.by_category[parse_category(name)] = aggregate_from(a);
    report.excluded = doc.at("excluded").get<std::vector<std::string>>();
    for (const auto& t : doc.at("per_task")) {
      TaskEntry e;
      e.task_id = t.at("task_id").get<std::string>();
      e.category = parse_category(t.at("category").get<std::string>());
      e.status = orchestrator::parse_task_status(t.at("status").get<std::string>());
      e.success = t.at("success").get<bool>();
      e.best_speedup = optional_double(t, "best_speedup");
      report.per_task.push_back(std::move(e));
    }
    return report;
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, fmt::format("suite report: {}", e.what()));
  }
}

std::string report_render(const SuiteReport& report, Format format) {
  switch (format) {
    case Format::json:
      return report_to_json(report).dump(2) + "\n";
    case Format::csv: {
      std::string out = "task_id,category,status,success,best_speedup,fast1\n";
      for (const auto& e : report.per_task) {
        out += fmt::format("{},{},{},{},{},{}\n", csv_field(e.task_id), to_string(e.category),
                           orchestrator::to_string(e.status), e.success ? "true" : "false",
                           e.best_speedup ? util::format_double(*e.best_speedup) : "",
                           is_fast(e, report.options) ? "true" : "false");
      }
      return out;
    }
    case Format::table: {
      std::string out = fmt::format("{:<18} {:>6} {:>12} {:>12} {:>10} {:>10}\n", "Scope", "Tasks", "Success (%)",
                                    "Speedup (x)", "Mean (x)", "Fast1 (%)");
      auto row = [&](std::string_view scope, const Aggregate& a) {
        out += fmt::format("{:<18} {:>6} {:>12.1f} {:>12} {:>10} {:>10.1f}\n", scope, a.tasks, a.success_rate,
                           speedup_cell(a.geomean_speedup), speedup_cell(a.mean_speedup), a.fast1_rate);
      };
      row("overall", report.overall);
      for (const auto& [category, a] : report.by_category) {
        if (a.tasks > 0) row(to_string(category), a);
      }
      if (!report.excluded.empty()) {
        out += fmt::format("excluded (infrastructure): {}\n", util::join(report.excluded, ", "));
      }
      out += fmt::format("Fast1 threshold: speedup {} 1.0; speedup means over {}\n",
                         report.options.fast1_inclusive ? ">=" : ">",
                         report.options.speedup_scope == SpeedupScope::all_tasks ? "all tasks (failures as 1x)"
                                                                                 : "successful tasks");
      return out;
    }
  }
  return {};
}

std::vector<orchestrator::TaskResult> load_suite_results(const fs::path& state_dir) {
  std::vector<orchestrator::TaskResult> results;
  if (!fs::is_directory(state_dir)) {
    throw Error(Errc::io_error, fmt::format("state directory {} does not exist", state_dir.string()));
  }
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(state_dir)) {
    if (entry.is_directory() && fs::exists(entry.path() / "task_result.json")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    if (auto r = orchestrator::load_result(state_dir, dir.filename().string())) results.push_back(std::move(*r));
  }
  return results;
}

}  // namespace profloop::bench
