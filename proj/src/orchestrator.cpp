// SPDX-License-Identifier: Apache-2.0
#include "profloop/orchestrator.hpp"

#include <atomic>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "profloop/error.hpp"
#include "profloop/util.hpp"

namespace profloop::orchestrator {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json optional_json(const auto& value) { return value ? json(*value) : json(nullptr); }

bool is_promotion(agents::Verdict v) {
  return v == agents::Verdict::improvement || v == agents::Verdict::first_measurement;
}

std::string history_line(const IterationRecord& r) {
  std::string line = fmt::format("iteration {}: {}", r.iteration, verify::to_string(r.verification.status));
  if (r.speedup) line += fmt::format(" {}x", util::format_double(*r.speedup));
  if (r.diagnosis) line += fmt::format(" ({})", agents::to_string(r.diagnosis->verdict));
  if (r.promoted_to_best) line += " promoted to best";
  if (r.candidate.source.empty()) line += " no code returned";
  return line;
}

const IterationRecord* last_refinable(const std::vector<IterationRecord>& records) {
  for (auto it = records.rbegin(); it != records.rend(); ++it) {
    if (it->diagnosis && !it->candidate.source.empty()) return &*it;
  }
  return nullptr;
}

const agents::Diagnosis* last_diagnosis(const std::vector<IterationRecord>& records) {
  for (auto it = records.rbegin(); it != records.rend(); ++it) {
    if (it->diagnosis) return &*it->diagnosis;
  }
  return nullptr;
}

bool is_profiling_error(Errc code) {
  switch (code) {
    case Errc::profile_timeout:
    case Errc::profiler_failure:
    case Errc::parse_error:
    case Errc::empty_profile:
    case Errc::unknown_alias:
    case Errc::dispatch_error:
    case Errc::unknown_metric:
    case Errc::invalid_argument:
      return true;
    default:
      return false;
  }
}

void persist_record(const fs::path& state_dir, const std::string& task_id, const IterationRecord& r) {
  util::write_file_atomic(record_path(state_dir, task_id, r.iteration), json(r).dump(2) + "\n");
}

void persist_result(const fs::path& state_dir, const TaskResult& result) {
  util::write_file_atomic(result_path(state_dir, result.task_id), json(result).dump(2) + "\n");
}

class Loop {
 public:
  Loop(const TaskSpec& task, Dependencies& deps, const RunOptions& options)
      : task_(task),
        deps_(deps),
        options_(options),
        catalog_(deps.catalog ? *deps.catalog : metrics::Catalog::builtin()) {
    if (!deps_.session || !deps_.verifier) {
      throw Error(Errc::invalid_argument, "orchestrator needs an LLM session and a verifier");
    }
  }

  TaskResult run(std::vector<IterationRecord> records) {
    TaskResult result;
    result.task_id = task_.task_id;
    result.category = task_.category;
    result.records = std::move(records);
    std::optional<BestRecord> best = fold_best(result.records);
    const int budget = options_.max_attempts.value_or(task_.max_attempts);

    for (int i = static_cast<int>(result.records.size()); i < budget; ++i) {
      if (options_.target_speedup && best && best->speedup >= *options_.target_speedup) break;
      try {
        IterationRecord record = iterate(i, result.records, best);
        persist_record(options_.state_dir, task_.task_id, record);
        spdlog::info("{} {}", task_.task_id, history_line(record));
        result.records.push_back(std::move(record));
        if (options_.on_persisted) options_.on_persisted(result.records.back());
      } catch (const Error& e) {
        bool llm_failure = e.code() == Errc::provider_unavailable || e.code() == Errc::configuration_error;
        result.status = llm_failure ? TaskStatus::aborted : TaskStatus::infrastructure_failed;
        result.error = fmt::format("iteration {}: {}", i, e.what());
        spdlog::error("{} {}", task_.task_id, result.error);
        break;
      }
    }

    result.best = best;
    result.success = best.has_value();
    result.attempts_used = static_cast<int>(result.records.size());
    persist_result(options_.state_dir, result);
    return result;
  }

 private:
  IterationRecord iterate(int i, const std::vector<IterationRecord>& records, std::optional<BestRecord>& best) {
    IterationRecord rec;
    rec.iteration = i;

    const IterationRecord* previous = last_refinable(records);
    try {
      rec.candidate = previous ? agents::refine(task_, previous->candidate, *previous->diagnosis,
                                                best ? &*best : nullptr, deps_.hardware, *deps_.session, i)
                               : agents::generate(task_, deps_.hardware, *deps_.session, i);
    } catch (const Error& e) {
      if (e.code() != Errc::no_code_found) throw;
      rec.candidate = CandidateKernel{"", i, task_.code_language()};
      rec.verification.status = verify::Status::build_error;
      rec.verification.logs = "coder response contained no code block";
      return rec;
    }

    rec.verification = deps_.verifier->verify(task_, rec.candidate);
    if (rec.verification.correct()) {
      rec.speedup = metrics::speedup(*rec.verification.timing);
      if (deps_.profiler) profile(rec, records);
    }

    agents::ConductorContext ctx;
    ctx.task_id = task_.task_id;
    ctx.backend = task_.backend;
    ctx.category = task_.category;
    ctx.attempt = i + 1;
    ctx.max_attempts = options_.max_attempts.value_or(task_.max_attempts);
    ctx.current_code = rec.candidate;
    ctx.verifier_feedback = rec.verification;
    ctx.current_profile = rec.profile;
    ctx.best_record = best;
    ctx.hardware_spec = deps_.hardware;
    for (const auto& r : records) ctx.history.push_back(history_line(r));
    if (deps_.compendium) {
      std::vector<agents::BottleneckLabel> labels;
      if (rec.profile && rec.profile->backend == deps_.hardware.backend) {
        labels = agents::classify_bottlenecks(*rec.profile, deps_.hardware, task_.category, rules(), catalog_);
      }
      ctx.metric_docs = agents::select_metric_docs(*deps_.compendium, labels, rec.profile ? &*rec.profile : nullptr,
                                                   options_.metric_docs);
    }

    agents::ConductorOptions conductor_options;
    conductor_options.retries = options_.conductor_retries;
    conductor_options.rules = &rules();
    conductor_options.catalog = &catalog_;
    rec.diagnosis = agents::conduct(ctx, *deps_.session, conductor_options);

    if (rec.verification.correct() && is_promotion(rec.diagnosis->verdict)) {
      best = BestRecord{rec.candidate, rec.verification, rec.profile, *rec.speedup, i};
      rec.promoted_to_best = true;
    }
    return rec;
  }

  void profile(IterationRecord& rec, const std::vector<IterationRecord>& records) {
    std::vector<metrics::MetricId> extra;
    if (const auto* d = last_diagnosis(records)) extra = d->extra_metrics;
    const auto defaults = metrics::default_metric_set(task_.backend, catalog_);
    const fs::path dir = record_path(options_.state_dir, task_.task_id, rec.iteration).parent_path();

    profiling::ProfileRequest request;
    request.metrics = metrics::merge_metric_requests(defaults, extra, catalog_);
    request.command = deps_.verifier->profile_command(task_, rec.candidate);
    request.timeout_s = options_.profile_timeout_s;
    request.workdir = dir / "work";
    request.raw_path = dir / "profile.raw";
    request.task_id = task_.task_id;
    request.iteration = rec.iteration;
    try {
      auto report = profiling::collect(*deps_.profiler, request);
      if (report.wall_time_ns <= 0) report.wall_time_ns = rec.verification.timing->t_candidate_ns;
      report.raw_artifact = fs::relative(request.raw_path, options_.state_dir).generic_string();
      rec.profile = std::move(report);
    } catch (const Error& e) {
      if (!is_profiling_error(e.code())) throw;
      rec.warnings.push_back(fmt::format("profiling failed: {}", e.what()));
      spdlog::warn("{} iteration {}: {}", task_.task_id, rec.iteration, rec.warnings.back());
    }
  }

  const agents::RuleTable& rules() const { return deps_.rules ? *deps_.rules : agents::RuleTable::builtin(); }

  const TaskSpec& task_;
  Dependencies& deps_;
  const RunOptions& options_;
  const metrics::Catalog& catalog_;
};

}  // namespace

// ---------------------------------------------------------------------------
// serialization

void to_json(json& j, const IterationRecord& r) {
  j = {{"iteration", r.iteration},
       {"candidate", r.candidate},
       {"verification", r.verification},
       {"profile", optional_json(r.profile)},
       {"diagnosis", optional_json(r.diagnosis)},
       {"promoted_to_best", r.promoted_to_best},
       {"speedup", optional_json(r.speedup)},
       {"warnings", r.warnings}};
}

void from_json(const json& j, IterationRecord& r) {
  r.iteration = j.at("iteration").get<int>();
  r.candidate = j.at("candidate").get<CandidateKernel>();
  r.verification = j.at("verification").get<verify::VerificationOutcome>();
  r.profile.reset();
  r.diagnosis.reset();
  r.speedup.reset();
  if (j.contains("profile") && !j["profile"].is_null()) r.profile = j["profile"].get<metrics::ProfileReport>();
  if (j.contains("diagnosis") && !j["diagnosis"].is_null()) r.diagnosis = j["diagnosis"].get<agents::Diagnosis>();
  if (j.contains("speedup") && !j["speedup"].is_null()) r.speedup = j["speedup"].get<double>();
  r.promoted_to_best = j.value("promoted_to_best", false);
  r.warnings = j.value("warnings", std::vector<std::string>{});
}

std::string_view to_string(TaskStatus status) {
  switch (status) {
    case TaskStatus::completed: return "completed";
    case TaskStatus::infrastructure_failed: return "infrastructure_failed";
    case TaskStatus::aborted: return "aborted";
  }
  return "aborted";
}

TaskStatus parse_task_status(std::string_view text) {
  for (auto s : {TaskStatus::completed, TaskStatus::infrastructure_failed, TaskStatus::aborted}) {
    if (to_string(s) == text) return s;
  }
  throw Error(Errc::parse_error, fmt::format("unknown task status '{}'", text));
}

void to_json(json& j, const TaskResult& r) {
  j = {{"task_id", r.task_id},
       {"category", to_string(r.category)},
       {"status", to_string(r.status)},
       {"success", r.success},
       {"attempts_used", r.attempts_used},
       {"error", r.error},
       {"best", optional_json(r.best)},
       {"records", r.records}};
}

void from_json(const json& j, TaskResult& r) {
  r.task_id = j.at("task_id").get<std::string>();
  r.category = parse_category(j.value("category", "other"));
  r.status = parse_task_status(j.value("status", "completed"));
  r.success = j.at("success").get<bool>();
  r.attempts_used = j.at("attempts_used").get<int>();
  r.error = j.value("error", "");
  r.best.reset();
  if (j.contains("best") && !j["best"].is_null()) r.best = j["best"].get<BestRecord>();
  r.records = j.value("records", std::vector<IterationRecord>{});
}

std::optional<BestRecord> fold_best(const std::vector<IterationRecord>& records) {
  std::optional<BestRecord> best;
  for (const auto& r : records) {
    if (!r.verification.correct() || !r.verification.timing) continue;
    double s = metrics::speedup(*r.verification.timing);
    if (!best || s > best->speedup) best = BestRecord{r.candidate, r.verification, r.profile, s, r.iteration};
  }
  return best;
}

// ---------------------------------------------------------------------------
// state layout

fs::path task_dir(const fs::path& state_dir, const std::string& task_id) { return state_dir / task_id; }

fs::path record_path(const fs::path& state_dir, const std::string& task_id, int iteration) {
  return task_dir(state_dir, task_id) / fmt::format("iter{}", iteration) / "record.json";
}

fs::path result_path(const fs::path& state_dir, const std::string& task_id) {
  return task_dir(state_dir, task_id) / "task_result.json";
}

IterationRecord load_record(const fs::path& state_dir, const std::string& task_id, int iteration) {
  const auto path = record_path(state_dir, task_id, iteration);
  try {
    auto record = json::parse(util::read_file(path)).get<IterationRecord>();
    if (record.iteration != iteration) {
      throw Error(Errc::resume_error, fmt::format("records iteration {}", record.iteration));
    }
    if (record.profile && !record.verification.correct()) {
      throw Error(Errc::resume_error, "profile stored for an unverified candidate");
    }
    return record;
  } catch (const std::exception& e) {
    throw Error(Errc::resume_error,
                fmt::format("task {} iteration {}: corrupt record {}: {}", task_id, iteration, path.string(), e.what()));
  }
}

std::vector<IterationRecord> load_records(const fs::path& state_dir, const std::string& task_id) {
  std::vector<IterationRecord> records;
  for (int i = 0; fs::exists(record_path(state_dir, task_id, i)); ++i) {
    records.push_back(load_record(state_dir, task_id, i));
  }
  return records;
}

std::optional<TaskResult> load_result(const fs::path& state_dir, const std::string& task_id) {
  const auto path = result_path(state_dir, task_id);
  if (!fs::exists(path)) return std::nullopt;
  try {
    return json::parse(util::read_file(path)).get<TaskResult>();
  } catch (const std::exception& e) {
    throw Error(Errc::resume_error, fmt::format("task {}: corrupt result {}: {}", task_id, path.string(), e.what()));
  }
}

// ---------------------------------------------------------------------------
// entry points

TaskResult run_task(const TaskSpec& task, Dependencies& deps, const RunOptions& options) {
  task.validate();
  std::error_code ec;
  fs::remove_all(task_dir(options.state_dir, task.task_id), ec);
  return Loop(task, deps, options).run({});
}

TaskResult resume_task(const TaskSpec& task, Dependencies& deps, const RunOptions& options) {
  task.validate();
  if (auto stored = load_result(options.state_dir, task.task_id); stored && stored->status == TaskStatus::completed) {
    return *stored;
  }
  return Loop(task, deps, options).run(load_records(options.state_dir, task.task_id));
}

std::vector<TaskResult> run_suite(const std::vector<TaskSpec>& tasks, Dependencies& deps, const RunOptions& options,
                                  int parallel, bool resume) {
  std::vector<TaskResult> results(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      results[i] = resume ? resume_task(tasks[i], deps, options) : run_task(tasks[i], deps, options);
    }
  };
  const int width = std::max(1, std::min<int>(parallel, static_cast<int>(tasks.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < width; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return results;
}

}  // namespace profloop::orchestrator
