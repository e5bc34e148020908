// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point: run / replay task suites, evaluate persisted state,
// build and query the metric compendium, and probe host hardware.
//
// Exit codes: 0 success, 1 usage error, 2 infrastructure failure, 3 partial
// suite failure (some tasks finished without a correct kernel).

#include <cstdlib>
#include <iostream>
#include <memory>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "profloop/agents.hpp"
#include "profloop/bench.hpp"
#include "profloop/compendium.hpp"
#include "profloop/error.hpp"
#include "profloop/llm.hpp"
#include "profloop/orchestrator.hpp"
#include "profloop/profiler.hpp"
#include "profloop/util.hpp"
#include "profloop/verifier.hpp"

namespace {

namespace fs = std::filesystem;
using namespace profloop;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitInfrastructure = 2;
constexpr int kExitPartial = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ProviderFlags {
  std::string name = "replay";
  fs::path transcript;
  fs::path script;
  std::string endpoint;
  std::string model;
  std::string key_env = "LLM_API_KEY";
  double timeout_s = 600.0;
  int max_concurrency = 4;

  void attach(CLI::App& cmd, bool with_name = true) {
    if (with_name) {
      cmd.add_option("--provider", name, "LLM provider")
          ->check(CLI::IsMember({"http-openai-compatible", "replay", "scripted"}));
    }
    cmd.add_option("--transcript", transcript, "Recorded transcript for the replay provider");
    cmd.add_option("--script", script, "Script file for the scripted provider");
    cmd.add_option("--endpoint", endpoint, "Chat-completions URL for the HTTP provider");
    cmd.add_option("--model", model, "Model name for the HTTP provider");
    cmd.add_option("--api-key-env", key_env, "Environment variable holding the API key");
    cmd.add_option("--llm-timeout", timeout_s, "HTTP request timeout in seconds");
    cmd.add_option("--llm-concurrency", max_concurrency, "Maximum concurrent LLM requests")
        ->check(CLI::Range(1, 64));
  }

  std::shared_ptr<llm::LlmClient> client() const {
    llm::ProviderOptions options;
    options.name = name;
    options.transcript = transcript;
    options.script = script;
    options.http.endpoint = endpoint;
    options.http.model = model;
    options.http.key_env = key_env;
    options.http.timeout_s = timeout_s;
    if (name == "replay" && transcript.empty()) throw UsageError("--transcript is required for the replay provider");
    if (name == "scripted" && script.empty()) throw UsageError("--script is required for the scripted provider");
    if (name == "http-openai-compatible" && (endpoint.empty() || model.empty())) {
      throw UsageError("--endpoint and --model are required for the HTTP provider");
    }
    return llm::make_client(options);
  }
};

struct RunFlags {
  fs::path tasks_dir;
  std::string backend = "cpu";
  fs::path state_dir = "state";
  std::optional<int> max_attempts;
  int parallel = 1;
  std::string profiler;
  std::string profiler_binary;
  fs::path fixture_dir;
  fs::path hw_file;
  fs::path compendium_file;
  fs::path rules_file;
  std::optional<double> target_speedup;
  bool resume = false;
  std::optional<int> crash_after;
  int warmup = metrics::kDefaultWarmupRuns;
  int reps = metrics::kDefaultTimedRuns;
  int profile_reps = 10;
  ProviderFlags provider;

  void attach(CLI::App& cmd, bool replay) {
    cmd.add_option("--tasks", tasks_dir, "Directory of task JSON files")->required()->check(CLI::ExistingDirectory);
    cmd.add_option("--backend", backend, "Run only tasks for this backend")->check(CLI::IsMember({"cpu", "gpu"}));
    cmd.add_option("--state", state_dir, "State directory");
    cmd.add_option("--max-attempts", max_attempts, "Attempt budget per task")->check(CLI::PositiveNumber);
    cmd.add_option("--parallel", parallel, "Tasks run concurrently")->check(CLI::PositiveNumber);
    cmd.add_option("--profiler", profiler, "Profiler adapter (perf, ncu, fixture or none)");
    cmd.add_option("--profiler-binary", profiler_binary, "Profiler executable override");
    cmd.add_option("--fixture-dir", fixture_dir, "Fixture directory for the fixture profiler");
    cmd.add_option("--hw-file", hw_file, "Hardware spec JSON (required for gpu)");
    cmd.add_option("--compendium", compendium_file, "Metric compendium JSON");
    cmd.add_option("--rules", rules_file, "Bottleneck rule table JSON");
    cmd.add_option("--target-speedup", target_speedup, "Stop a task once its best reaches this speedup");
    cmd.add_flag("--resume", resume, "Continue from persisted state");
    cmd.add_option("--crash-after", crash_after, "Testing aid: exit abruptly after persisting this many records")
        ->check(CLI::PositiveNumber);
    cmd.add_option("--warmup", warmup, "Warmup runs per timing")->check(CLI::NonNegativeNumber);
    cmd.add_option("--reps", reps, "Timed runs per timing")->check(CLI::PositiveNumber);
    cmd.add_option("--profile-reps", profile_reps, "Repetitions inside a profiled run")->check(CLI::PositiveNumber);
    provider.attach(cmd, !replay);
    if (replay) provider.name = "replay";
  }
};

/// Lets task runners name sibling tools (e.g. the simulated runner) without a path.
void expose_own_directory() {
  std::error_code ec;
  auto self = fs::read_symlink("/proc/self/exe", ec);
  if (ec) return;
  std::string path = self.parent_path().string();
  if (const char* existing = std::getenv("PATH")) path += std::string(":") + existing;
  ::setenv("PATH", path.c_str(), 1);
}

agents::HardwareSpec load_hardware(const RunFlags& flags, metrics::Backend backend) {
  if (!flags.hw_file.empty()) {
    auto hw = agents::HardwareSpec::load(flags.hw_file);
    if (hw.backend != backend) throw UsageError("--hw-file backend does not match --backend");
    return hw;
  }
  if (backend == metrics::Backend::gpu) throw UsageError("--hw-file is required for the gpu backend");
  return agents::probe_cpu();
}

int exit_code_for(const std::vector<orchestrator::TaskResult>& results) {
  bool partial = false;
  for (const auto& r : results) {
    if (r.status != orchestrator::TaskStatus::completed) return kExitInfrastructure;
    if (!r.success) partial = true;
  }
  return partial ? kExitPartial : kExitOk;
}

int run_command(const RunFlags& flags) {
  const auto backend = metrics::parse_backend(flags.backend);
  std::vector<TaskSpec> tasks;
  for (auto& t : TaskSpec::load_dir(flags.tasks_dir)) {
    if (t.backend == backend) tasks.push_back(std::move(t));
  }
  if (tasks.empty()) throw UsageError(fmt::format("no {} tasks in {}", flags.backend, flags.tasks_dir.string()));

  fs::create_directories(flags.state_dir);
  const fs::path session_log = flags.state_dir / "llm_session.ndjson";
  auto client = flags.provider.client();
  if (flags.resume) {
    if (auto replay = std::dynamic_pointer_cast<llm::ReplayClient>(client); replay && fs::exists(session_log)) {
      replay->skip(llm::TranscriptLog::read(session_log));
    }
  } else {
    fs::remove(session_log);
  }
  auto transcript = std::make_shared<llm::TranscriptLog>(session_log);
  llm::Session session(client, {}, transcript, flags.provider.max_concurrency);

  verify::VerifierOptions verifier_options;
  verifier_options.state_dir = flags.state_dir;
  verifier_options.warmup = flags.warmup;
  verifier_options.reps = flags.reps;
  verifier_options.profile_reps = flags.profile_reps;
  verify::Verifier verifier(verifier_options);

  std::unique_ptr<profiling::ProfilerAdapter> profiler;
  std::string profiler_name = flags.profiler;
  if (profiler_name.empty()) profiler_name = backend == metrics::Backend::gpu ? "ncu" : "perf";
  if (profiler_name != "none") {
    profiling::AdapterOptions adapter_options;
    adapter_options.binary = flags.profiler_binary;
    adapter_options.fixture_dir = flags.fixture_dir;
    adapter_options.fixture_backend = backend;
    if (profiler_name == "fixture" && flags.fixture_dir.empty()) throw UsageError("--fixture-dir is required");
    profiler = profiling::AdapterRegistry::instance().create(profiler_name, adapter_options);
    if (profiler->backend() != backend) throw UsageError("profiler backend does not match --backend");
  }

  std::optional<compendium::Compendium> docs;
  if (!flags.compendium_file.empty()) docs = compendium::Compendium::load(flags.compendium_file);
  std::optional<agents::RuleTable> rules;
  if (!flags.rules_file.empty()) rules = agents::RuleTable::load(flags.rules_file);

  orchestrator::Dependencies deps;
  deps.session = &session;
  deps.verifier = &verifier;
  deps.profiler = profiler.get();
  deps.compendium = docs ? &*docs : nullptr;
  deps.hardware = load_hardware(flags, backend);
  deps.rules = rules ? &*rules : nullptr;

  orchestrator::RunOptions options;
  options.state_dir = flags.state_dir;
  options.max_attempts = flags.max_attempts;
  options.target_speedup = flags.target_speedup;
  if (flags.crash_after) {
    auto persisted = std::make_shared<std::atomic<int>>(0);
    int limit = *flags.crash_after;
    options.on_persisted = [persisted, limit](const orchestrator::IterationRecord&) {
      if (++*persisted >= limit) {
        spdlog::shutdown();
        std::_Exit(137);
      }
    };
  }

  auto results = orchestrator::run_suite(tasks, deps, options, flags.parallel, flags.resume);
  for (const auto& r : results) {
    std::cout << fmt::format("{}: {} success={} attempts={} best={}{}\n", r.task_id, orchestrator::to_string(r.status),
                             r.success, r.attempts_used,
                             r.best ? util::format_double(r.best->speedup) + "x" : std::string("-"),
                             r.error.empty() ? "" : " error=" + r.error);
  }
  std::cout << fmt::format("llm calls: {} (retries {})\n", session.total_calls(), session.total_retries());
  return exit_code_for(results);
}

int evaluate_command(const fs::path& state_dir, const std::string& format, const fs::path& out,
                     const bench::EvaluateOptions& options) {
  auto results = bench::load_suite_results(state_dir);
  if (results.empty()) throw Error(Errc::io_error, fmt::format("no task results under {}", state_dir.string()));
  auto report = bench::evaluate_suite(results, options);
  auto text = bench::report_render(report, bench::parse_format(format));
  if (out.empty()) {
    std::cout << text;
  } else {
    util::write_file(out, text);
  }
  return kExitOk;
}

struct CompendiumFlags {
  fs::path sources_file;
  std::vector<std::string> sources;
  fs::path out = "compendium.json";
  std::size_t budget = compendium::kDefaultSegmentBudget;
  int parallel = 4;
  int retries = 2;
  std::vector<std::string> backends = {"cpu", "gpu"};
  ProviderFlags provider;
};

int compendium_build_command(CompendiumFlags flags) {
  std::vector<std::string> sources = flags.sources;
  compendium::BuildOptions options;
  if (!flags.sources_file.empty()) {
    auto listed = compendium::read_sources_file(flags.sources_file);
    sources.insert(sources.end(), listed.begin(), listed.end());
    options.base_dir = fs::absolute(flags.sources_file).parent_path();
  }
  if (sources.empty()) throw UsageError("no documentation sources given");
  options.budget = flags.budget;
  options.parallelism = flags.parallel;
  options.summarize.retries = flags.retries;
  options.backends.clear();
  for (const auto& b : flags.backends) options.backends.push_back(metrics::parse_backend(b));

  llm::Session session(flags.provider.client(), {}, nullptr, flags.provider.max_concurrency);
  auto report = compendium::build(sources, session, options);
  report.compendium.save(flags.out);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  for (const auto& f : report.failures) std::cerr << "skipped: " << f << "\n";
  std::cout << fmt::format("{} segments, {} entries, {} skipped -> {}\n", report.segments.size(),
                           report.compendium.entries.size(), report.failures.size(), flags.out.string());
  return kExitOk;
}

int compendium_lookup_command(const fs::path& file, const std::string& query, std::size_t k) {
  auto docs = compendium::Compendium::load(file);
  for (const auto& e : compendium::lookup(docs, query, k)) {
    std::cout << fmt::format("{}: {}\n", e.metric, e.description);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  expose_own_directory();
  auto logger = spdlog::stderr_color_mt("profloop");
  spdlog::set_default_logger(logger);

  CLI::App app{"Profile-guided multi-agent kernel optimization loop"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  RunFlags run_flags;
  auto* run = app.add_subcommand("run", "Optimize every task in a suite");
  run_flags.attach(*run, false);

  RunFlags replay_flags;
  auto* replay = app.add_subcommand("replay", "Deterministic re-run from a recorded transcript");
  replay_flags.attach(*replay, true);
  replay->get_option("--transcript")->required();

  fs::path eval_state = "state";
  std::string eval_format = "table";
  fs::path eval_out;
  bench::EvaluateOptions eval_options;
  bool include_infrastructure = false;
  bool speedup_over_all = false;
  auto* evaluate = app.add_subcommand("evaluate", "Summarize persisted task results");
  evaluate->add_option("--state", eval_state, "State directory")->check(CLI::ExistingDirectory);
  evaluate->add_option("--format", eval_format, "Report format")->check(CLI::IsMember({"table", "json", "csv"}));
  evaluate->add_option("--out", eval_out, "Write the report here instead of stdout");
  evaluate->add_flag("--fast1-inclusive", eval_options.fast1_inclusive, "Count speedup == 1.0 as fast");
  evaluate->add_flag("--include-infrastructure", include_infrastructure,
                     "Keep infrastructure failures in the denominators");
  evaluate->add_flag("--speedup-over-all", speedup_over_all, "Average speedups over all tasks, failures as 1x");

  auto* compendium_cmd = app.add_subcommand("compendium", "Metric documentation knowledge base");
  compendium_cmd->require_subcommand(1);
  CompendiumFlags build_flags;
  build_flags.provider.name = "scripted";
  auto* build = compendium_cmd->add_subcommand("build", "Ingest, summarize and merge documentation");
  build->add_option("--sources", build_flags.sources_file, "File listing one path or URL per line")
      ->check(CLI::ExistingFile);
  build->add_option("--source", build_flags.sources, "Additional path or URL");
  build->add_option("--out", build_flags.out, "Output compendium JSON");
  build->add_option("--budget", build_flags.budget, "Maximum segment length in characters")
      ->check(CLI::PositiveNumber);
  build->add_option("--parallel", build_flags.parallel, "Concurrent summarization calls")->check(CLI::PositiveNumber);
  build->add_option("--retries", build_flags.retries, "Re-asks for malformed LLM output")
      ->check(CLI::NonNegativeNumber);
  build->add_option("--backends", build_flags.backends, "Backends whose default metrics must be covered")
      ->delimiter(',');
  build_flags.provider.attach(*build);

  fs::path lookup_file;
  std::string lookup_query;
  std::size_t lookup_k = 3;
  auto* lookup = compendium_cmd->add_subcommand("lookup", "Query a compendium");
  lookup->add_option("--compendium", lookup_file, "Compendium JSON")->required()->check(CLI::ExistingFile);
  lookup->add_option("--query", lookup_query, "Query text")->required();
  lookup->add_option("-k", lookup_k, "Number of entries");

  auto* hw = app.add_subcommand("hw", "Hardware description");
  hw->require_subcommand(1);
  fs::path probe_out;
  auto* probe = hw->add_subcommand("probe", "Extract the host CPU spec");
  probe->add_option("--out", probe_out, "Write the JSON here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*run) return run_command(run_flags);
    if (*replay) return run_command(replay_flags);
    if (*evaluate) {
      eval_options.exclude_infrastructure = !include_infrastructure;
      eval_options.speedup_scope = speedup_over_all ? bench::SpeedupScope::all_tasks
                                                    : bench::SpeedupScope::successes_only;
      return evaluate_command(eval_state, eval_format, eval_out, eval_options);
    }
    if (*build) return compendium_build_command(build_flags);
    if (*lookup) return compendium_lookup_command(lookup_file, lookup_query, lookup_k);
    if (*probe) {
      auto text = nlohmann::json(agents::probe_cpu()).dump(2) + "\n";
      if (probe_out.empty()) {
        std::cout << text;
      } else {
        util::write_file(probe_out, text);
      }
      return kExitOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return kExitInfrastructure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInfrastructure;
  }
  return kExitUsage;
}
