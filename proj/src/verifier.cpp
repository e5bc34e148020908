// SPDX-License-Identifier: Apache-2.0
#include "profloop/verifier.hpp"

#include <fmt/format.h>

#include <fstream>
#include <map>

#include "profloop/error.hpp"
#include "profloop/process.hpp"
#include "profloop/util.hpp"

namespace profloop::verify {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Status status) {
  switch (status) {
    case Status::build_error: return "build_error";
    case Status::runtime_error: return "runtime_error";
    case Status::incorrect_output: return "incorrect_output";
    case Status::correct: return "correct";
  }
  return "runtime_error";
}

Status parse_status(std::string_view text) {
  for (Status s : {Status::build_error, Status::runtime_error, Status::incorrect_output, Status::correct}) {
    if (to_string(s) == text) return s;
  }
  throw Error(Errc::format_error, fmt::format("unknown verification status '{}'", text));
}

void to_json(json& j, const VerificationOutcome& v) {
  j = json{{"status", to_string(v.status)}, {"logs", v.logs}};
  j["max_abs_err"] = v.max_abs_err ? json(*v.max_abs_err) : json(nullptr);
  j["max_rel_err"] = v.max_rel_err ? json(*v.max_rel_err) : json(nullptr);
  j["timing"] = v.timing ? json(*v.timing) : json(nullptr);
}

void from_json(const json& j, VerificationOutcome& v) {
  v.status = parse_status(j.at("status").get<std::string>());
  v.logs = j.value("logs", "");
  v.max_abs_err.reset();
  v.max_rel_err.reset();
  v.timing.reset();
  if (j.contains("max_abs_err") && !j["max_abs_err"].is_null()) v.max_abs_err = j["max_abs_err"].get<double>();
  if (j.contains("max_rel_err") && !j["max_rel_err"].is_null()) v.max_rel_err = j["max_rel_err"].get<double>();
  if (j.contains("timing") && !j["timing"].is_null()) v.timing = j["timing"].get<metrics::TimingResult>();
  if (v.timing.has_value() != (v.status == Status::correct)) {
    throw Error(Errc::format_error, "timing must be present exactly when status is correct");
  }
}

std::string truncate_log(std::string_view text, std::size_t cap) {
  if (text.size() <= cap) return std::string(text);
  std::string marker = fmt::format("\n... [{} bytes truncated] ...\n", text.size() - cap);
  std::size_t keep = cap > marker.size() ? cap - marker.size() : 0;
  std::size_t head = keep / 2;
  std::size_t tail = keep - head;
  return std::string(text.substr(0, head)) + marker + std::string(text.substr(text.size() - tail));
}

std::vector<double> read_timing_samples(const fs::path& path, int expected) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::timing_protocol, fmt::format("timing file {} was not written", path.string()));
  std::vector<double> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto body = util::trim(line);
    if (body.empty()) continue;
    auto value = util::parse_uint(body);
    if (!value || *value == 0) {
      throw Error(Errc::timing_protocol,
                  fmt::format("{}:{}: expected a positive integer nanosecond count, got \"{}\"", path.string(),
                              line_no, body));
    }
    samples.push_back(static_cast<double>(*value));
  }
  if (static_cast<int>(samples.size()) != expected) {
    throw Error(Errc::timing_protocol,
                fmt::format("{}: expected {} timing samples, found {}", path.string(), expected, samples.size()));
  }
  return samples;
}

std::mutex& timing_lock() {
  static std::mutex m;
  return m;
}

namespace {

using Substitutions = std::map<std::string, std::string>;

std::string substitute(std::string_view arg, const Substitutions& subs) {
  std::string out(arg);
  for (const auto& [key, value] : subs) {
    std::string token = "{" + key + "}";
    for (auto pos = out.find(token); pos != std::string::npos; pos = out.find(token, pos + value.size())) {
      out.replace(pos, token.size(), value);
    }
  }
  return out;
}

ProcessResult run_runner(const std::vector<std::string>& argv_template, const RunnerConfig& config,
                         const Substitutions& subs, const fs::path& workdir) {
  ProcessSpec spec;
  for (const auto& a : argv_template) spec.argv.push_back(substitute(a, subs));
  for (const auto& [k, v] : config.env) spec.env[k] = substitute(v, subs);
  spec.workdir = workdir;
  spec.timeout_s = config.timeout_s;
  return run_process(spec);
}

std::string process_log(std::string_view what, const ProcessResult& r) {
  std::string log = fmt::format("{}: {}\n", what, r.describe());
  if (!r.stdout_text.empty()) log += "--- stdout ---\n" + r.stdout_text + (r.stdout_text.ends_with('\n') ? "" : "\n");
  if (!r.stderr_text.empty()) log += "--- stderr ---\n" + r.stderr_text + (r.stderr_text.ends_with('\n') ? "" : "\n");
  return log;
}

Substitutions base_substitutions(const TaskSpec& task, const fs::path& source, const fs::path& workdir) {
  return {{"source_path", source.string()},
          {"workdir", workdir.string()},
          {"seed", std::to_string(task.seed)},
          {"task_id", task.task_id},
          {"task_dir", task.task_dir.empty() ? std::string() : fs::absolute(task.task_dir).lexically_normal().string()}};
}

}  // namespace

Verifier::Verifier(VerifierOptions options) : options_(std::move(options)) {
  if (!options_.state_dir.empty()) options_.state_dir = fs::absolute(options_.state_dir).lexically_normal();
}

std::string Verifier::mask_state(std::string text) const {
  std::vector<std::string> prefixes;
  if (!options_.state_dir.empty()) {
    std::error_code ec;
    auto absolute = fs::absolute(options_.state_dir, ec).lexically_normal().string();
    if (!ec) prefixes.push_back(absolute);
    prefixes.push_back(options_.state_dir.string());
  }
  for (auto& prefix : prefixes) {
    while (prefix.size() > 1 && prefix.ends_with('/')) prefix.pop_back();
    if (prefix.empty() || prefix == "." || prefix == "/") continue;
    for (auto pos = text.find(prefix); pos != std::string::npos; pos = text.find(prefix, pos + 7)) {
      text.replace(pos, prefix.size(), "<state>");
    }
  }
  return text;
}

fs::path Verifier::iteration_dir(const std::string& task_id, int iteration) const {
  return options_.state_dir / task_id / fmt::format("iter{}", iteration);
}

VerificationOutcome Verifier::verify(const TaskSpec& task, const CandidateKernel& candidate) {
  if (candidate.source.empty()) throw Error(Errc::invalid_argument, "candidate source is empty");
  const fs::path dir = iteration_dir(task.task_id, candidate.iteration);
  const fs::path work = dir / "work";
  fs::create_directories(dir);
  fs::remove_all(work);
  fs::create_directories(work);
  const fs::path source = dir / "candidate.src";
  util::write_file(source, candidate.source);

  VerificationOutcome outcome;
  auto fail = [&](Status status, std::string log) {
    outcome.status = status;
    outcome.logs = truncate_log(log, options_.log_cap);
    return outcome;
  };

  Substitutions subs = base_substitutions(task, source, work);
  subs["warmup"] = std::to_string(options_.warmup);
  subs["reps"] = std::to_string(options_.reps);
  subs["timing_path"] = (dir / "times.txt").string();

  if (!task.candidate_runner.build_argv.empty()) {
    subs["mode"] = "build";
    subs["output_path"] = (dir / "out.kstn").string();
    auto r = run_runner(task.candidate_runner.build_argv, task.candidate_runner, subs, work);
    std::string log = mask_state(process_log("build", r));
    util::write_file(dir / "build.log", log);
    if (!r.ok()) return fail(Status::build_error, log);
  }

  const fs::path ref_out = dir / "ref.kstn";
  {
    Substitutions ref = subs;
    ref["mode"] = "produce";
    ref["source_path"] = "@reference";
    ref["output_path"] = ref_out.string();
    auto r = run_runner(task.runner.argv, task.runner, ref, work);
    if (!r.ok() || !fs::exists(ref_out)) {
      throw Error(Errc::infrastructure_error,
                  fmt::format("reference runner for {} failed: {}", task.task_id, process_log("reference produce", r)));
    }
  }

  const fs::path out = dir / "out.kstn";
  fs::remove(out);
  subs["mode"] = "produce";
  subs["output_path"] = out.string();
  auto r = run_runner(task.candidate_runner.argv, task.candidate_runner, subs, work);
  std::string run_log = mask_state(process_log("candidate produce", r));
  util::write_file(dir / "run.log", run_log);
  if (!r.ok()) return fail(Status::runtime_error, run_log);
  if (!fs::exists(out)) return fail(Status::runtime_error, run_log + "candidate wrote no output tensor\n");

  tensor::Tensor reference;
  try {
    reference = tensor::read(ref_out);
  } catch (const Error& e) {
    throw Error(Errc::infrastructure_error, fmt::format("reference output for {} unreadable: {}", task.task_id, e.what()));
  }
  tensor::Comparison cmp;
  try {
    cmp = tensor::compare(tensor::read(out), reference, task.tolerance.atol, task.tolerance.rtol);
  } catch (const Error& e) {
    return fail(Status::incorrect_output, fmt::format("malformed candidate output: {}", e.what()));
  }
  outcome.max_abs_err = cmp.max_abs_err;
  outcome.max_rel_err = cmp.max_rel_err;
  if (!cmp.pass) return fail(Status::incorrect_output, cmp.reason);

  try {
    outcome.timing = time_candidate(task, candidate, options_.warmup, options_.reps);
  } catch (const Error& e) {
    if (e.code() != Errc::timing_protocol) throw;
    return fail(Status::runtime_error, fmt::format("timing run failed: {}", e.what()));
  }
  outcome.status = Status::correct;
  outcome.logs = truncate_log(run_log, options_.log_cap);
  return outcome;
}

metrics::TimingResult Verifier::time_candidate(const TaskSpec& task, const CandidateKernel& candidate, int warmup,
                                               int reps) {
  const fs::path dir = iteration_dir(task.task_id, candidate.iteration);
  const fs::path work = dir / "work";
  fs::create_directories(work);
  const fs::path source = dir / "candidate.src";
  if (!fs::exists(source)) util::write_file(source, candidate.source);

  Substitutions subs = base_substitutions(task, source, work);
  subs["mode"] = "time";
  subs["warmup"] = std::to_string(warmup);
  subs["reps"] = std::to_string(reps);
  subs["output_path"] = (dir / "time_out.kstn").string();

  std::lock_guard lock(timing_lock());
  metrics::TimingResult timing;
  timing.warmup_runs = warmup;
  timing.timed_runs = reps;
  {
    Substitutions ref = subs;
    ref["source_path"] = "@reference";
    ref["timing_path"] = (dir / "ref_times.txt").string();
    fs::remove(dir / "ref_times.txt");
    auto r = run_runner(task.runner.argv, task.runner, ref, work);
    if (!r.ok()) {
      throw Error(Errc::infrastructure_error,
                  fmt::format("reference timing for {} failed: {}", task.task_id, process_log("reference time", r)));
    }
    try {
      timing.reference_samples = read_timing_samples(dir / "ref_times.txt", reps);
    } catch (const Error& e) {
      throw Error(Errc::infrastructure_error, fmt::format("reference timing for {}: {}", task.task_id, e.what()));
    }
  }
  subs["timing_path"] = (dir / "times.txt").string();
  fs::remove(dir / "times.txt");
  auto r = run_runner(task.candidate_runner.argv, task.candidate_runner, subs, work);
  if (!r.ok()) throw Error(Errc::timing_protocol, mask_state(process_log("candidate time", r)));
  timing.candidate_samples = read_timing_samples(dir / "times.txt", reps);

  timing.t_reference_ns = metrics::aggregate(timing.reference_samples, options_.statistic);
  timing.t_candidate_ns = metrics::aggregate(timing.candidate_samples, options_.statistic);
  timing.t_reference_mean_ns = metrics::mean(timing.reference_samples);
  timing.t_candidate_mean_ns = metrics::mean(timing.candidate_samples);
  return timing;
}

std::vector<std::string> Verifier::profile_command(const TaskSpec& task, const CandidateKernel& candidate) {
  const fs::path dir = iteration_dir(task.task_id, candidate.iteration);
  Substitutions subs = base_substitutions(task, dir / "candidate.src", dir / "work");
  subs["mode"] = "time";
  subs["warmup"] = "1";
  subs["reps"] = std::to_string(options_.profile_reps);
  subs["timing_path"] = (dir / "profile_times.txt").string();
  subs["output_path"] = (dir / "profile_out.kstn").string();
  std::vector<std::string> argv;
  for (const auto& a : task.candidate_runner.argv) argv.push_back(substitute(a, subs));
  return argv;
}

}  // namespace profloop::verify
