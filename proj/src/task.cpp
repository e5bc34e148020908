// SPDX-License-Identifier: Apache-2.0
#include "profloop/task.hpp"

#include <fmt/format.h>

#include <algorithm>

#include "profloop/error.hpp"
#include "profloop/util.hpp"

namespace profloop {

using nlohmann::json;

std::string_view to_string(Category category) {
  switch (category) {
    case Category::matmul: return "matmul";
    case Category::activation: return "activation";
    case Category::normalization: return "normalization";
    case Category::pooling_reduction: return "pooling_reduction";
    case Category::conv: return "conv";
    case Category::other: return "other";
  }
  return "other";
}

Category parse_category(std::string_view text) {
  for (Category c : kAllCategories) {
    if (to_string(c) == text) return c;
  }
  throw Error(Errc::invalid_argument, fmt::format("unknown task category '{}'", text));
}

void TaskSpec::validate() const {
  if (task_id.empty()) throw Error(Errc::invalid_argument, "task_id is empty");
  if (max_attempts < 1) throw Error(Errc::invalid_argument, fmt::format("{}: max_attempts must be >= 1", task_id));
  if (tolerance.atol < 0.0 || tolerance.rtol < 0.0) {
    throw Error(Errc::invalid_argument, fmt::format("{}: tolerances must be >= 0", task_id));
  }
  if (runner.argv.empty() || candidate_runner.argv.empty()) {
    throw Error(Errc::invalid_argument, fmt::format("{}: runner argv must be non-empty", task_id));
  }
  if (backend == metrics::Backend::any) {
    throw Error(Errc::unknown_backend, fmt::format("{}: task backend must be cpu or gpu", task_id));
  }
}

std::string TaskSpec::code_language() const {
  if (!language.empty()) return language;
  return backend == metrics::Backend::gpu ? "python" : "cpp";
}

TaskSpec TaskSpec::load(const std::filesystem::path& path) {
  TaskSpec task;
  try {
    task = json::parse(util::read_file(path)).get<TaskSpec>();
  } catch (const json::exception& e) {
    throw Error(Errc::format_error, fmt::format("{}: {}", path.string(), e.what()));
  }
  task.task_dir = std::filesystem::absolute(path).parent_path();
  task.validate();
  return task;
}

std::vector<TaskSpec> TaskSpec::load_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error(Errc::io_error, fmt::format("task directory {} does not exist", dir.string()));
  }
  std::vector<TaskSpec> tasks;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") tasks.push_back(load(entry.path()));
  }
  std::sort(tasks.begin(), tasks.end(), [](const TaskSpec& a, const TaskSpec& b) { return a.task_id < b.task_id; });
  return tasks;
}

void to_json(json& j, const RunnerConfig& r) {
  j = json{{"argv", r.argv}, {"build_argv", r.build_argv}, {"timeout_s", r.timeout_s}, {"env", r.env}};
}

void from_json(const json& j, RunnerConfig& r) {
  r.argv = j.at("argv").get<std::vector<std::string>>();
  r.build_argv = j.value("build_argv", std::vector<std::string>{});
  r.timeout_s = j.value("timeout_s", 60.0);
  r.env = j.value("env", std::map<std::string, std::string>{});
  if (!(r.timeout_s > 0.0)) throw Error(Errc::invalid_argument, "runner timeout_s must be positive");
}

void to_json(json& j, const TaskSpec& t) {
  j = json{{"task_id", t.task_id},
           {"category", to_string(t.category)},
           {"backend", metrics::to_string(t.backend)},
           {"description", t.description},
           {"runner", t.runner},
           {"candidate_runner_template", t.candidate_runner},
           {"tolerance", {{"atol", t.tolerance.atol}, {"rtol", t.tolerance.rtol}}},
           {"max_attempts", t.max_attempts},
           {"seed", t.seed},
           {"language", t.language}};
}

void from_json(const json& j, TaskSpec& t) {
  t.task_id = j.at("task_id").get<std::string>();
  t.category = parse_category(j.value("category", "other"));
  t.backend = metrics::parse_backend(j.value("backend", "cpu"));
  t.description = j.value("description", "");
  t.runner = j.at("runner").get<RunnerConfig>();
  if (j.contains("candidate_runner_template")) {
    t.candidate_runner = j["candidate_runner_template"].get<RunnerConfig>();
  } else {
    t.candidate_runner = j.at("candidate_runner").get<RunnerConfig>();
  }
  if (j.contains("tolerance")) {
    t.tolerance.atol = j["tolerance"].value("atol", 1e-4);
    t.tolerance.rtol = j["tolerance"].value("rtol", 1e-4);
  }
  t.max_attempts = j.value("max_attempts", kDefaultMaxAttempts);
  t.seed = j.value("seed", std::uint64_t{0});
  t.language = j.value("language", "");
}

void to_json(json& j, const CandidateKernel& c) {
  j = json{{"source", c.source}, {"iteration", c.iteration}, {"language", c.language}};
}

void from_json(const json& j, CandidateKernel& c) {
  c.source = j.at("source").get<std::string>();
  c.iteration = j.at("iteration").get<int>();
  c.language = j.value("language", "");
}

}  // namespace profloop
