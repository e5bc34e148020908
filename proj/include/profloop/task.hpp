// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "profloop/metrics.hpp"

namespace profloop {

enum class Category { matmul, activation, normalization, pooling_reduction, conv, other };

std::string_view to_string(Category category);
Category parse_category(std::string_view text);
inline constexpr Category kAllCategories[] = {Category::matmul,         Category::activation,
                                              Category::normalization,  Category::pooling_reduction,
                                              Category::conv,           Category::other};

/// Runner invocation template. Arguments may contain {source_path}, {output_path},
/// {timing_path}, {mode}, {warmup}, {reps}, {workdir}, {seed}, {task_id}, {task_dir}.
struct RunnerConfig {
  std::vector<std::string> argv;
  std::vector<std::string> build_argv;  // optional compile step
  double timeout_s = 60.0;
  std::map<std::string, std::string> env;
};

struct Tolerance {
  double atol = 1e-4;
  double rtol = 1e-4;
};

inline constexpr int kDefaultMaxAttempts = 15;

struct TaskSpec {
  std::string task_id;
  Category category = Category::other;
  metrics::Backend backend = metrics::Backend::cpu;
  std::string description;
  RunnerConfig runner;              // reference implementation
  RunnerConfig candidate_runner;    // template for candidates
  Tolerance tolerance;
  int max_attempts = kDefaultMaxAttempts;
  std::uint64_t seed = 0;           // fixed input seed handed to runners
  std::string language;             // code-fence hint; defaults per backend
  std::filesystem::path task_dir;   // directory the spec was loaded from (not serialized)

  void validate() const;
  std::string code_language() const;

  static TaskSpec load(const std::filesystem::path& path);
  /// Every `*.json` file in `dir`, sorted by task id.
  static std::vector<TaskSpec> load_dir(const std::filesystem::path& dir);
};

struct CandidateKernel {
  std::string source;
  int iteration = 0;
  std::string language;

  bool operator==(const CandidateKernel&) const = default;
};

void to_json(nlohmann::json& j, const RunnerConfig& r);
void from_json(const nlohmann::json& j, RunnerConfig& r);
void to_json(nlohmann::json& j, const TaskSpec& t);
void from_json(const nlohmann::json& j, TaskSpec& t);
void to_json(nlohmann::json& j, const CandidateKernel& c);
void from_json(const nlohmann::json& j, CandidateKernel& c);

}  // namespace profloop
