// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "profloop/metrics.hpp"
#include "profloop/task.hpp"
#include "profloop/tensor.hpp"

namespace profloop::verify {

enum class Status { build_error, runtime_error, incorrect_output, correct };

std::string_view to_string(Status status);
Status parse_status(std::string_view text);

struct VerificationOutcome {
  Status status = Status::runtime_error;
  std::string logs;
  std::optional<double> max_abs_err;
  std::optional<double> max_rel_err;
  std::optional<metrics::TimingResult> timing;  // present iff status == correct

  bool correct() const { return status == Status::correct; }
  bool operator==(const VerificationOutcome&) const = default;
};

void to_json(nlohmann::json& j, const VerificationOutcome& v);
void from_json(const nlohmann::json& j, VerificationOutcome& v);

inline constexpr std::size_t kDefaultLogCap = 32 * 1024;

/// Keeps the head and tail of `text` within `cap` bytes, with a marker in between.
std::string truncate_log(std::string_view text, std::size_t cap = kDefaultLogCap);

/// Reads newline-separated per-repetition nanosecond times; throws
/// Errc::timing_protocol on malformed lines or a count other than `expected`.
std::vector<double> read_timing_samples(const std::filesystem::path& path, int expected);

/// What the orchestrator needs from a verifier. The real implementation runs
/// processes; tests substitute scripted ones.
class CandidateVerifier {
 public:
  virtual ~CandidateVerifier() = default;
  virtual VerificationOutcome verify(const TaskSpec& task, const CandidateKernel& candidate) = 0;
  /// Command the profiler should wrap for a verified candidate (may be empty).
  virtual std::vector<std::string> profile_command(const TaskSpec& task, const CandidateKernel& candidate) = 0;
};

struct VerifierOptions {
  std::filesystem::path state_dir = "state";
  int warmup = metrics::kDefaultWarmupRuns;
  int reps = metrics::kDefaultTimedRuns;
  int profile_reps = 10;
  metrics::Statistic statistic = metrics::Statistic::median;
  std::size_t log_cap = kDefaultLogCap;
};

/// Process-based verifier. Artifacts land in <state>/<task>/iter<N>/ and each
/// attempt runs in a fresh <iter>/work directory.
class Verifier : public CandidateVerifier {
 public:
  explicit Verifier(VerifierOptions options);

  VerificationOutcome verify(const TaskSpec& task, const CandidateKernel& candidate) override;
  std::vector<std::string> profile_command(const TaskSpec& task, const CandidateKernel& candidate) override;

  /// Runs both reference and candidate in `time` mode. Throws Errc::timing_protocol
  /// for a bad candidate timing file and Errc::infrastructure_error for reference failures.
  metrics::TimingResult time_candidate(const TaskSpec& task, const CandidateKernel& candidate, int warmup, int reps);

  std::filesystem::path iteration_dir(const std::string& task_id, int iteration) const;
  const VerifierOptions& options() const noexcept { return options_; }

  /// Replaces the state directory prefix in runner output with `<state>`, so logs
  /// and the prompts built from them do not depend on where the state lives.
  std::string mask_state(std::string text) const;

 private:
  VerifierOptions options_;
};

/// Serializes timing phases across every verifier in the process.
std::mutex& timing_lock();

}  // namespace profloop::verify
