// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace profloop::llm {

enum class Tag { coder_generate, coder_refine, conductor, compendium };

std::string_view to_string(Tag tag);
Tag parse_tag(std::string_view text);
/// 0.6 for coder tags, 0.2 for conductor and compendium.
double default_temperature(Tag tag);

struct ChatRequest {
  std::string system_prompt;
  std::string user_prompt;
  double temperature = 0.2;
  int max_tokens = 8192;
  Tag tag = Tag::conductor;

  /// Throws Errc::invalid_argument when the request breaks its invariants.
  void validate() const;
  /// Stable key over tag and both prompts; sampling settings are not part of it.
  std::string hash() const;
};

struct ChatResponse {
  std::string text;
  std::string provider;
  double latency_ms = 0.0;
  std::optional<int> prompt_tokens;
  std::optional<int> completion_tokens;
};

/// One provider transport. `send` makes a single attempt and throws
/// Errc::provider_unavailable for retryable failures and Errc::configuration_error
/// for ones that retrying cannot fix.
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string provider() const = 0;
  virtual ChatResponse send(const ChatRequest& request) = 0;
};

struct TranscriptRecord {
  Tag tag = Tag::conductor;
  std::string request_hash;
  std::string system;
  std::string user;
  std::string response;
  std::string ts;
};

void to_json(nlohmann::json& j, const TranscriptRecord& r);
void from_json(const nlohmann::json& j, TranscriptRecord& r);

/// Append-only NDJSON log; all writes go through one mutex.
class TranscriptLog {
 public:
  explicit TranscriptLog(std::filesystem::path path);

  void append(const TranscriptRecord& record);
  const std::filesystem::path& path() const noexcept { return path_; }

  static std::vector<TranscriptRecord> read(const std::filesystem::path& path);

 private:
  std::filesystem::path path_;
  std::mutex mutex_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{8000};
};

struct CompletionResult {
  ChatResponse response;
  int retries = 0;
};

/// Sends with exponential backoff and logs the exchange. Throws
/// Errc::provider_unavailable once retries are exhausted; configuration errors
/// are rethrown immediately.
CompletionResult complete(LlmClient& client, const ChatRequest& request, const RetryPolicy& policy,
                          TranscriptLog* transcript = nullptr);

/// Client plus retry policy, transcript and a concurrency cap; what the agents hold.
class Session {
 public:
  Session(std::shared_ptr<LlmClient> client, RetryPolicy policy = {},
          std::shared_ptr<TranscriptLog> transcript = nullptr, int max_concurrency = 4);

  ChatResponse complete(const ChatRequest& request);

  LlmClient& client() { return *client_; }
  int calls(Tag tag) const;
  int total_calls() const;
  int total_retries() const;

 private:
  std::shared_ptr<LlmClient> client_;
  RetryPolicy policy_;
  std::shared_ptr<TranscriptLog> transcript_;
  std::counting_semaphore<64> slots_;
  mutable std::mutex stats_mutex_;
  std::map<Tag, int> calls_;
  int retries_ = 0;
};

// ---------------------------------------------------------------------------
// providers

struct HttpConfig {
  std::string endpoint;  // full URL of the chat-completions route
  std::string model;
  std::string key_env = "LLM_API_KEY";
  double timeout_s = 600.0;

  nlohmann::json to_json() const;  // never includes the key itself
};

/// OpenAI-compatible chat-completions over HTTP(S).
class HttpOpenAiClient : public LlmClient {
 public:
  explicit HttpOpenAiClient(HttpConfig config);
  std::string provider() const override { return "http-openai-compatible"; }
  ChatResponse send(const ChatRequest& request) override;

 private:
  HttpConfig config_;
};

/// Serves responses from a transcript. Records are matched by tag and request
/// hash; records with an empty hash act as wildcards consumed in order per tag.
class ReplayClient : public LlmClient {
 public:
  explicit ReplayClient(std::vector<TranscriptRecord> records);
  static std::unique_ptr<ReplayClient> from_file(const std::filesystem::path& path);

  std::string provider() const override { return "replay"; }
  ChatResponse send(const ChatRequest& request) override;
  /// Marks records as already served, e.g. the transcript of an interrupted session.
  void skip(const std::vector<TranscriptRecord>& served);
  std::size_t remaining() const;

 private:
  std::optional<std::size_t> match(Tag tag, const std::string& hash) const;

  std::vector<TranscriptRecord> records_;
  std::vector<bool> used_;
  mutable std::mutex mutex_;
};

/// Test provider driven by a script: `rules` answer any request whose user
/// prompt contains a substring; `steps` are consumed in order, per tag first.
class ScriptedClient : public LlmClient {
 public:
  enum class Failure { none, transport, client_error };
  struct Step {
    std::optional<Tag> tag;
    std::string text;
    Failure failure = Failure::none;
  };
  struct Rule {
    std::optional<Tag> tag;
    std::string match;
    std::string text;
  };

  ScriptedClient() = default;
  ScriptedClient(std::vector<Step> steps, std::vector<Rule> rules = {});
  static std::unique_ptr<ScriptedClient> from_json(const nlohmann::json& script);
  static std::unique_ptr<ScriptedClient> from_file(const std::filesystem::path& path);

  std::string provider() const override { return "scripted"; }
  ChatResponse send(const ChatRequest& request) override;

  void push(Step step);
  int sends() const;
  std::vector<ChatRequest> requests() const;

 private:
  std::deque<Step> steps_;
  std::vector<Rule> rules_;
  std::vector<ChatRequest> seen_;
  mutable std::mutex mutex_;
};

struct ProviderOptions {
  std::string name;  // http-openai-compatible | replay | scripted
  HttpConfig http;
  std::filesystem::path transcript;  // replay
  std::filesystem::path script;      // scripted
};

std::shared_ptr<LlmClient> make_client(const ProviderOptions& options);

/// Body of the last fenced block tagged with `language_hint`, else the last
/// fenced block, else the whole text. Throws Errc::no_code_found when empty.
std::string extract_code(std::string_view response_text, std::string_view language_hint);

}  // namespace profloop::llm
