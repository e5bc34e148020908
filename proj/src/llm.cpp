// SPDX-License-Identifier: Apache-2.0
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "profloop/llm.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <thread>

#include "profloop/error.hpp"
#include "profloop/util.hpp"

namespace profloop::llm {

using nlohmann::json;

std::string_view to_string(Tag tag) {
  switch (tag) {
    case Tag::coder_generate: return "coder_generate";
    case Tag::coder_refine: return "coder_refine";
    case Tag::conductor: return "conductor";
    case Tag::compendium: return "compendium";
  }
  return "conductor";
}

Tag parse_tag(std::string_view text) {
  for (Tag t : {Tag::coder_generate, Tag::coder_refine, Tag::conductor, Tag::compendium}) {
    if (to_string(t) == text) return t;
  }
  throw Error(Errc::invalid_argument, fmt::format("unknown request tag '{}'", text));
}

double default_temperature(Tag tag) {
  return tag == Tag::coder_generate || tag == Tag::coder_refine ? 0.6 : 0.2;
}

void ChatRequest::validate() const {
  if (temperature < 0.0 || temperature > 2.0) {
    throw Error(Errc::invalid_argument, fmt::format("temperature {} outside [0,2]", temperature));
  }
  if (max_tokens <= 0) throw Error(Errc::invalid_argument, "max_tokens must be positive");
  if (tag != Tag::compendium && (system_prompt.empty() || user_prompt.empty())) {
    throw Error(Errc::invalid_argument, fmt::format("{} request needs both prompts", to_string(tag)));
  }
  if (user_prompt.empty()) throw Error(Errc::invalid_argument, "empty user prompt");
}

std::string ChatRequest::hash() const {
  std::uint64_t h = util::fnv1a64(to_string(tag));
  h = util::fnv1a64("\x1f", h);
  h = util::fnv1a64(system_prompt, h);
  h = util::fnv1a64("\x1f", h);
  h = util::fnv1a64(user_prompt, h);
  return util::hex64(h);
}

void to_json(json& j, const TranscriptRecord& r) {
  j = json{{"tag", to_string(r.tag)}, {"request_hash", r.request_hash}, {"system", r.system},
           {"user", r.user},          {"response", r.response},         {"ts", r.ts}};
}

void from_json(const json& j, TranscriptRecord& r) {
  r.tag = parse_tag(j.at("tag").get<std::string>());
  r.request_hash = j.value("request_hash", "");
  r.system = j.value("system", "");
  r.user = j.value("user", "");
  r.response = j.at("response").get<std::string>();
  r.ts = j.value("ts", "");
}

namespace {

std::string utc_timestamp() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  ::gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

TranscriptLog::TranscriptLog(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
}

void TranscriptLog::append(const TranscriptRecord& record) {
  std::lock_guard lock(mutex_);
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) throw Error(Errc::io_error, fmt::format("cannot append to {}", path_.string()));
  out << json(record).dump() << '\n';
}

std::vector<TranscriptRecord> TranscriptLog::read(const std::filesystem::path& path) {
  std::vector<TranscriptRecord> records;
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, fmt::format("cannot open transcript {}", path.string()));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (util::trim(line).empty()) continue;
    try {
      records.push_back(json::parse(line).get<TranscriptRecord>());
    } catch (const json::exception& e) {
      throw ParseError(line_no, line.substr(0, 80), fmt::format("bad transcript record: {}", e.what()));
    }
  }
  return records;
}

CompletionResult complete(LlmClient& client, const ChatRequest& request, const RetryPolicy& policy,
                          TranscriptLog* transcript) {
  request.validate();
  CompletionResult result;
  auto backoff = policy.initial_backoff;
  const int attempts = std::max(1, policy.max_attempts);
  std::string last_error;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    try {
      auto start = std::chrono::steady_clock::now();
      result.response = client.send(request);
      result.response.latency_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      result.response.provider = client.provider();
      if (transcript) {
        transcript->append({request.tag, request.hash(), request.system_prompt, request.user_prompt,
                            result.response.text, utc_timestamp()});
      }
      return result;
    } catch (const Error& e) {
      if (e.code() != Errc::provider_unavailable) throw;
      last_error = e.what();
      if (attempt == attempts) break;
      ++result.retries;
      spdlog::warn("{} request failed (attempt {}/{}): {}", to_string(request.tag), attempt, attempts, e.what());
      if (backoff.count() > 0) std::this_thread::sleep_for(backoff);
      backoff = std::min(policy.max_backoff,
                         std::chrono::milliseconds(static_cast<long long>(backoff.count() * policy.multiplier)));
    }
  }
  throw Error(Errc::provider_unavailable,
              fmt::format("provider '{}' unavailable after {} attempts: {}", client.provider(), attempts, last_error));
}

Session::Session(std::shared_ptr<LlmClient> client, RetryPolicy policy, std::shared_ptr<TranscriptLog> transcript,
                 int max_concurrency)
    : client_(std::move(client)),
      policy_(policy),
      transcript_(std::move(transcript)),
      slots_(std::clamp(max_concurrency, 1, 64)) {}

ChatResponse Session::complete(const ChatRequest& request) {
  slots_.acquire();
  struct Release {
    std::counting_semaphore<64>& s;
    ~Release() { s.release(); }
  } release{slots_};
  {
    std::lock_guard lock(stats_mutex_);
    ++calls_[request.tag];
  }
  auto result = llm::complete(*client_, request, policy_, transcript_.get());
  std::lock_guard lock(stats_mutex_);
  retries_ += result.retries;
  return result.response;
}

int Session::calls(Tag tag) const {
  std::lock_guard lock(stats_mutex_);
  auto it = calls_.find(tag);
  return it == calls_.end() ? 0 : it->second;
}

int Session::total_calls() const {
  std::lock_guard lock(stats_mutex_);
  int total = 0;
  for (const auto& [tag, n] : calls_) total += n;
  return total;
}

int Session::total_retries() const {
  std::lock_guard lock(stats_mutex_);
  return retries_;
}

// ---------------------------------------------------------------------------
// HTTP

json HttpConfig::to_json() const {
  return {{"endpoint", endpoint}, {"model", model}, {"key_env", key_env}, {"timeout_s", timeout_s}};
}

HttpOpenAiClient::HttpOpenAiClient(HttpConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) throw Error(Errc::configuration_error, "HTTP provider needs an endpoint");
}

ChatResponse HttpOpenAiClient::send(const ChatRequest& request) {
  auto scheme_end = config_.endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(Errc::configuration_error, fmt::format("malformed endpoint '{}'", config_.endpoint));
  }
  auto path_start = config_.endpoint.find('/', scheme_end + 3);
  std::string origin = config_.endpoint.substr(0, path_start);
  std::string path = path_start == std::string::npos ? "/v1/chat/completions" : config_.endpoint.substr(path_start);

  httplib::Client http(origin);
  auto secs = static_cast<time_t>(config_.timeout_s);
  http.set_connection_timeout(std::min<time_t>(secs, 30), 0);
  http.set_read_timeout(secs, 0);
  httplib::Headers headers;
  if (!config_.key_env.empty()) {
    if (const char* key = std::getenv(config_.key_env.c_str()); key && *key) {
      headers.emplace("Authorization", fmt::format("Bearer {}", key));
    }
  }
  json body = {{"model", config_.model},
               {"messages", json::array({{{"role", "system"}, {"content", request.system_prompt}},
                                         {{"role", "user"}, {"content", request.user_prompt}}})},
               {"temperature", request.temperature},
               {"max_tokens", request.max_tokens}};
  auto res = http.Post(path, headers, body.dump(), "application/json");
  if (!res) {
    throw Error(Errc::provider_unavailable, fmt::format("transport error: {}", httplib::to_string(res.error())));
  }
  if (res->status == 429 || res->status >= 500) {
    throw Error(Errc::provider_unavailable, fmt::format("HTTP {}", res->status));
  }
  if (res->status >= 400) {
    throw Error(Errc::configuration_error, fmt::format("HTTP {}: {}", res->status, res->body.substr(0, 512)));
  }
  ChatResponse out;
  try {
    auto doc = json::parse(res->body);
    out.text = doc.at("choices").at(0).at("message").at("content").get<std::string>();
    if (doc.contains("usage")) {
      const auto& usage = doc["usage"];
      if (usage.contains("prompt_tokens")) out.prompt_tokens = usage["prompt_tokens"].get<int>();
      if (usage.contains("completion_tokens")) out.completion_tokens = usage["completion_tokens"].get<int>();
    }
  } catch (const json::exception& e) {
    throw Error(Errc::provider_unavailable, fmt::format("malformed completion payload: {}", e.what()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// replay

ReplayClient::ReplayClient(std::vector<TranscriptRecord> records)
    : records_(std::move(records)), used_(records_.size(), false) {}

std::unique_ptr<ReplayClient> ReplayClient::from_file(const std::filesystem::path& path) {
  return std::make_unique<ReplayClient>(TranscriptLog::read(path));
}

std::optional<std::size_t> ReplayClient::match(Tag tag, const std::string& hash) const {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (!used_[i] && records_[i].tag == tag && records_[i].request_hash == hash) return i;
  }
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (!used_[i] && records_[i].tag == tag && records_[i].request_hash.empty()) return i;
  }
  return std::nullopt;
}

ChatResponse ReplayClient::send(const ChatRequest& request) {
  std::lock_guard lock(mutex_);
  auto hash = request.hash();
  auto i = match(request.tag, hash);
  if (!i) {
    throw Error(Errc::configuration_error,
                fmt::format("replay transcript has no response for {} request {}", to_string(request.tag), hash));
  }
  used_[*i] = true;
  ChatResponse out;
  out.text = records_[*i].response;
  return out;
}

void ReplayClient::skip(const std::vector<TranscriptRecord>& served) {
  std::lock_guard lock(mutex_);
  for (const auto& r : served) {
    if (auto i = match(r.tag, r.request_hash)) used_[*i] = true;
  }
}

std::size_t ReplayClient::remaining() const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(std::count(used_.begin(), used_.end(), false));
}

// ---------------------------------------------------------------------------
// scripted

ScriptedClient::ScriptedClient(std::vector<Step> steps, std::vector<Rule> rules)
    : steps_(steps.begin(), steps.end()), rules_(std::move(rules)) {}

std::unique_ptr<ScriptedClient> ScriptedClient::from_json(const json& script) {
  auto client = std::make_unique<ScriptedClient>();
  auto tag_of = [](const json& j) -> std::optional<Tag> {
    if (j.contains("tag")) return parse_tag(j["tag"].get<std::string>());
    return std::nullopt;
  };
  for (const auto& s : script.value("steps", json::array())) {
    Step step;
    step.tag = tag_of(s);
    step.text = s.value("text", "");
    std::string fail = s.value("fail", "");
    if (fail == "transport") step.failure = Failure::transport;
    else if (fail == "client_error") step.failure = Failure::client_error;
    else if (!fail.empty()) throw Error(Errc::configuration_error, fmt::format("unknown failure kind '{}'", fail));
    client->steps_.push_back(std::move(step));
  }
  for (const auto& r : script.value("rules", json::array())) {
    client->rules_.push_back({tag_of(r), r.at("match").get<std::string>(), r.at("text").get<std::string>()});
  }
  return client;
}

std::unique_ptr<ScriptedClient> ScriptedClient::from_file(const std::filesystem::path& path) {
  return from_json(json::parse(util::read_file(path)));
}

void ScriptedClient::push(Step step) {
  std::lock_guard lock(mutex_);
  steps_.push_back(std::move(step));
}

ChatResponse ScriptedClient::send(const ChatRequest& request) {
  std::lock_guard lock(mutex_);
  seen_.push_back(request);
  for (const auto& rule : rules_) {
    if ((!rule.tag || *rule.tag == request.tag) && request.user_prompt.find(rule.match) != std::string::npos) {
      return ChatResponse{rule.text, "scripted", 0.0, std::nullopt, std::nullopt};
    }
  }
  auto it = std::find_if(steps_.begin(), steps_.end(), [&](const Step& s) { return s.tag == request.tag; });
  if (it == steps_.end()) {
    it = std::find_if(steps_.begin(), steps_.end(), [](const Step& s) { return !s.tag.has_value(); });
  }
  if (it == steps_.end()) {
    throw Error(Errc::configuration_error,
                fmt::format("script exhausted for {} request", to_string(request.tag)));
  }
  Step step = *it;
  steps_.erase(it);
  switch (step.failure) {
    case Failure::transport: throw Error(Errc::provider_unavailable, "scripted transport failure");
    case Failure::client_error: throw Error(Errc::configuration_error, "scripted HTTP 400");
    case Failure::none: break;
  }
  return ChatResponse{step.text, "scripted", 0.0, std::nullopt, std::nullopt};
}

int ScriptedClient::sends() const {
  std::lock_guard lock(mutex_);
  return static_cast<int>(seen_.size());
}

std::vector<ChatRequest> ScriptedClient::requests() const {
  std::lock_guard lock(mutex_);
  return seen_;
}

std::shared_ptr<LlmClient> make_client(const ProviderOptions& options) {
  if (options.name == "http-openai-compatible" || options.name == "http") {
    return std::make_shared<HttpOpenAiClient>(options.http);
  }
  if (options.name == "replay") {
    if (options.transcript.empty()) throw Error(Errc::configuration_error, "replay provider needs a transcript");
    return ReplayClient::from_file(options.transcript);
  }
  if (options.name == "scripted") {
    if (options.script.empty()) throw Error(Errc::configuration_error, "scripted provider needs a script");
    return ScriptedClient::from_file(options.script);
  }
  throw Error(Errc::configuration_error, fmt::format("unknown LLM provider '{}'", options.name));
}

// ---------------------------------------------------------------------------
// code extraction

namespace {

struct Fence {
  std::string language;
  std::string body;
};

bool language_matches(std::string_view fence_lang, std::string_view hint) {
  auto canon = [](std::string_view s) {
    std::string l = util::to_lower(util::trim(s));
    if (l == "c++" || l == "cxx" || l == "cc" || l == "hpp" || l == "cuda" || l == "cu") return std::string("cpp");
    if (l == "py" || l == "triton") return std::string("python");
    return l;
  };
  return !hint.empty() && canon(fence_lang) == canon(hint);
}

std::string trim_blank_lines(std::string_view text) {
  auto lines = util::split(text, '\n');
  std::size_t first = 0;
  std::size_t last = lines.size();
  while (first < last && util::trim(lines[first]).empty()) ++first;
  while (last > first && util::trim(lines[last - 1]).empty()) --last;
  std::string out;
  for (std::size_t i = first; i < last; ++i) {
    std::string_view l = lines[i];
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    out.append(l);
    if (i + 1 < last) out += '\n';
  }
  return out;
}

}  // namespace

std::string extract_code(std::string_view response_text, std::string_view language_hint) {
  std::vector<Fence> fences;
  std::optional<Fence> open;
  for (const auto& raw_line : util::split(response_text, '\n')) {
    std::string_view line = util::trim(raw_line);
    if (line.starts_with("```")) {
      if (open) {
        fences.push_back(std::move(*open));
        open.reset();
      } else {
        open = Fence{std::string(util::trim(line.substr(3))), {}};
      }
      continue;
    }
    if (open) {
      open->body += raw_line;
      open->body += '\n';
    }
  }
  if (open) fences.push_back(std::move(*open));

  std::string chosen;
  if (fences.empty()) {
    chosen = trim_blank_lines(response_text);
  } else {
    auto it = std::find_if(fences.rbegin(), fences.rend(),
                           [&](const Fence& f) { return language_matches(f.language, language_hint); });
    chosen = trim_blank_lines(it != fences.rend() ? it->body : fences.back().body);
  }
  if (util::trim(chosen).empty()) throw Error(Errc::no_code_found, "response contains no code");
  return chosen;
}

}  // namespace profloop::llm
