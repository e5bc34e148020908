// SPDX-License-Identifier: Apache-2.0
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "profloop/compendium.hpp"

#include <algorithm>
#include <chrono>
#include <future>
#include <map>
#include <set>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "profloop/assets.hpp"
#include "profloop/error.hpp"
#include "profloop/profiler.hpp"
#include "profloop/util.hpp"

namespace profloop::compendium {
namespace {

using nlohmann::json;

constexpr std::string_view kSystemPrompt =
    "You are a performance engineer who writes precise, source-faithful summaries of "
    "profiler metric documentation. Answer only with the requested JSON.";

std::string prompt_asset(std::string_view name) {
  auto text = assets::find(name);
  if (!text) throw Error(Errc::configuration_error, fmt::format("missing prompt asset {}", name));
  return std::string(*text);
}

bool is_heading_line(std::string_view text, std::size_t line_start) {
  return line_start < text.size() && text[line_start] == '#';
}

std::size_t choose_cut(std::string_view text, std::size_t pos, std::size_t budget) {
  const std::size_t limit = pos + budget;
  const std::size_t min_heading = pos + budget / 4;
  // Heading boundary: the start of a line beginning with '#'.
  for (std::size_t i = limit; i > min_heading; --i) {
    if (text[i - 1] == '\n' && is_heading_line(text, i)) return i;
  }
  for (std::size_t i = limit; i > pos + 1; --i) {
    if (text[i - 1] == '\n' && text[i - 2] == '\n') return i;
  }
  for (std::size_t i = limit; i > pos; --i) {
    if (text[i - 1] == '\n') return i;
  }
  return limit;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      current += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::string http_get(const std::string& url) {
  auto scheme_end = url.find("://");
  auto path_start = url.find('/', scheme_end + 3);
  std::string origin = url.substr(0, path_start);
  std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
  httplib::Client client(origin);
  client.set_follow_location(true);
  client.set_connection_timeout(10);
  client.set_read_timeout(30);
  auto result = client.Get(path);
  if (!result) throw Error(Errc::ingest_error, fmt::format("{}: {}", url, httplib::to_string(result.error())));
  if (result->status != 200) throw Error(Errc::ingest_error, fmt::format("{}: HTTP {}", url, result->status));
  return result->body;
}

bool looks_like_html(std::string_view source, std::string_view body) {
  auto lower = util::to_lower(source);
  if (lower.ends_with(".html") || lower.ends_with(".htm")) return true;
  auto head = util::to_lower(body.substr(0, 512));
  return head.find("<html") != std::string::npos || head.find("<!doctype html") != std::string::npos;
}

std::vector<std::string> string_list(const json& value, std::string_view what) {
  if (!value.is_array()) throw Error(Errc::malformed_output, fmt::format("{} must be a list", what));
  std::vector<std::string> out;
  for (const auto& item : value) {
    if (!item.is_string() || util::trim(item.get<std::string>()).empty()) {
      throw Error(Errc::malformed_output, fmt::format("{} entries must be non-empty strings", what));
    }
    out.push_back(std::string(util::trim(item.get<std::string>())));
  }
  return out;
}

json parse_json_block(std::string_view response) {
  std::string code;
  try {
    code = llm::extract_code(response, "json");
  } catch (const Error&) {
    throw Error(Errc::malformed_output, "response holds no JSON");
  }
  try {
    return json::parse(code);
  } catch (const json::exception& e) {
    throw Error(Errc::malformed_output, fmt::format("invalid JSON: {}", e.what()));
  }
}

void append_unique(std::vector<std::string>& into, const std::vector<std::string>& values) {
  for (const auto& v : values) {
    if (std::find(into.begin(), into.end(), v) == into.end()) into.push_back(v);
  }
}

struct MergeFields {
  std::string description;
  std::string mechanism;
  std::vector<std::string> bottlenecks;
};

MergeFields parse_merge(std::string_view response) {
  json doc = parse_json_block(response);
  if (!doc.is_object()) throw Error(Errc::malformed_output, "merge response must be an object");
  MergeFields fields;
  if (!doc.contains("description") || !doc["description"].is_string() ||
      util::trim(doc["description"].get<std::string>()).empty()) {
    throw Error(Errc::malformed_output, "merged description missing");
  }
  fields.description = std::string(util::trim(doc["description"].get<std::string>()));
  if (doc.contains("mechanism") && doc["mechanism"].is_string()) fields.mechanism = doc["mechanism"];
  if (doc.contains("bottlenecks")) fields.bottlenecks = string_list(doc["bottlenecks"], "bottlenecks");
  return fields;
}

MetricKnowledgeEntry merge_group(const std::string& metric, const std::vector<MetricKnowledgeEntry>& group,
                                 llm::Session& session, const SummarizeOptions& options) {
  MetricKnowledgeEntry merged;
  merged.metric = metric;
  std::vector<std::string> descriptions;
  for (const auto& entry : group) {
    append_unique(merged.provenance, entry.provenance);
    append_unique(merged.bottlenecks, entry.bottlenecks);
    append_unique(descriptions, {entry.description});
  }
  if (group.size() == 1) {
    merged.description = group.front().description;
    merged.mechanism = group.front().mechanism;
    return merged;
  }

  json listing = json::array();
  for (const auto& entry : group) {
    listing.push_back({{"description", entry.description},
                       {"mechanism", entry.mechanism},
                       {"bottlenecks", entry.bottlenecks},
                       {"provenance", entry.provenance}});
  }
  const std::string tmpl = prompt_asset("prompts/compendium_merge.txt");
  llm::ChatRequest request;
  request.tag = llm::Tag::compendium;
  request.temperature = llm::default_temperature(request.tag);
  request.system_prompt = std::string(kSystemPrompt);
  request.user_prompt = util::render_template(tmpl, [&](const std::string& key) -> std::optional<std::string> {
    if (key == "metric") return metric;
    if (key == "entries") return listing.dump(2);
    return std::nullopt;
  });

  std::optional<MergeFields> fields;
  for (int attempt = 0; attempt <= options.retries && !fields; ++attempt) {
    try {
      fields = parse_merge(session.complete(request).text);
    } catch (const Error& e) {
      spdlog::warn("merge of {} failed (attempt {}): {}", metric, attempt + 1, e.what());
    }
  }
  if (fields) {
    merged.description = fields->description;
    merged.mechanism = fields->mechanism;
    append_unique(merged.bottlenecks, fields->bottlenecks);
  } else {
    merged.description = util::join(descriptions, "\n");
    for (const auto& entry : group) {
      if (!entry.mechanism.empty()) {
        merged.mechanism = entry.mechanism;
        break;
      }
    }
  }
  if (descriptions.size() > 1) {
    merged.flagged = true;
    merged.variants = descriptions;
  }
  return merged;
}

}  // namespace

// ---------------------------------------------------------------------------
// serialization

json Compendium::to_json() const {
  json entries_json = json::array();
  for (const auto& e : entries) {
    json item = {{"metric", e.metric},
                 {"description", e.description},
                 {"mechanism", e.mechanism},
                 {"bottlenecks", e.bottlenecks},
                 {"provenance", e.provenance},
                 {"flagged", e.flagged}};
    if (!e.variants.empty()) item["variants"] = e.variants;
    entries_json.push_back(std::move(item));
  }
  return {{"schema_version", schema_version}, {"built_at", built_at}, {"entries", std::move(entries_json)}};
}

Compendium Compendium::from_json(const json& doc) {
  try {
    Compendium out;
    out.schema_version = doc.at("schema_version").get<int>();
    if (out.schema_version != kSchemaVersion) {
      throw Error(Errc::parse_error, fmt::format("unsupported compendium schema_version {}", out.schema_version));
    }
    out.built_at = doc.value("built_at", "");
    for (const auto& item : doc.at("entries")) {
      MetricKnowledgeEntry e;
      e.metric = item.at("metric").get<std::string>();
      e.description = item.at("description").get<std::string>();
      e.mechanism = item.value("mechanism", "");
      e.bottlenecks = item.value("bottlenecks", std::vector<std::string>{});
      e.provenance = item.value("provenance", std::vector<std::string>{});
      e.flagged = item.value("flagged", false);
      e.variants = item.value("variants", std::vector<std::string>{});
      out.entries.push_back(std::move(e));
    }
    return out;
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, fmt::format("compendium: {}", e.what()));
  }
}

Compendium Compendium::load(const std::filesystem::path& path) {
  try {
    return from_json(json::parse(util::read_file(path)));
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, fmt::format("{}: {}", path.string(), e.what()));
  }
}

void Compendium::save(const std::filesystem::path& path) const {
  util::write_file_atomic(path, to_json().dump(2) + "\n");
}

std::string Compendium::content_hash() const {
  json doc = to_json();
  doc.erase("built_at");
  return util::hex64(util::fnv1a64(doc.dump()));
}

// ---------------------------------------------------------------------------
// ingestion

std::vector<DocSegment> split_document(const std::string& source, const std::string& tool, std::string_view text,
                                       std::size_t budget) {
  if (budget == 0) throw Error(Errc::invalid_argument, "segment budget must be positive");
  std::vector<DocSegment> segments;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.size() - pos <= budget ? text.size() : choose_cut(text, pos, budget);
    DocSegment seg;
    seg.source = source;
    seg.tool = tool;
    seg.offset = pos;
    seg.text = std::string(text.substr(pos, end - pos));
    seg.segment_id = util::stable_hash(fmt::format("{}\x1f{}", source, pos));
    segments.push_back(std::move(seg));
    pos = end;
  }
  return segments;
}

std::string strip_html(std::string_view html) {
  std::string out;
  out.reserve(html.size());
  std::size_t i = 0;
  auto skip_block = [&](std::string_view close) {
    auto end = util::to_lower(html.substr(i)).find(close);
    i = end == std::string::npos ? html.size() : i + end + close.size();
  };
  while (i < html.size()) {
    char c = html[i];
    if (c != '<') {
      if (c == '&') {
        static const std::pair<std::string_view, char> entities[] = {
            {"&amp;", '&'}, {"&lt;", '<'}, {"&gt;", '>'}, {"&quot;", '"'}, {"&#39;", '\''}, {"&nbsp;", ' '}};
        bool matched = false;
        for (const auto& [name, ch] : entities) {
          if (html.substr(i, name.size()) == name) {
            out += ch;
            i += name.size();
            matched = true;
            break;
          }
        }
        if (matched) continue;
      }
      out += c;
      ++i;
      continue;
    }
    auto close = html.find('>', i);
    if (close == std::string_view::npos) break;
    std::string tag = util::to_lower(html.substr(i + 1, close - i - 1));
    i = close + 1;
    std::string name = tag.substr(0, tag.find_first_of(" \t\n/", tag.starts_with('/') ? 1 : 0));
    if (name == "script" || name == "style") {
      skip_block("</" + name + ">");
      continue;
    }
    if (name.size() == 2 && name[0] == 'h' && name[1] >= '1' && name[1] <= '6') {
      out += "\n\n" + std::string(static_cast<std::size_t>(name[1] - '0'), '#') + " ";
    } else if (name == "p" || name == "/p" || name == "br" || name == "li" || name == "tr" || name == "div" ||
               name == "/div" || name.starts_with("/h")) {
      out += '\n';
    }
  }
  // Collapse runs of more than one blank line.
  std::string collapsed;
  int newlines = 0;
  for (char c : out) {
    if (c == '\n') {
      if (++newlines > 2) continue;
    } else if (c != ' ' && c != '\t' && c != '\r') {
      newlines = 0;
    }
    collapsed += c;
  }
  return std::string(util::trim(collapsed)) + "\n";
}

std::string infer_tool(std::string_view source) {
  auto lower = util::to_lower(source);
  if (lower.find("ncu") != std::string::npos || lower.find("nsight") != std::string::npos) return "ncu";
  if (lower.find("perf") != std::string::npos) return "perf";
  return "generic";
}

std::vector<std::string> read_sources_file(const std::filesystem::path& path) {
  std::vector<std::string> out;
  for (const auto& line : util::split(util::read_file(path), '\n')) {
    auto t = util::trim(line);
    if (t.empty() || t.starts_with('#')) continue;
    out.emplace_back(t);
  }
  return out;
}

IngestResult ingest(const std::vector<std::string>& sources, std::size_t budget,
                    const std::filesystem::path& base_dir) {
  IngestResult result;
  for (const auto& source : sources) {
    std::string body;
    try {
      if (source.starts_with("http://") || source.starts_with("https://")) {
        body = http_get(source);
      } else {
        std::filesystem::path path(source);
        if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
        body = util::read_file(path);
      }
    } catch (const std::exception& e) {
      result.errors.push_back(fmt::format("{}: {}", source, e.what()));
      continue;
    }
    if (looks_like_html(source, body)) body = strip_html(body);
    if (util::trim(body).empty()) {
      result.warnings.push_back(fmt::format("{}: empty document", source));
      continue;
    }
    auto segments = split_document(source, infer_tool(source), body, budget);
    std::move(segments.begin(), segments.end(), std::back_inserter(result.segments));
  }
  if (result.segments.empty()) {
    throw Error(Errc::build_error,
                fmt::format("no documentation segments ingested ({} sources, {} errors)", sources.size(),
                            result.errors.size()));
  }
  return result;
}

// ---------------------------------------------------------------------------
// summarization

std::string resolve_metric_name(std::string_view name, const metrics::Catalog& catalog) {
  std::string trimmed(util::trim(name));
  std::string lower = util::to_lower(trimmed);
  if (catalog.find(lower)) return lower;
  if (auto id = profiling::metric_for_native_name(trimmed)) return id->name();
  if (auto id = profiling::metric_for_native_name(lower)) return id->name();
  for (std::string_view prefix : {"cpu.", "gpu."}) {
    std::string candidate = std::string(prefix) + lower;
    if (catalog.find(candidate)) return candidate;
  }
  return lower;
}

std::vector<MetricKnowledgeEntry> parse_summary(std::string_view response, const DocSegment& segment,
                                                const metrics::Catalog& catalog) {
  json doc = parse_json_block(response);
  if (doc.is_object() && doc.contains("entries")) doc = doc["entries"];
  if (!doc.is_array()) throw Error(Errc::malformed_output, "summary must be a JSON array");
  std::vector<MetricKnowledgeEntry> entries;
  for (const auto& item : doc) {
    if (!item.is_object()) throw Error(Errc::malformed_output, "summary entries must be objects");
    auto text_field = [&](const char* key, bool required) -> std::string {
      if (!item.contains(key)) {
        if (required) throw Error(Errc::malformed_output, fmt::format("entry lacks '{}'", key));
        return {};
      }
      if (!item[key].is_string()) throw Error(Errc::malformed_output, fmt::format("'{}' must be a string", key));
      std::string value(util::trim(item[key].get<std::string>()));
      if (required && value.empty()) throw Error(Errc::malformed_output, fmt::format("'{}' is empty", key));
      return value;
    };
    MetricKnowledgeEntry entry;
    entry.metric = resolve_metric_name(text_field("metric", true), catalog);
    entry.description = text_field("description", true);
    entry.mechanism = text_field("mechanism", false);
    if (item.contains("bottlenecks")) entry.bottlenecks = string_list(item["bottlenecks"], "bottlenecks");
    entry.provenance = {segment.segment_id};
    entries.push_back(std::move(entry));
  }
  return entries;
}

SummarizeResult summarize_segment(const DocSegment& segment, llm::Session& session, const metrics::Catalog& catalog,
                                  const SummarizeOptions& options) {
  std::string known;
  for (const auto& d : catalog.descriptors()) known += d.id.name() + "\n";
  const std::string tmpl = prompt_asset("prompts/compendium_summarize.txt");
  llm::ChatRequest request;
  request.tag = llm::Tag::compendium;
  request.temperature = llm::default_temperature(request.tag);
  request.system_prompt = std::string(kSystemPrompt);
  request.user_prompt = util::render_template(tmpl, [&](const std::string& key) -> std::optional<std::string> {
    if (key == "tool") return segment.tool;
    if (key == "source") return segment.source;
    if (key == "segment_id") return segment.segment_id;
    if (key == "catalog") return known;
    if (key == "text") return segment.text;
    return std::nullopt;
  });

  SummarizeResult result;
  for (int attempt = 0; attempt <= options.retries; ++attempt) {
    if (attempt > 0) ++result.retries;
    try {
      result.entries = parse_summary(session.complete(request).text, segment, catalog);
      result.failure.clear();
      return result;
    } catch (const Error& e) {
      result.failure = fmt::format("{}@{}: {}", segment.source, segment.offset, e.what());
      if (e.code() != Errc::malformed_output) break;
    }
  }
  spdlog::warn("skipping segment {}", result.failure);
  return result;
}

Compendium synthesize(const std::vector<MetricKnowledgeEntry>& intermediate, llm::Session& session,
                      std::span<const metrics::Backend> backends, const metrics::Catalog& catalog,
                      const SummarizeOptions& options) {
  std::map<std::string, std::vector<MetricKnowledgeEntry>> groups;
  for (const auto& entry : intermediate) groups[resolve_metric_name(entry.metric, catalog)].push_back(entry);

  std::vector<std::string> missing;
  for (auto backend : backends) {
    for (const auto& id : catalog.defaults_for(backend)) {
      if (!groups.contains(id.name())) missing.push_back(id.name());
    }
  }
  if (!missing.empty()) {
    throw Error(Errc::coverage_error, fmt::format("compendium lacks default metrics: {}", util::join(missing, ", ")));
  }

  Compendium out;
  for (const auto& [metric, group] : groups) out.entries.push_back(merge_group(metric, group, session, options));
  out.built_at = fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", std::chrono::floor<std::chrono::seconds>(
                                                         std::chrono::system_clock::now()));
  return out;
}

BuildReport build(const std::vector<std::string>& sources, llm::Session& session, const BuildOptions& options,
                  const metrics::Catalog& catalog) {
  BuildReport report;
  IngestResult ingested = ingest(sources, options.budget, options.base_dir);
  report.segments = ingested.segments;
  report.warnings = ingested.warnings;
  report.failures = ingested.errors;

  const std::size_t n = report.segments.size();
  std::vector<SummarizeResult> results(n);
  const std::size_t width = static_cast<std::size_t>(std::max(1, options.parallelism));
  for (std::size_t start = 0; start < n; start += width) {
    std::vector<std::future<void>> batch;
    for (std::size_t i = start; i < std::min(n, start + width); ++i) {
      batch.push_back(std::async(std::launch::async, [&, i] {
        results[i] = summarize_segment(report.segments[i], session, catalog, options.summarize);
      }));
    }
    for (auto& f : batch) f.get();
  }

  std::vector<MetricKnowledgeEntry> intermediate;
  for (auto& r : results) {
    if (!r.failure.empty()) report.failures.push_back(r.failure);
    std::move(r.entries.begin(), r.entries.end(), std::back_inserter(intermediate));
  }
  report.compendium = synthesize(intermediate, session, options.backends, catalog, options.summarize);
  return report;
}

// ---------------------------------------------------------------------------
// lookup

std::vector<MetricKnowledgeEntry> lookup(const Compendium& compendium, std::string_view query, std::size_t k) {
  const auto query_tokens = tokenize(query);
  if (query_tokens.empty() || k == 0) return {};
  const std::set<std::string> query_set(query_tokens.begin(), query_tokens.end());

  auto tf = [&](const std::vector<std::string>& tokens) {
    double hits = 0;
    for (const auto& t : tokens) hits += query_set.contains(t) ? 1.0 : 0.0;
    return hits;
  };

  std::vector<std::pair<double, const MetricKnowledgeEntry*>> scored;
  for (const auto& entry : compendium.entries) {
    auto name_tokens = tokenize(entry.metric);
    std::string joined_bottlenecks = util::join(entry.bottlenecks, " ");
    double score = 3.0 * tf(name_tokens) + 2.0 * tf(tokenize(joined_bottlenecks)) +
                   1.0 * tf(tokenize(entry.description + " " + entry.mechanism));
    // Exact naming: the query spells the metric's local name, with or without prefix.
    std::vector<std::string> local(name_tokens.begin() + (name_tokens.size() > 1 ? 1 : 0), name_tokens.end());
    if (query_tokens == local || query_tokens == name_tokens) score += 5.0;
    if (score > 0) scored.emplace_back(score, &entry);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second->metric < b.second->metric;
  });
  std::vector<MetricKnowledgeEntry> out;
  for (std::size_t i = 0; i < std::min(k, scored.size()); ++i) out.push_back(*scored[i].second);
  return out;
}

}  // namespace profloop::compendium
