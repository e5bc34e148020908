// SPDX-License-Identifier: Apache-2.0
#include "profloop/agents.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "profloop/assets.hpp"
#include "profloop/error.hpp"
#include "profloop/util.hpp"

namespace profloop::agents {
namespace {

using nlohmann::json;

constexpr BottleneckKind kAllKinds[] = {
    BottleneckKind::frontend_bound,        BottleneckKind::backend_memory_bound, BottleneckKind::backend_core_bound,
    BottleneckKind::bad_speculation,       BottleneckKind::low_occupancy,        BottleneckKind::register_pressure,
    BottleneckKind::low_memory_throughput, BottleneckKind::low_tensor_core_util, BottleneckKind::underparallelized,
    BottleneckKind::other};

constexpr Verdict kAllVerdicts[] = {Verdict::first_measurement, Verdict::improvement, Verdict::regression,
                                    Verdict::correctness_failure};

std::string asset_text(std::string_view name) {
  auto text = assets::find(name);
  if (!text) throw Error(Errc::configuration_error, fmt::format("missing asset {}", name));
  return std::string(*text);
}

Comparator parse_comparator(std::string_view text) {
  if (text == ">") return Comparator::greater;
  if (text == ">=") return Comparator::greater_equal;
  if (text == "<") return Comparator::less;
  if (text == "<=") return Comparator::less_equal;
  throw Error(Errc::configuration_error, fmt::format("unknown comparator '{}'", text));
}

bool holds(Comparator c, double value, double threshold) {
  switch (c) {
    case Comparator::greater: return value > threshold;
    case Comparator::greater_equal: return value >= threshold;
    case Comparator::less: return value < threshold;
    case Comparator::less_equal: return value <= threshold;
  }
  return false;
}

bool is_upper_bound(Comparator c) { return c == Comparator::greater || c == Comparator::greater_equal; }

double severity(Comparator c, double value, double threshold, bool percent) {
  double distance = std::abs(value - threshold);
  if (percent) {
    double room = is_upper_bound(c) ? 100.0 - threshold : threshold;
    return room > 0 ? distance / room : distance;
  }
  return std::abs(threshold) > 0 ? distance / std::abs(threshold) : distance;
}

Condition parse_condition(const json& j) {
  Condition c;
  c.metric = j.at("metric").get<std::string>();
  c.comparator = parse_comparator(j.at("comparator").get<std::string>());
  c.threshold = j.at("threshold").get<double>();
  c.label = parse_bottleneck(j.at("label").get<std::string>());
  return c;
}

std::string fence(std::string_view language, std::string_view body) {
  std::string text(body);
  if (!text.empty() && text.back() != '\n') text += '\n';
  return fmt::format("```{}\n{}```", language, text);
}

std::string render_profile(const metrics::ProfileReport& profile, const metrics::Catalog& catalog) {
  std::string out;
  for (const auto& [id, value] : profile.values) {
    const auto* d = catalog.find(id.name());
    out += fmt::format("- {} = {}{}\n", id.name(), util::format_double(value),
                       d ? fmt::format(" ({})", metrics::to_string(d->unit)) : "");
  }
  if (profile.wall_time_ns > 0) out += fmt::format("- wall_time_ns = {}\n", util::format_double(profile.wall_time_ns));
  for (const auto& w : profile.warnings) out += fmt::format("- warning: {}\n", w);
  return out.empty() ? "(no metrics collected)\n" : out;
}

std::string render_feedback(const verify::VerificationOutcome& v) {
  std::string out = fmt::format("status: {}\n", verify::to_string(v.status));
  if (v.max_abs_err) out += fmt::format("max_abs_err: {}\n", util::format_double(*v.max_abs_err));
  if (v.max_rel_err) out += fmt::format("max_rel_err: {}\n", util::format_double(*v.max_rel_err));
  if (v.timing) {
    out += fmt::format("speedup: {}x (reference {} ns, candidate {} ns; {} warmup + {} timed runs)\n",
                       util::format_double(metrics::speedup(*v.timing)), util::format_double(v.timing->t_reference_ns),
                       util::format_double(v.timing->t_candidate_ns), v.timing->warmup_runs, v.timing->timed_runs);
  }
  auto logs = verify::truncate_log(v.logs, kFeedbackExcerptCap);
  out += logs.empty() ? "logs: (empty)\n" : "logs:\n" + fence("", logs) + "\n";
  return out;
}

std::string render_labels(const std::vector<BottleneckLabel>& labels) {
  if (labels.empty()) return "(none fired)\n";
  std::string out;
  for (const auto& l : labels) {
    out += fmt::format("- {} (severity {:.3f}):", to_string(l.label), l.severity);
    for (const auto& e : l.evidence) {
      out += fmt::format(" {}={} vs threshold {};", e.metric.name(), util::format_double(e.value),
                         util::format_double(e.threshold));
    }
    out.pop_back();
    out += '\n';
  }
  return out;
}

std::string render_delta(const metrics::ProfileReport& current, const metrics::ProfileReport& best) {
  std::string out = "metric | current | best | delta\n";
  for (const auto& [id, d] : metrics::profile_delta(current, best)) {
    auto cell = [](const std::optional<double>& v) { return v ? util::format_double(*v) : std::string("-"); };
    out += fmt::format("{} | {} | {} | {}\n", id.name(), cell(d.current), cell(d.baseline),
                       d.side == metrics::MetricDelta::Side::both ? util::format_double(d.delta) : "n/a");
  }
  return out;
}

std::string render_best(const BestRecord& best, const metrics::Catalog& catalog) {
  std::string out = fmt::format("speedup {}x, achieved at iteration {}\n", util::format_double(best.speedup),
                                best.achieved_at_iteration);
  out += fence(best.candidate.language, best.candidate.source) + "\n";
  out += "profile:\n";
  out += best.profile ? render_profile(*best.profile, catalog) : "(absent: best candidate was not profiled)\n";
  return out;
}

std::string render_docs(const std::vector<compendium::MetricKnowledgeEntry>& docs) {
  std::string out;
  for (const auto& d : docs) {
    out += fmt::format("- {}: {}", d.metric, d.description);
    if (!d.mechanism.empty()) out += fmt::format(" Mechanism: {}", d.mechanism);
    if (!d.bottlenecks.empty()) out += fmt::format(" Reveals: {}.", util::join(d.bottlenecks, "; "));
    out += '\n';
  }
  return out;
}

std::string generic_hint(BottleneckKind kind) {
  switch (kind) {
    case BottleneckKind::frontend_bound:
      return "Reduce instruction-fetch pressure: keep the hot loop compact and avoid indirect calls inside it.";
    case BottleneckKind::backend_memory_bound:
      return "Improve data locality: tile loops for the cache hierarchy and make inner-loop accesses contiguous.";
    case BottleneckKind::backend_core_bound:
      return "Increase instruction-level parallelism: vectorize the inner loop and break long dependency chains.";
    case BottleneckKind::bad_speculation:
      return "Remove data-dependent branches from the inner loop, for example with branchless selects.";
    case BottleneckKind::low_occupancy:
      return "Raise occupancy by lowering per-block register or shared-memory use or by adjusting the block size.";
    case BottleneckKind::register_pressure:
      return "Cut register usage by shrinking per-thread tiles or splitting the kernel.";
    case BottleneckKind::low_memory_throughput:
      return "Coalesce global-memory accesses and use wider vectorized loads.";
    case BottleneckKind::low_tensor_core_util:
      return "Route the matrix product through tensor-core instructions with supported dtypes and tile shapes.";
    case BottleneckKind::underparallelized:
      return "Expose more parallel work per launch.";
    case BottleneckKind::other:
      break;
  }
  return "Review the profile for the dominant cost and target it directly.";
}

const metrics::Catalog& catalog_of(const ConductorOptions& o) {
  return o.catalog ? *o.catalog : metrics::Catalog::builtin();
}

}  // namespace

// ---------------------------------------------------------------------------
// enums

std::string_view to_string(BottleneckKind kind) {
  switch (kind) {
    case BottleneckKind::frontend_bound: return "frontend_bound";
    case BottleneckKind::backend_memory_bound: return "backend_memory_bound";
    case BottleneckKind::backend_core_bound: return "backend_core_bound";
    case BottleneckKind::bad_speculation: return "bad_speculation";
    case BottleneckKind::low_occupancy: return "low_occupancy";
    case BottleneckKind::register_pressure: return "register_pressure";
    case BottleneckKind::low_memory_throughput: return "low_memory_throughput";
    case BottleneckKind::low_tensor_core_util: return "low_tensor_core_util";
    case BottleneckKind::underparallelized: return "underparallelized";
    case BottleneckKind::other: return "other";
  }
  return "other";
}

BottleneckKind parse_bottleneck(std::string_view text) {
  for (auto k : kAllKinds) {
    if (to_string(k) == text) return k;
  }
  throw Error(Errc::configuration_error, fmt::format("unknown bottleneck label '{}'", text));
}

std::string_view to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::first_measurement: return "first_measurement";
    case Verdict::improvement: return "improvement";
    case Verdict::regression: return "regression";
    case Verdict::correctness_failure: return "correctness_failure";
  }
  return "regression";
}

Verdict parse_verdict(std::string_view text) {
  for (auto v : kAllVerdicts) {
    if (to_string(v) == text) return v;
  }
  throw Error(Errc::parse_error, fmt::format("unknown verdict '{}'", text));
}

// ---------------------------------------------------------------------------
// rules

const RuleTable& RuleTable::builtin() {
  static const RuleTable table = from_json(json::parse(asset_text("data/rules.json")));
  return table;
}

RuleTable RuleTable::from_json(const json& doc) {
  try {
    const json& list = doc.is_array() ? doc : doc.at("rules");
    std::vector<Rule> rules;
    for (const auto& item : list) {
      Rule r;
      r.backend = metrics::parse_backend(item.at("backend").get<std::string>());
      r.condition = parse_condition(item);
      r.scale = item.value("scale", "");
      if (!r.scale.empty() && r.scale != "memory_bandwidth") {
        throw Error(Errc::configuration_error, fmt::format("unknown rule scale '{}'", r.scale));
      }
      for (const auto& c : item.value("categories", json::array())) r.categories.push_back(parse_category(c.get<std::string>()));
      if (item.contains("split")) r.split = parse_condition(item["split"]);
      rules.push_back(std::move(r));
    }
    return RuleTable(std::move(rules));
  } catch (const json::exception& e) {
    throw Error(Errc::configuration_error, fmt::format("rules: {}", e.what()));
  }
}

RuleTable RuleTable::load(const std::filesystem::path& path) {
  try {
    return from_json(json::parse(util::read_file(path)));
  } catch (const json::exception& e) {
    throw Error(Errc::configuration_error, fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::vector<BottleneckLabel> classify_bottlenecks(const metrics::ProfileReport& profile, const HardwareSpec& hw,
                                                  std::optional<Category> category, const RuleTable& rules,
                                                  const metrics::Catalog& catalog) {
  if (profile.backend != hw.backend) {
    throw Error(Errc::backend_mismatch, fmt::format("profile backend {} does not match hardware backend {}",
                                                    metrics::to_string(profile.backend),
                                                    metrics::to_string(hw.backend)));
  }
  std::vector<BottleneckLabel> labels;
  for (const auto& rule : rules.rules()) {
    if (rule.backend != profile.backend) continue;
    if (!rule.categories.empty() &&
        (!category || std::find(rule.categories.begin(), rule.categories.end(), *category) == rule.categories.end())) {
      continue;
    }
    auto value = profile.get(rule.condition.metric);
    if (!value) continue;
    double threshold = rule.condition.threshold;
    if (rule.scale == "memory_bandwidth") {
      if (!hw.memory_bandwidth_gbps) continue;
      threshold *= *hw.memory_bandwidth_gbps * 1e9;
    }
    if (!holds(rule.condition.comparator, *value, threshold)) continue;

    const auto* d = catalog.find(rule.condition.metric);
    bool percent = d && d->unit == metrics::Unit::percent && rule.scale.empty();
    BottleneckLabel label;
    label.label = rule.condition.label;
    label.evidence.push_back({metrics::MetricId::parse(rule.condition.metric), *value, threshold});
    label.severity = severity(rule.condition.comparator, *value, threshold, percent);
    if (rule.split) {
      auto split_value = profile.get(rule.split->metric);
      if (split_value && holds(rule.split->comparator, *split_value, rule.split->threshold)) {
        label.label = rule.split->label;
        label.evidence.push_back({metrics::MetricId::parse(rule.split->metric), *split_value, rule.split->threshold});
      }
    }
    labels.push_back(std::move(label));
  }
  std::stable_sort(labels.begin(), labels.end(), [](const BottleneckLabel& a, const BottleneckLabel& b) {
    if (a.severity != b.severity) return a.severity > b.severity;
    return to_string(a.label) < to_string(b.label);
  });
  return labels;
}

// ---------------------------------------------------------------------------
// verdicts and diagnoses

Verdict compare_with_best(double current_speedup, std::optional<double> best_speedup) {
  if (!(current_speedup > 0) || !std::isfinite(current_speedup)) {
    throw Error(Errc::invalid_argument, fmt::format("current speedup must be positive, got {}", current_speedup));
  }
  if (!best_speedup) return Verdict::first_measurement;
  return current_speedup > *best_speedup ? Verdict::improvement : Verdict::regression;
}

void to_json(json& j, const BottleneckLabel& b) {
  json evidence = json::array();
  for (const auto& e : b.evidence) {
    evidence.push_back({{"metric", e.metric.name()}, {"value", e.value}, {"threshold", e.threshold}});
  }
  j = {{"label", to_string(b.label)}, {"severity", b.severity}, {"evidence", std::move(evidence)}};
}

void from_json(const json& j, BottleneckLabel& b) {
  b.label = parse_bottleneck(j.at("label").get<std::string>());
  b.severity = j.value("severity", 0.0);
  b.evidence.clear();
  for (const auto& e : j.at("evidence")) {
    b.evidence.push_back({metrics::MetricId::parse(e.at("metric").get<std::string>()), e.at("value").get<double>(),
                          e.at("threshold").get<double>()});
  }
}

void to_json(json& j, const Diagnosis& d) {
  json extra = json::array();
  for (const auto& m : d.extra_metrics) extra.push_back(m.name());
  j = {{"verdict", to_string(d.verdict)},
       {"bottlenecks", d.bottlenecks},
       {"hints", d.hints},
       {"extra_metrics", std::move(extra)},
       {"rationale", d.rationale},
       {"feedback_excerpt", d.feedback_excerpt},
       {"warnings", d.warnings},
       {"fallback", d.fallback}};
}

void from_json(const json& j, Diagnosis& d) {
  d.verdict = parse_verdict(j.at("verdict").get<std::string>());
  d.bottlenecks = j.value("bottlenecks", std::vector<BottleneckLabel>{});
  d.hints = j.value("hints", std::vector<std::string>{});
  d.extra_metrics.clear();
  for (const auto& m : j.value("extra_metrics", json::array())) {
    d.extra_metrics.push_back(metrics::MetricId::parse(m.get<std::string>()));
  }
  d.rationale = j.value("rationale", "");
  d.feedback_excerpt = j.value("feedback_excerpt", "");
  d.warnings = j.value("warnings", std::vector<std::string>{});
  d.fallback = j.value("fallback", false);
}

// ---------------------------------------------------------------------------
// conductor

std::vector<compendium::MetricKnowledgeEntry> select_metric_docs(const compendium::Compendium& compendium,
                                                                 const std::vector<BottleneckLabel>& labels,
                                                                 const metrics::ProfileReport* profile,
                                                                 std::size_t k) {
  std::vector<compendium::MetricKnowledgeEntry> out;
  std::set<std::string> seen;
  auto take = [&](const compendium::MetricKnowledgeEntry& e) {
    if (out.size() < k && seen.insert(e.metric).second) out.push_back(e);
  };
  auto exact = [&](const std::string& metric) {
    for (const auto& e : compendium.entries) {
      if (e.metric == metric) take(e);
    }
  };
  for (const auto& label : labels) {
    for (const auto& ev : label.evidence) exact(ev.metric.name());
    std::string query(to_string(label.label));
    std::replace(query.begin(), query.end(), '_', ' ');
    for (const auto& e : compendium::lookup(compendium, query, k)) take(e);
  }
  if (profile) {
    for (const auto& [id, value] : profile->values) exact(id.name());
  }
  return out;
}

Verdict context_verdict(const ConductorContext& ctx) {
  if (!ctx.verifier_feedback.correct() || !ctx.verifier_feedback.timing) return Verdict::correctness_failure;
  std::optional<double> best;
  if (ctx.best_record) best = ctx.best_record->speedup;
  return compare_with_best(metrics::speedup(*ctx.verifier_feedback.timing), best);
}

llm::ChatRequest build_conductor_request(const ConductorContext& ctx, const std::vector<BottleneckLabel>& labels,
                                         Verdict verdict, const metrics::Catalog& catalog) {
  const std::string tmpl = asset_text("prompts/conductor.txt");
  auto section = [&](const std::string& key) -> std::optional<std::string> {
    if (key == "task_id") return ctx.task_id;
    if (key == "backend") return std::string(metrics::to_string(ctx.backend));
    if (key == "category") return std::string(to_string(ctx.category));
    if (key == "attempt") return std::to_string(ctx.attempt);
    if (key == "max_attempts") return std::to_string(ctx.max_attempts);
    if (key == "verdict") return std::string(to_string(verdict));
    if (key == "current_code") {
      if (ctx.current_code.source.empty()) return std::string("(absent: the Coder returned no code)");
      return fence(ctx.current_code.language, ctx.current_code.source);
    }
    if (key == "verifier_feedback") return render_feedback(ctx.verifier_feedback);
    if (key == "metric_docs") {
      return ctx.metric_docs.empty() ? std::string("(absent: no metric documentation selected)\n")
                                     : render_docs(ctx.metric_docs);
    }
    if (key == "profile") {
      return ctx.current_profile ? render_profile(*ctx.current_profile, catalog)
                                 : std::string("(absent: candidate was not profiled)\n");
    }
    if (key == "bottlenecks") return render_labels(labels);
    if (key == "delta_table") {
      if (ctx.current_profile && ctx.best_record && ctx.best_record->profile &&
          ctx.best_record->profile->backend == ctx.current_profile->backend) {
        return render_delta(*ctx.current_profile, *ctx.best_record->profile);
      }
      return std::string("(absent: no profiled pair to compare)\n");
    }
    if (key == "best") {
      return ctx.best_record ? render_best(*ctx.best_record, catalog)
                             : std::string("(absent: no correct candidate yet)\n");
    }
    if (key == "history") {
      if (ctx.history.empty()) return std::string("(absent: first iteration)\n");
      std::string out;
      for (const auto& line : ctx.history) out += line + "\n";
      return out;
    }
    if (key == "hardware") return ctx.hardware_spec.describe();
    return std::nullopt;
  };
  llm::ChatRequest request;
  request.tag = llm::Tag::conductor;
  request.temperature = llm::default_temperature(request.tag);
  request.system_prompt = asset_text("prompts/conductor_system.txt");
  request.user_prompt = util::render_template(tmpl, section);
  return request;
}

Diagnosis parse_conductor_response(std::string_view text, metrics::Backend backend, const metrics::Catalog& catalog) {
  json doc;
  try {
    doc = json::parse(llm::extract_code(text, "json"));
  } catch (const Error&) {
    throw Error(Errc::malformed_output, "conductor response holds no JSON block");
  } catch (const json::exception& e) {
    throw Error(Errc::malformed_output, fmt::format("conductor JSON invalid: {}", e.what()));
  }
  if (!doc.is_object()) throw Error(Errc::malformed_output, "conductor JSON must be an object");
  if (!doc.contains("hints") || !doc["hints"].is_array()) {
    throw Error(Errc::malformed_output, "conductor JSON lacks a 'hints' list");
  }
  Diagnosis d;
  for (const auto& h : doc["hints"]) {
    if (!h.is_string()) throw Error(Errc::malformed_output, "hints must be strings");
    const auto& raw = h.get_ref<const std::string&>();
    auto hint = util::trim(raw);
    if (!hint.empty()) d.hints.emplace_back(hint);
  }
  if (doc.contains("extra_metrics")) {
    if (!doc["extra_metrics"].is_array()) throw Error(Errc::malformed_output, "extra_metrics must be a list");
    for (const auto& m : doc["extra_metrics"]) {
      if (!m.is_string()) throw Error(Errc::malformed_output, "extra_metrics must be strings");
      std::string name = util::to_lower(util::trim(m.get<std::string>()));
      const auto* desc = catalog.find(name);
      if (!desc || (desc->id.backend() != backend && desc->id.backend() != metrics::Backend::any)) {
        std::string warning = fmt::format("dropped unknown metric request '{}'", name);
        spdlog::warn("{}", warning);
        d.warnings.push_back(std::move(warning));
        continue;
      }
      if (std::find(d.extra_metrics.begin(), d.extra_metrics.end(), desc->id) == d.extra_metrics.end()) {
        d.extra_metrics.push_back(desc->id);
      }
    }
  }
  if (doc.contains("rationale") && doc["rationale"].is_string()) d.rationale = doc["rationale"].get<std::string>();
  return d;
}

Diagnosis fallback_diagnosis(const ConductorContext& ctx, const std::vector<BottleneckLabel>& labels,
                             Verdict verdict) {
  Diagnosis d;
  d.verdict = verdict;
  d.bottlenecks = labels;
  d.fallback = true;
  if (verdict == Verdict::correctness_failure) {
    d.hints.push_back(fmt::format("Fix the {} reported by the verifier before optimizing further.",
                                  verify::to_string(ctx.verifier_feedback.status)));
  }
  for (const auto& l : labels) d.hints.push_back(generic_hint(l.label));
  if (d.hints.empty()) d.hints.push_back(generic_hint(BottleneckKind::other));
  d.rationale = "rule-based fallback";
  return d;
}

Diagnosis conduct(const ConductorContext& ctx, llm::Session& session, const ConductorOptions& options) {
  const auto& catalog = catalog_of(options);
  const auto& rules = options.rules ? *options.rules : RuleTable::builtin();
  const Verdict verdict = context_verdict(ctx);

  std::vector<BottleneckLabel> labels;
  std::vector<std::string> notes;
  if (ctx.current_profile && ctx.verifier_feedback.correct() &&
      ctx.current_profile->backend != ctx.hardware_spec.backend) {
    notes.push_back("hardware spec backend differs from the profile; bottleneck rules skipped");
  } else if (ctx.current_profile && ctx.verifier_feedback.correct()) {
    labels = classify_bottlenecks(*ctx.current_profile, ctx.hardware_spec, ctx.category, rules, catalog);
  }
  const auto request = build_conductor_request(ctx, labels, verdict, catalog);

  std::vector<std::string> problems;
  std::optional<Diagnosis> parsed;
  for (int attempt = 0; attempt <= options.retries && !parsed; ++attempt) {
    try {
      parsed = parse_conductor_response(session.complete(request).text, ctx.backend, catalog);
    } catch (const Error& e) {
      if (e.code() != Errc::malformed_output) throw;
      problems.push_back(e.what());
      spdlog::warn("conductor output unusable (attempt {}): {}", attempt + 1, e.what());
    }
  }

  Diagnosis d = parsed ? std::move(*parsed) : fallback_diagnosis(ctx, labels, verdict);
  d.verdict = verdict;
  d.bottlenecks = labels;
  for (auto& p : problems) d.warnings.push_back("conductor output rejected: " + p);
  for (auto& n : notes) d.warnings.push_back(std::move(n));
  if (verdict == Verdict::correctness_failure) {
    d.feedback_excerpt = verify::truncate_log(ctx.verifier_feedback.logs, kFeedbackExcerptCap);
  }
  return d;
}

// ---------------------------------------------------------------------------
// coder

std::string programming_interface(const TaskSpec& task) {
  if (task.code_language() == "python") {
    return "Triton kernels in Python. Provide the @triton.jit kernel plus a launcher function whose signature "
           "matches the reference operator described above. Autotuning decorators are allowed.";
  }
  return "Standard C++20 in a single self-contained translation unit using only the standard library. "
         "Keep the entry-point signature described above exactly.";
}

llm::ChatRequest build_generate_request(const TaskSpec& task, const HardwareSpec& hw, int iteration) {
  const std::string tmpl = asset_text("prompts/coder_generate.txt");
  llm::ChatRequest request;
  request.tag = llm::Tag::coder_generate;
  request.temperature = llm::default_temperature(request.tag);
  request.system_prompt = asset_text("prompts/coder_system.txt");
  request.user_prompt = util::render_template(tmpl, [&](const std::string& key) -> std::optional<std::string> {
    if (key == "task_id") return task.task_id;
    if (key == "backend") return std::string(metrics::to_string(task.backend));
    if (key == "category") return std::string(to_string(task.category));
    if (key == "attempt") return std::to_string(iteration + 1);
    if (key == "max_attempts") return std::to_string(task.max_attempts);
    if (key == "description") return task.description;
    if (key == "interface") return programming_interface(task);
    if (key == "hardware") return hw.describe();
    if (key == "language") return task.code_language();
    return std::nullopt;
  });
  return request;
}

llm::ChatRequest build_refine_request(const TaskSpec& task, const CandidateKernel& previous,
                                      const Diagnosis& diagnosis, const BestRecord* best, const HardwareSpec& hw,
                                      int iteration) {
  const auto& catalog = metrics::Catalog::builtin();
  std::string diag;
  for (std::size_t i = 0; i < diagnosis.hints.size(); ++i) diag += fmt::format("{}. {}\n", i + 1, diagnosis.hints[i]);
  if (!diagnosis.bottlenecks.empty()) diag += "Bottlenecks:\n" + render_labels(diagnosis.bottlenecks);
  if (!diagnosis.rationale.empty()) diag += fmt::format("Rationale: {}\n", diagnosis.rationale);
  if (!diagnosis.feedback_excerpt.empty()) diag += "Verifier log excerpt:\n" + fence("", diagnosis.feedback_excerpt) + "\n";

  const std::string tmpl = asset_text("prompts/coder_refine.txt");
  llm::ChatRequest request;
  request.tag = llm::Tag::coder_refine;
  request.temperature = llm::default_temperature(request.tag);
  request.system_prompt = asset_text("prompts/coder_system.txt");
  request.user_prompt = util::render_template(tmpl, [&](const std::string& key) -> std::optional<std::string> {
    if (key == "task_id") return task.task_id;
    if (key == "backend") return std::string(metrics::to_string(task.backend));
    if (key == "category") return std::string(to_string(task.category));
    if (key == "attempt") return std::to_string(iteration + 1);
    if (key == "max_attempts") return std::to_string(task.max_attempts);
    if (key == "description") return task.description;
    if (key == "interface") return programming_interface(task);
    if (key == "hardware") return hw.describe();
    if (key == "language") return task.code_language();
    if (key == "previous_code") return fence(previous.language, previous.source);
    if (key == "verdict") return std::string(to_string(diagnosis.verdict));
    if (key == "diagnosis") return diag.empty() ? std::string("(no hints)\n") : diag;
    if (key == "best") return best ? render_best(*best, catalog) : std::string("(absent: no correct candidate yet)\n");
    return std::nullopt;
  });
  return request;
}

namespace {

CandidateKernel complete_candidate(const TaskSpec& task, const llm::ChatRequest& request, llm::Session& session,
                                   int iteration) {
  auto response = session.complete(request);
  CandidateKernel k;
  k.language = task.code_language();
  k.iteration = iteration;
  k.source = llm::extract_code(response.text, k.language);
  if (!k.source.empty() && k.source.back() != '\n') k.source += '\n';
  return k;
}

}  // namespace

CandidateKernel generate(const TaskSpec& task, const HardwareSpec& hw, llm::Session& session, int iteration) {
  return complete_candidate(task, build_generate_request(task, hw, iteration), session, iteration);
}

CandidateKernel refine(const TaskSpec& task, const CandidateKernel& previous, const Diagnosis& diagnosis,
                       const BestRecord* best, const HardwareSpec& hw, llm::Session& session, int iteration) {
  return complete_candidate(task, build_refine_request(task, previous, diagnosis, best, hw, iteration), session,
                            iteration);
}

}  // namespace profloop::agents
