// SPDX-License-Identifier: Apache-2.0
#include "profloop/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <numeric>
#include <set>

#include "profloop/assets.hpp"
#include "profloop/error.hpp"
#include "profloop/util.hpp"

namespace profloop::metrics {

using nlohmann::json;

std::string_view to_string(Backend backend) {
  switch (backend) {
    case Backend::cpu: return "cpu";
    case Backend::gpu: return "gpu";
    case Backend::any: return "any";
  }
  return "any";
}

Backend parse_backend(std::string_view text) {
  if (text == "cpu") return Backend::cpu;
  if (text == "gpu") return Backend::gpu;
  if (text == "any") return Backend::any;
  throw Error(Errc::unknown_backend, fmt::format("unknown backend '{}'", text));
}

std::string_view to_string(Unit unit) {
  switch (unit) {
    case Unit::ratio: return "ratio";
    case Unit::percent: return "percent";
    case Unit::count: return "count";
    case Unit::bytes_per_sec: return "bytes_per_sec";
    case Unit::nanoseconds: return "nanoseconds";
    case Unit::cycles: return "cycles";
    case Unit::dimensionless: return "dimensionless";
  }
  return "dimensionless";
}

std::string_view to_string(Direction direction) {
  switch (direction) {
    case Direction::higher_better: return "higher_better";
    case Direction::lower_better: return "lower_better";
    case Direction::neutral: return "neutral";
  }
  return "neutral";
}

namespace {

Unit parse_unit(std::string_view s) {
  for (Unit u : {Unit::ratio, Unit::percent, Unit::count, Unit::bytes_per_sec, Unit::nanoseconds,
                 Unit::cycles, Unit::dimensionless}) {
    if (to_string(u) == s) return u;
  }
  throw Error(Errc::format_error, fmt::format("unknown unit '{}'", s));
}

Direction parse_direction(std::string_view s) {
  for (Direction d : {Direction::higher_better, Direction::lower_better, Direction::neutral}) {
    if (to_string(d) == s) return d;
  }
  throw Error(Errc::format_error, fmt::format("unknown direction '{}'", s));
}

void check_name(std::string_view name) {
  if (name.empty()) throw Error(Errc::invalid_argument, "metric name is empty");
  for (char c : name) {
    auto uc = static_cast<unsigned char>(c);
    if (std::isspace(uc) || std::isupper(uc)) {
      throw Error(Errc::invalid_argument, fmt::format("malformed metric name '{}'", name));
    }
  }
}

}  // namespace

MetricId::MetricId(std::string name, Backend backend) : name_(std::move(name)), backend_(backend) {
  check_name(name_);
}

MetricId MetricId::parse(std::string_view name) {
  Backend backend = Backend::any;
  if (name.starts_with("cpu.")) backend = Backend::cpu;
  if (name.starts_with("gpu.")) backend = Backend::gpu;
  return MetricId(std::string(name), backend);
}

Catalog::Catalog(std::vector<MetricDescriptor> descriptors) : descriptors_(std::move(descriptors)) {
  for (std::size_t i = 0; i < descriptors_.size(); ++i) {
    auto [it, inserted] = index_.emplace(descriptors_[i].id.name(), i);
    if (!inserted) {
      throw Error(Errc::format_error,
                  fmt::format("duplicate metric '{}' in catalog", descriptors_[i].id.name()));
    }
    if (descriptors_[i].default_set && descriptors_[i].id.backend() == Backend::any) {
      throw Error(Errc::format_error, fmt::format("default metric '{}' needs a concrete backend",
                                                  descriptors_[i].id.name()));
    }
  }
}

const Catalog& Catalog::builtin() {
  static const Catalog catalog = [] {
    auto text = assets::find("data/catalog.json");
    return from_json(json::parse(*text));
  }();
  return catalog;
}

Catalog Catalog::from_json(const json& doc) {
  std::vector<MetricDescriptor> descriptors;
  for (const auto& m : doc.at("metrics")) {
    MetricDescriptor d;
    d.id = MetricId(m.at("name").get<std::string>(), parse_backend(m.at("backend").get<std::string>()));
    d.unit = parse_unit(m.at("unit").get<std::string>());
    d.direction = parse_direction(m.at("direction").get<std::string>());
    d.default_set = m.at("default_set").get<bool>();
    d.doc = m.value("doc", "");
    descriptors.push_back(std::move(d));
  }
  return Catalog(std::move(descriptors));
}

Catalog Catalog::load(const std::filesystem::path& path) {
  return from_json(json::parse(util::read_file(path)));
}

json Catalog::to_json() const {
  json metrics = json::array();
  for (const auto& d : descriptors_) {
    metrics.push_back({{"name", d.id.name()},
                       {"backend", to_string(d.id.backend())},
                       {"unit", to_string(d.unit)},
                       {"direction", to_string(d.direction)},
                       {"default_set", d.default_set},
                       {"doc", d.doc}});
  }
  return {{"schema_version", 1}, {"metrics", metrics}};
}

const MetricDescriptor* Catalog::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &descriptors_[it->second];
}

const MetricDescriptor& Catalog::at(std::string_view name) const {
  if (const auto* d = find(name)) return *d;
  throw Error(Errc::unknown_metric, fmt::format("unknown metric '{}'", name));
}

std::vector<MetricId> Catalog::defaults_for(Backend backend) const {
  std::vector<MetricId> out;
  for (const auto& d : descriptors_) {
    if (d.default_set && d.id.backend() == backend) out.push_back(d.id);
  }
  return out;
}

std::optional<double> ProfileReport::get(std::string_view name) const {
  auto it = values.find(MetricId::parse(name));
  if (it == values.end()) return std::nullopt;
  return it->second;
}

void add_derived_metrics(std::map<MetricId, double>& values) {
  auto lookup = [&](std::string_view name) -> std::optional<double> {
    auto it = values.find(MetricId::parse(name));
    return it == values.end() ? std::nullopt : std::optional<double>(it->second);
  };
  auto derive_ratio = [&](std::string_view out, std::string_view num, std::string_view den, double scale) {
    auto n = lookup(num);
    auto d = lookup(den);
    if (n && d && *d > 0.0) values[MetricId::parse(out)] = scale * *n / *d;
  };
  derive_ratio("cpu.ipc", "cpu.instructions_retired", "cpu.cycles", 1.0);
  derive_ratio("cpu.llc_miss_rate", "cpu.llc_load_misses", "cpu.llc_loads", 100.0);
  derive_ratio("cpu.branch_miss_rate", "cpu.branch_misses", "cpu.branches", 100.0);
}

void validate(const ProfileReport& report, const Catalog& catalog) {
  if (!(report.wall_time_ns > 0.0)) {
    throw Error(Errc::invalid_argument, "profile report wall_time_ns must be > 0");
  }
  for (const auto& [id, value] : report.values) {
    const auto& d = catalog.at(id.name());
    if (d.unit == Unit::percent && (value < 0.0 || value > 100.0)) {
      throw Error(Errc::invalid_argument, fmt::format("{} = {} outside [0,100]", id.name(), value));
    }
    if (d.unit == Unit::ratio && value < 0.0) {
      throw Error(Errc::invalid_argument, fmt::format("{} = {} is negative", id.name(), value));
    }
  }
  if (report.backend == Backend::cpu) {
    auto fe = report.get("cpu.frontend_bound");
    auto be = report.get("cpu.backend_bound");
    auto bs = report.get("cpu.bad_speculation");
    auto rt = report.get("cpu.retiring");
    if (fe && be && bs && rt) {
      double sum = *fe + *be + *bs + *rt;
      if (sum < kTopdownSumLow || sum > kTopdownSumHigh) {
        throw Error(Errc::invalid_argument,
                    fmt::format("top-down fractions sum to {}%, expected [{}, {}]", sum,
                                kTopdownSumLow, kTopdownSumHigh));
      }
    }
  }
}

double median(std::span<const double> samples) {
  if (samples.empty()) throw Error(Errc::invalid_timing, "median of an empty sample set");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  std::size_t n = sorted.size();
  if (n % 2 == 1) return sorted[n / 2];
  return 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

double mean(std::span<const double> samples) {
  if (samples.empty()) throw Error(Errc::invalid_timing, "mean of an empty sample set");
  return std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
}

double aggregate(std::span<const double> samples, Statistic statistic) {
  return statistic == Statistic::median ? median(samples) : mean(samples);
}

double speedup(double t_reference_ns, double t_candidate_ns) {
  if (!(t_reference_ns > 0.0) || !(t_candidate_ns > 0.0)) {
    throw Error(Errc::invalid_timing,
                fmt::format("non-positive time (reference {}, candidate {})", t_reference_ns,
                            t_candidate_ns));
  }
  return t_reference_ns / t_candidate_ns;
}

double speedup(const TimingResult& timing) {
  return speedup(timing.t_reference_ns, timing.t_candidate_ns);
}

std::vector<MetricId> default_metric_set(Backend backend, const Catalog& catalog) {
  if (backend != Backend::cpu && backend != Backend::gpu) {
    throw Error(Errc::unknown_backend,
                fmt::format("no default metric set for backend '{}'", to_string(backend)));
  }
  return catalog.defaults_for(backend);
}

std::vector<MetricId> default_metric_set(std::string_view backend, const Catalog& catalog) {
  return default_metric_set(parse_backend(backend), catalog);
}

std::vector<MetricId> merge_metric_requests(std::span<const MetricId> defaults,
                                            std::span<const MetricId> extra, const Catalog& catalog) {
  for (const auto& id : extra) {
    if (!catalog.contains(id)) {
      throw Error(Errc::unknown_metric, fmt::format("unknown metric '{}' requested", id.name()));
    }
  }
  std::vector<MetricId> merged;
  std::set<MetricId> seen;
  for (auto list : {defaults, extra}) {
    for (const auto& id : list) {
      if (seen.insert(id).second) merged.push_back(id);
    }
  }
  return merged;
}

std::map<MetricId, MetricDelta> profile_delta(const ProfileReport& current,
                                              const ProfileReport& baseline) {
  if (current.backend != baseline.backend) {
    throw Error(Errc::backend_mismatch,
                fmt::format("cannot compare {} profile with {} profile", to_string(current.backend),
                            to_string(baseline.backend)));
  }
  std::map<MetricId, MetricDelta> out;
  for (const auto& [id, value] : current.values) {
    MetricDelta d;
    d.current = value;
    auto it = baseline.values.find(id);
    if (it == baseline.values.end()) {
      d.side = MetricDelta::Side::current_only;
    } else {
      d.baseline = it->second;
      d.delta = value - it->second;
    }
    out.emplace(id, d);
  }
  for (const auto& [id, value] : baseline.values) {
    if (out.contains(id)) continue;
    MetricDelta d;
    d.side = MetricDelta::Side::baseline_only;
    d.baseline = value;
    out.emplace(id, d);
  }
  return out;
}

void to_json(json& j, const MetricId& id) { j = id.name(); }
void from_json(const json& j, MetricId& id) { id = MetricId::parse(j.get<std::string>()); }

void to_json(json& j, const ProfileReport& report) {
  json values = json::object();
  for (const auto& [id, value] : report.values) values[id.name()] = value;
  j = json{{"backend", to_string(report.backend)},
           {"iteration", report.iteration},
           {"raw_artifact", report.raw_artifact},
           {"wall_time_ns", report.wall_time_ns},
           {"values", values},
           {"warnings", report.warnings}};
}

void from_json(const json& j, ProfileReport& report) {
  report.backend = parse_backend(j.at("backend").get<std::string>());
  report.iteration = j.at("iteration").get<int>();
  report.raw_artifact = j.value("raw_artifact", "");
  report.wall_time_ns = j.at("wall_time_ns").get<double>();
  report.values.clear();
  for (const auto& [name, value] : j.at("values").items()) {
    report.values.emplace(MetricId::parse(name), value.get<double>());
  }
  report.warnings = j.value("warnings", std::vector<std::string>{});
}

void to_json(json& j, const TimingResult& t) {
  j = json{{"t_reference_ns", t.t_reference_ns},
           {"t_candidate_ns", t.t_candidate_ns},
           {"t_reference_mean_ns", t.t_reference_mean_ns},
           {"t_candidate_mean_ns", t.t_candidate_mean_ns},
           {"warmup_runs", t.warmup_runs},
           {"timed_runs", t.timed_runs},
           {"reference_samples", t.reference_samples},
           {"candidate_samples", t.candidate_samples}};
}

void from_json(const json& j, TimingResult& t) {
  t.t_reference_ns = j.at("t_reference_ns").get<double>();
  t.t_candidate_ns = j.at("t_candidate_ns").get<double>();
  t.t_reference_mean_ns = j.value("t_reference_mean_ns", 0.0);
  t.t_candidate_mean_ns = j.value("t_candidate_mean_ns", 0.0);
  t.warmup_runs = j.at("warmup_runs").get<int>();
  t.timed_runs = j.at("timed_runs").get<int>();
  t.reference_samples = j.value("reference_samples", std::vector<double>{});
  t.candidate_samples = j.value("candidate_samples", std::vector<double>{});
}

}  // namespace profloop::metrics
