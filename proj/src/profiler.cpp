// SPDX-License-Identifier: Apache-2.0
#include "profloop/profiler.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <cmath>

#include "profloop/assets.hpp"
#include "profloop/error.hpp"
#include "profloop/process.hpp"
#include "profloop/util.hpp"

namespace profloop::profiling {

using metrics::Unit;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// perf

struct PerfEvent {
  std::string_view event;
  std::string_view metric;
};

// Normalized perf event name -> catalog metric. Normalization lowercases and
// strips modifiers (":u"), PMU prefixes ("cpu_core/.../") and "tma_"/"topdown_".
constexpr PerfEvent kPerfEvents[] = {
    {"instructions", "cpu.instructions_retired"},
    {"inst_retired.any", "cpu.instructions_retired"},
    {"cycles", "cpu.cycles"},
    {"cpu-cycles", "cpu.cycles"},
    {"cpu_clk_unhalted.thread", "cpu.cycles"},
    {"llc-loads", "cpu.llc_loads"},
    {"llc-load-misses", "cpu.llc_load_misses"},
    {"cache-references", "cpu.cache_references"},
    {"cache-misses", "cpu.cache_misses"},
    {"l1-dcache-load-misses", "cpu.l1d_load_misses"},
    {"branches", "cpu.branches"},
    {"branch-instructions", "cpu.branches"},
    {"branch-misses", "cpu.branch_misses"},
    {"task-clock", "cpu.task_clock"},
    {"duration_time", "cpu.duration"},
};

// Top-down names, valid only when the value is a percentage.
constexpr PerfEvent kTopdownNames[] = {
    {"frontend_bound", "cpu.frontend_bound"}, {"fe_bound", "cpu.frontend_bound"},
    {"backend_bound", "cpu.backend_bound"},   {"be_bound", "cpu.backend_bound"},
    {"bad_speculation", "cpu.bad_speculation"}, {"bad_spec", "cpu.bad_speculation"},
    {"retiring", "cpu.retiring"},             {"memory_bound", "cpu.memory_bound"},
    {"mem_bound", "cpu.memory_bound"},        {"core_bound", "cpu.core_bound"},
};

std::string normalize_event(std::string_view raw) {
  std::string name = util::to_lower(util::trim(raw));
  if (auto slash = name.find('/'); slash != std::string::npos) {
    auto end = name.rfind('/');
    name = end > slash ? name.substr(slash + 1, end - slash - 1) : name.substr(slash + 1);
  }
  if (auto colon = name.find(':'); colon != std::string::npos) name.resize(colon);
  return name;
}

std::string normalize_topdown(std::string_view raw) {
  std::string name = util::to_lower(util::trim(raw));
  for (char& c : name) {
    if (c == '-' || c == ' ') c = '_';
  }
  for (std::string_view prefix : {"tma_", "topdown_"}) {
    if (name.starts_with(prefix)) name.erase(0, prefix.size());
  }
  return name;
}

std::optional<std::string_view> perf_metric_for(std::string_view event) {
  std::string name = normalize_event(event);
  for (const auto& e : kPerfEvents) {
    if (e.event == name) return e.metric;
  }
  return std::nullopt;
}

std::optional<std::string_view> topdown_metric_for(std::string_view label) {
  std::string name = normalize_topdown(label);
  for (const auto& e : kTopdownNames) {
    if (e.event == name) return e.metric;
  }
  return std::nullopt;
}

double perf_value(std::string_view value, std::size_t line_no, std::string_view line) {
  // Integer counters go through an integer parse so they stay bit-exact.
  if (auto u = util::parse_uint(value)) return static_cast<double>(*u);
  if (auto d = util::parse_double(value)) return *d;
  throw ParseError(line_no, std::string(line), "non-numeric counter value");
}

double scale_time_to_ns(double value, std::string_view unit) {
  std::string u = util::to_lower(util::trim(unit));
  if (u == "msec" || u == "ms") return value * 1e6;
  if (u == "usec" || u == "us") return value * 1e3;
  if (u == "sec" || u == "s" || u == "seconds") return value * 1e9;
  return value;
}

// ---------------------------------------------------------------------------
// CSV

std::vector<std::string> parse_csv_row(std::string_view line, bool* quoted_any = nullptr) {
  std::vector<std::string> cells;
  std::string cell;
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        cell += c;
      }
    } else if (c == '"') {
      in_quotes = true;
      if (quoted_any) *quoted_any = true;
    } else if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

std::optional<double> ncu_number(std::string_view cell) {
  std::string s(util::trim(cell));
  // Quoted cells may carry thousands separators.
  s.erase(std::remove(s.begin(), s.end(), ','), s.end());
  if (auto u = util::parse_uint(s)) return static_cast<double>(*u);
  return util::parse_double(s);
}

double ncu_unit_scale(std::string_view unit_text, Unit unit) {
  std::string u = util::to_lower(util::trim(unit_text));
  if (u.empty()) return 1.0;
  if (unit == Unit::nanoseconds) {
    if (u == "nsecond" || u == "ns") return 1.0;
    if (u == "usecond" || u == "us") return 1e3;
    if (u == "msecond" || u == "ms") return 1e6;
    if (u == "second" || u == "s") return 1e9;
  }
  if (unit == Unit::bytes_per_sec || unit == Unit::count) {
    auto prefix_scale = [](std::string_view p) {
      if (p.starts_with("k")) return 1e3;
      if (p.starts_with("m")) return 1e6;
      if (p.starts_with("g")) return 1e9;
      if (p.starts_with("t")) return 1e12;
      return 1.0;
    };
    if (u.find("byte") != std::string::npos) return prefix_scale(u);
  }
  return 1.0;
}

bool is_summed(Unit unit) {
  return unit == Unit::count || unit == Unit::cycles || unit == Unit::nanoseconds;
}

std::set<MetricId> cpu_capabilities(const Catalog& catalog) {
  std::set<MetricId> caps;
  for (const auto& d : catalog.descriptors()) {
    if (d.id.backend() == Backend::cpu) caps.insert(d.id);
  }
  return caps;
}

std::set<MetricId> ncu_capabilities(const Catalog& catalog) {
  std::set<MetricId> caps;
  for (const auto& [column, metric] : NcuAliasTable::builtin().entries()) {
    if (catalog.contains(metric)) caps.insert(metric);
  }
  return caps;
}

}  // namespace

ProfileReport perf_parse(std::string_view raw_text, std::span<const MetricId> requested) {
  std::map<MetricId, double> parsed;
  std::vector<std::string> warnings;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= raw_text.size()) {
    auto nl = raw_text.find('\n', pos);
    std::string_view line = raw_text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? raw_text.size() + 1 : nl + 1;
    ++line_no;

    std::string_view body = util::trim(line);
    if (body.empty() || body.front() == '#') continue;

    auto fields = util::split(body, ',');
    if (fields.size() < 3) {
      throw ParseError(line_no, std::string(body), "expected at least 3 comma-separated fields");
    }
    std::string_view value = util::trim(fields[0]);
    std::string_view unit = util::trim(fields[1]);
    std::string_view event = util::trim(fields[2]);

    if (value.empty()) {
      // Metric-only line: value in column 6, "<unit> <name>" in column 7.
      if (fields.size() >= 7 && !util::trim(fields[5]).empty()) {
        std::string label(util::trim(fields[6]));
        bool percent = label.starts_with('%');
        if (percent) label.erase(0, 1);
        if (auto metric = topdown_metric_for(label); metric && percent) {
          parsed[MetricId::parse(*metric)] = perf_value(util::trim(fields[5]), line_no, body);
        }
        continue;
      }
      if (event.empty()) continue;
      throw ParseError(line_no, std::string(body), "missing counter value");
    }
    if (event.empty()) throw ParseError(line_no, std::string(body), "missing event name");

    if (value.starts_with('<')) {
      if (value == "<not counted>" || value == "<not supported>") {
        warnings.push_back(fmt::format("{} {}", event, value));
        continue;
      }
      throw ParseError(line_no, std::string(body), "unrecognized counter marker");
    }

    double number = perf_value(value, line_no, body);
    if (unit == "%") {
      if (auto metric = topdown_metric_for(event)) {
        parsed[MetricId::parse(*metric)] = number;
        continue;
      }
    }
    if (auto metric = perf_metric_for(event)) {
      if (*metric == "cpu.task_clock" || *metric == "cpu.duration") number = scale_time_to_ns(number, unit);
      parsed[MetricId::parse(*metric)] = number;
    }
    // Topdown metric columns can also ride on a regular event line.
    if (fields.size() >= 7) {
      std::string label(util::trim(fields[6]));
      if (label.starts_with('%')) {
        label.erase(0, 1);
        if (auto metric = topdown_metric_for(label)) {
          if (auto v = util::parse_double(fields[5])) parsed[MetricId::parse(*metric)] = *v;
        }
      }
    }
  }

  metrics::add_derived_metrics(parsed);

  ProfileReport report;
  report.backend = Backend::cpu;
  report.warnings = std::move(warnings);
  for (const auto& id : requested) {
    if (auto it = parsed.find(id); it != parsed.end()) report.values[id] = it->second;
  }
  if (report.values.empty()) {
    throw Error(Errc::empty_profile, "perf output contained none of the requested metrics");
  }
  if (auto it = parsed.find(MetricId::parse("cpu.duration")); it != parsed.end()) {
    report.wall_time_ns = it->second;
  } else if (auto tc = parsed.find(MetricId::parse("cpu.task_clock")); tc != parsed.end()) {
    report.wall_time_ns = tc->second;
  }
  return report;
}

std::optional<MetricId> metric_for_native_name(std::string_view name) {
  if (auto m = perf_metric_for(name)) return MetricId::parse(*m);
  if (auto m = topdown_metric_for(name)) return MetricId::parse(*m);
  return NcuAliasTable::builtin().metric_for(name);
}

const NcuAliasTable& NcuAliasTable::builtin() {
  static const NcuAliasTable table = [] {
    auto text = assets::find("data/ncu_aliases.json");
    return from_json(nlohmann::ordered_json::parse(*text));
  }();
  return table;
}

NcuAliasTable NcuAliasTable::from_json(const nlohmann::ordered_json& doc) {
  NcuAliasTable table;
  for (const auto& [column, metric] : doc.at("aliases").items()) {
    table.entries_.emplace_back(column, MetricId::parse(metric.get<std::string>()));
  }
  return table;
}

std::optional<MetricId> NcuAliasTable::metric_for(std::string_view column) const {
  auto col = util::trim(column);
  for (const auto& [name, metric] : entries_) {
    if (name == col) return metric;
  }
  return std::nullopt;
}

std::optional<std::string> NcuAliasTable::column_for(const MetricId& metric) const {
  for (const auto& [name, m] : entries_) {
    if (m == metric) return name;
  }
  return std::nullopt;
}

ProfileReport ncu_parse(std::string_view raw_csv, std::span<const MetricId> requested,
                        const NcuAliasTable& aliases, const Catalog& catalog) {
  struct Row {
    std::size_t line_no;
    std::string text;
    std::vector<std::string> cells;
  };
  std::vector<Row> rows;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < raw_csv.size()) {
    auto nl = raw_csv.find('\n', pos);
    std::string_view line = raw_csv.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? raw_csv.size() : nl + 1;
    ++line_no;
    std::string_view body = util::trim(line);
    // ncu interleaves "==PROF==" log lines and application output with the CSV.
    if (body.empty() || body.starts_with("==")) continue;
    rows.push_back({line_no, std::string(body), parse_csv_row(body)});
  }
  if (rows.empty()) throw Error(Errc::empty_profile, "empty NCU export");

  const Row& header = rows.front();
  bool header_has_text = std::any_of(header.cells.begin(), header.cells.end(), [](const std::string& c) {
    return !util::trim(c).empty() && !ncu_number(c);
  });
  if (!header_has_text) throw ParseError(header.line_no, header.text, "missing header row");

  struct Column {
    std::size_t index;
    MetricId metric;
    Unit unit;
    double scale = 1.0;
  };
  std::vector<Column> columns;
  for (std::size_t i = 0; i < header.cells.size(); ++i) {
    if (auto metric = aliases.metric_for(header.cells[i])) {
      const auto* d = catalog.find(metric->name());
      if (!d) continue;
      bool duplicate = std::any_of(columns.begin(), columns.end(),
                                   [&](const Column& c) { return c.metric == *metric; });
      if (!duplicate) columns.push_back({i, *metric, d->unit});
    }
  }
  if (columns.empty()) throw Error(Errc::empty_profile, "no recognized NCU metric columns");

  for (const auto& id : requested) {
    bool present = std::any_of(columns.begin(), columns.end(), [&](const Column& c) { return c.metric == id; });
    if (!present) {
      auto expected = aliases.column_for(id);
      throw Error(Errc::unknown_alias,
                  fmt::format("requested metric '{}' has no NCU column (expected '{}')", id.name(),
                              expected.value_or("<no alias>")));
    }
  }

  const MetricId time_id = MetricId::parse("gpu.kernel_time");
  // Only requested columns (plus the duration used as weight) are aggregated, so
  // text-valued columns elsewhere in the export are ignored.
  std::erase_if(columns, [&](const Column& c) {
    return c.metric != time_id && std::find(requested.begin(), requested.end(), c.metric) == requested.end();
  });

  std::size_t first_data = 1;
  if (rows.size() > 1) {
    const Row& maybe_units = rows[1];
    bool all_text = std::all_of(columns.begin(), columns.end(), [&](const Column& c) {
      return c.index >= maybe_units.cells.size() || !ncu_number(maybe_units.cells[c.index]);
    });
    if (all_text) {
      for (auto& c : columns) {
        if (c.index < maybe_units.cells.size()) c.scale = ncu_unit_scale(maybe_units.cells[c.index], c.unit);
      }
      first_data = 2;
    }
  }

  const Column* time_col = nullptr;
  for (const auto& c : columns) {
    if (c.metric == time_id) time_col = &c;
  }

  std::map<MetricId, double> sums;
  std::map<MetricId, double> weights;
  std::vector<std::string> warnings;
  std::size_t launches = 0;
  double total_time = 0.0;
  for (std::size_t r = first_data; r < rows.size(); ++r) {
    const Row& row = rows[r];
    if (row.cells.size() < header.cells.size()) {
      throw ParseError(row.line_no, row.text,
                       fmt::format("expected {} columns, found {}", header.cells.size(), row.cells.size()));
    }
    double weight = 1.0;
    if (time_col) {
      auto t = ncu_number(row.cells[time_col->index]);
      if (!t) throw ParseError(row.line_no, row.text, "non-numeric kernel duration");
      weight = *t * time_col->scale;
      total_time += weight;
    }
    for (const auto& c : columns) {
      std::string_view cell = util::trim(row.cells[c.index]);
      if (cell.empty() || cell == "n/a") {
        warnings.push_back(fmt::format("launch on line {}: {} not available", row.line_no, c.metric.name()));
        continue;
      }
      auto v = ncu_number(cell);
      if (!v) throw ParseError(row.line_no, row.text, fmt::format("non-numeric value for {}", c.metric.name()));
      double value = *v * c.scale;
      if (is_summed(c.unit)) {
        sums[c.metric] += value;
        weights[c.metric] = 1.0;
      } else {
        sums[c.metric] += weight * value;
        weights[c.metric] += weight;
      }
    }
    ++launches;
  }
  if (launches == 0) throw Error(Errc::empty_profile, "NCU export has a header but no kernel rows");

  ProfileReport report;
  report.backend = Backend::gpu;
  report.warnings = std::move(warnings);
  for (const auto& id : requested) {
    auto it = sums.find(id);
    if (it == sums.end()) continue;
    double w = weights[id];
    report.values[id] = w > 0.0 ? it->second / w : it->second;
  }
  if (report.values.empty()) throw Error(Errc::empty_profile, "NCU export yielded no requested values");
  if (time_col) report.wall_time_ns = total_time;
  return report;
}

// ---------------------------------------------------------------------------
// adapters

PerfAdapter::PerfAdapter(std::string perf_binary, const Catalog& catalog)
    : binary_(std::move(perf_binary)), capabilities_(cpu_capabilities(catalog)) {}

LaunchPlan PerfAdapter::plan(const ProfileRequest& request) const {
  std::set<std::string> events;
  bool topdown = false;
  bool topdown_l2 = false;
  for (const auto& id : request.metrics) {
    const auto& n = id.name();
    if (n == "cpu.ipc") {
      events.insert("instructions");
      events.insert("cycles");
    } else if (n == "cpu.llc_miss_rate") {
      events.insert("LLC-loads");
      events.insert("LLC-load-misses");
    } else if (n == "cpu.branch_miss_rate") {
      events.insert("branches");
      events.insert("branch-misses");
    } else if (n == "cpu.memory_bound" || n == "cpu.core_bound") {
      topdown = topdown_l2 = true;
    } else if (n == "cpu.frontend_bound" || n == "cpu.backend_bound" || n == "cpu.bad_speculation" ||
               n == "cpu.retiring") {
      topdown = true;
    } else {
      for (const auto& e : kPerfEvents) {
        if (e.metric == n) {
          // Use the canonical spelling perf accepts.
          std::string ev(e.event);
          if (ev == "llc-loads") ev = "LLC-loads";
          if (ev == "llc-load-misses") ev = "LLC-load-misses";
          if (ev == "l1-dcache-load-misses") ev = "L1-dcache-load-misses";
          events.insert(ev);
          break;
        }
      }
    }
  }
  events.insert("duration_time");

  LaunchPlan plan;
  plan.raw_source = LaunchPlan::RawSource::file;
  plan.raw_file = request.raw_path;
  plan.argv = {binary_, "stat", "-x,", "-o", request.raw_path.string()};
  std::vector<std::string> ev(events.begin(), events.end());
  plan.argv.push_back("-e");
  plan.argv.push_back(fmt::format("{}", fmt::join(ev, ",")));
  if (topdown) {
    plan.argv.push_back("--topdown");
    if (topdown_l2) {
      plan.argv.push_back("--td-level");
      plan.argv.push_back("2");
    }
  }
  plan.argv.push_back("--");
  plan.argv.insert(plan.argv.end(), request.command.begin(), request.command.end());
  return plan;
}

NcuAdapter::NcuAdapter(std::string ncu_binary, const Catalog& catalog)
    : binary_(std::move(ncu_binary)), catalog_(&catalog), capabilities_(ncu_capabilities(catalog)) {}

LaunchPlan NcuAdapter::plan(const ProfileRequest& request) const {
  std::vector<std::string> raw_metrics;
  for (const auto& id : request.metrics) {
    // Raw metric names contain "__"; human-readable section names do not.
    for (const auto& [column, metric] : NcuAliasTable::builtin().entries()) {
      if (metric == id && column.find("__") != std::string::npos) {
        raw_metrics.push_back(column);
        break;
      }
    }
  }
  if (std::find(raw_metrics.begin(), raw_metrics.end(), "gpu__time_duration.sum") == raw_metrics.end()) {
    raw_metrics.insert(raw_metrics.begin(), "gpu__time_duration.sum");
  }
  LaunchPlan plan;
  plan.raw_source = LaunchPlan::RawSource::stdout_text;
  plan.argv = {binary_, "--csv", "--page", "raw", "--metrics", fmt::format("{}", fmt::join(raw_metrics, ","))};
  plan.argv.insert(plan.argv.end(), request.command.begin(), request.command.end());
  return plan;
}

FixtureAdapter::FixtureAdapter(Format format, Resolver resolver)
    : format_(format),
      resolver_(std::move(resolver)),
      capabilities_(format == Format::perf ? cpu_capabilities(Catalog::builtin())
                                           : ncu_capabilities(Catalog::builtin())) {}

FixtureAdapter::FixtureAdapter(Format format, std::vector<std::filesystem::path> files)
    : FixtureAdapter(format, [files = std::move(files)](const ProfileRequest& request) {
        if (files.empty()) throw Error(Errc::configuration_error, "fixture adapter has no files");
        auto i = std::min<std::size_t>(static_cast<std::size_t>(std::max(request.iteration, 0)), files.size() - 1);
        return files[i];
      }) {}

FixtureAdapter FixtureAdapter::from_directory(Format format, std::filesystem::path dir) {
  std::string ext = format == Format::perf ? ".perf.csv" : ".ncu.csv";
  return FixtureAdapter(format, [dir = std::move(dir), ext](const ProfileRequest& request) {
    std::vector<std::filesystem::path> candidates = {
        dir / request.task_id / fmt::format("iter{}{}", request.iteration, ext),
        dir / request.task_id / ("default" + ext),
        dir / ("default" + ext),
    };
    for (const auto& c : candidates) {
      if (std::filesystem::exists(c)) return c;
    }
    throw Error(Errc::profiler_failure,
                fmt::format("no fixture for task '{}' iteration {} under {}", request.task_id,
                            request.iteration, dir.string()));
  });
}

LaunchPlan FixtureAdapter::plan(const ProfileRequest& request) const {
  LaunchPlan plan;
  plan.argv = request.command;
  plan.raw_source = LaunchPlan::RawSource::fixture;
  plan.raw_file = resolver_(request);
  return plan;
}

ProfileReport FixtureAdapter::parse(std::string_view raw, std::span<const MetricId> requested) const {
  return format_ == Format::perf ? perf_parse(raw, requested) : ncu_parse(raw, requested);
}

ProfileReport collect(const ProfilerAdapter& adapter, const ProfileRequest& request) {
  const auto& caps = adapter.capabilities();
  for (const auto& id : request.metrics) {
    if (!caps.contains(id)) {
      throw Error(Errc::dispatch_error,
                  fmt::format("adapter '{}' cannot collect '{}'", adapter.name(), id.name()));
    }
  }
  if (!request.raw_path.empty() && request.raw_path.has_parent_path()) {
    std::filesystem::create_directories(request.raw_path.parent_path());
  }

  LaunchPlan plan = adapter.plan(request);
  std::string raw;
  if (!plan.argv.empty()) {
    ProcessSpec spec{plan.argv, request.workdir, {}, request.timeout_s};
    ProcessResult result = run_process(spec);
    if (result.timed_out) {
      throw Error(Errc::profile_timeout,
                  fmt::format("profiler '{}' timed out after {}s", adapter.name(), request.timeout_s));
    }
    if (!result.ok()) {
      throw Error(Errc::profiler_failure, fmt::format("profiler '{}' failed ({}): {}", adapter.name(),
                                                      result.describe(), result.stderr_text));
    }
    if (plan.raw_source == LaunchPlan::RawSource::stdout_text) raw = result.stdout_text;
  }
  if (plan.raw_source == LaunchPlan::RawSource::file || plan.raw_source == LaunchPlan::RawSource::fixture) {
    if (!std::filesystem::is_regular_file(plan.raw_file)) {
      throw Error(Errc::profiler_failure,
                  fmt::format("profiler '{}' produced no output at {}", adapter.name(), plan.raw_file.string()));
    }
    raw = util::read_file(plan.raw_file);
  }
  if (!request.raw_path.empty() && plan.raw_source != LaunchPlan::RawSource::file) {
    util::write_file(request.raw_path, raw);
  }

  ProfileReport report = adapter.parse(raw, request.metrics);
  for (const auto& [id, value] : report.values) {
    if (!caps.contains(id)) {
      throw Error(Errc::profiler_failure,
                  fmt::format("adapter '{}' emitted undeclared metric '{}'", adapter.name(), id.name()));
    }
  }
  report.iteration = request.iteration;
  report.raw_artifact = request.raw_path.string();
  return report;
}

AdapterRegistry::AdapterRegistry() {
  add("perf", [](const AdapterOptions& o) {
    return std::make_unique<PerfAdapter>(o.binary.empty() ? "perf" : o.binary);
  });
  add("ncu", [](const AdapterOptions& o) {
    return std::make_unique<NcuAdapter>(o.binary.empty() ? "ncu" : o.binary);
  });
  add("fixture", [](const AdapterOptions& o) {
    auto format = o.fixture_backend == Backend::gpu ? FixtureAdapter::Format::ncu : FixtureAdapter::Format::perf;
    return std::make_unique<FixtureAdapter>(FixtureAdapter::from_directory(format, o.fixture_dir));
  });
}

AdapterRegistry& AdapterRegistry::instance() {
  static AdapterRegistry registry;
  return registry;
}

void AdapterRegistry::add(std::string name, Factory factory) { factories_[std::move(name)] = std::move(factory); }

std::unique_ptr<ProfilerAdapter> AdapterRegistry::create(std::string_view name,
                                                         const AdapterOptions& options) const {
  auto it = factories_.find(name);
  if (it == factories_.end()) {
    throw Error(Errc::configuration_error, fmt::format("unknown profiler adapter '{}'", name));
  }
  return it->second(options);
}

std::vector<std::string> AdapterRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, f] : factories_) out.push_back(name);
  return out;
}

}  // namespace profloop::profiling
