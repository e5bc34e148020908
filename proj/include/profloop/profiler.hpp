// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "profloop/metrics.hpp"

namespace profloop::profiling {

using metrics::Backend;
using metrics::Catalog;
using metrics::MetricId;
using metrics::ProfileReport;

struct ProfileRequest {
  std::vector<std::string> command;  // runner argv to wrap; may be empty for pure replay
  std::vector<MetricId> metrics;
  double timeout_s = 120.0;
  std::filesystem::path workdir;
  std::filesystem::path raw_path;  // where the verbatim profiler output is stored
  std::string task_id;
  int iteration = 0;
};

/// How an adapter wants its profiled process launched and where its raw output lands.
struct LaunchPlan {
  enum class RawSource { stdout_text, file, fixture };
  std::vector<std::string> argv;
  RawSource raw_source = RawSource::stdout_text;
  std::filesystem::path raw_file;  // for RawSource::file and RawSource::fixture
};

class ProfilerAdapter {
 public:
  virtual ~ProfilerAdapter() = default;

  virtual std::string name() const = 0;
  virtual Backend backend() const = 0;
  virtual const std::set<MetricId>& capabilities() const = 0;
  virtual LaunchPlan plan(const ProfileRequest& request) const = 0;
  virtual ProfileReport parse(std::string_view raw, std::span<const MetricId> requested) const = 0;
};

// Parsers are pure functions of their inputs.

/// Parses `perf stat -x,` output (optionally with --topdown metric columns).
ProfileReport perf_parse(std::string_view raw_text, std::span<const MetricId> requested);

/// Maps a profiler-native name (perf event, top-down label or NCU column) to a
/// catalog metric, if one is known.
std::optional<MetricId> metric_for_native_name(std::string_view name);

/// Static NCU column -> metric alias table, in file order.
class NcuAliasTable {
 public:
  static const NcuAliasTable& builtin();
  static NcuAliasTable from_json(const nlohmann::ordered_json& doc);

  std::optional<MetricId> metric_for(std::string_view column) const;
  /// First column name that maps to `metric`, if any.
  std::optional<std::string> column_for(const MetricId& metric) const;
  const std::vector<std::pair<std::string, MetricId>>& entries() const noexcept { return entries_; }

 private:
  std::vector<std::pair<std::string, MetricId>> entries_;
};

/// Parses an NCU `--csv` export. Multiple launches are aggregated: percent-like
/// metrics by kernel-time-weighted mean, counts and times by sum.
ProfileReport ncu_parse(std::string_view raw_csv, std::span<const MetricId> requested,
                        const NcuAliasTable& aliases = NcuAliasTable::builtin(),
                        const Catalog& catalog = Catalog::builtin());

class PerfAdapter : public ProfilerAdapter {
 public:
  explicit PerfAdapter(std::string perf_binary = "perf", const Catalog& catalog = Catalog::builtin());

  std::string name() const override { return "perf"; }
  Backend backend() const override { return Backend::cpu; }
  const std::set<MetricId>& capabilities() const override { return capabilities_; }
  LaunchPlan plan(const ProfileRequest& request) const override;
  ProfileReport parse(std::string_view raw, std::span<const MetricId> requested) const override {
    return perf_parse(raw, requested);
  }

 private:
  std::string binary_;
  std::set<MetricId> capabilities_;
};

class NcuAdapter : public ProfilerAdapter {
 public:
  explicit NcuAdapter(std::string ncu_binary = "ncu", const Catalog& catalog = Catalog::builtin());

  std::string name() const override { return "ncu"; }
  Backend backend() const override { return Backend::gpu; }
  const std::set<MetricId>& capabilities() const override { return capabilities_; }
  LaunchPlan plan(const ProfileRequest& request) const override;
  ProfileReport parse(std::string_view raw, std::span<const MetricId> requested) const override {
    return ncu_parse(raw, requested, NcuAliasTable::builtin(), *catalog_);
  }

 private:
  std::string binary_;
  const Catalog* catalog_;
  std::set<MetricId> capabilities_;
};

/// Replays stored profiler output instead of running a profiler. The request's
/// command, if any, is still executed so timeouts and exit codes behave as live.
class FixtureAdapter : public ProfilerAdapter {
 public:
  enum class Format { perf, ncu };
  using Resolver = std::function<std::filesystem::path(const ProfileRequest&)>;

  FixtureAdapter(Format format, Resolver resolver);
  /// Iteration i replays files[min(i, size-1)].
  FixtureAdapter(Format format, std::vector<std::filesystem::path> files);
  /// Looks up <dir>/<task>/iter<N>.<ext>, then <dir>/<task>/default.<ext>, then <dir>/default.<ext>.
  static FixtureAdapter from_directory(Format format, std::filesystem::path dir);

  std::string name() const override { return "fixture"; }
  Backend backend() const override { return format_ == Format::perf ? Backend::cpu : Backend::gpu; }
  const std::set<MetricId>& capabilities() const override { return capabilities_; }
  LaunchPlan plan(const ProfileRequest& request) const override;
  ProfileReport parse(std::string_view raw, std::span<const MetricId> requested) const override;

 private:
  Format format_;
  Resolver resolver_;
  std::set<MetricId> capabilities_;
};

/// Runs the profiler-wrapped command, stores the raw output at request.raw_path,
/// then parses it. Errors: dispatch_error, profile_timeout, profiler_failure, parse errors.
ProfileReport collect(const ProfilerAdapter& adapter, const ProfileRequest& request);

struct AdapterOptions {
  std::string binary;  // profiler executable override
  std::filesystem::path fixture_dir;
  Backend fixture_backend = Backend::cpu;
};

/// Name -> factory registry. Ships with "perf", "ncu" and "fixture".
class AdapterRegistry {
 public:
  using Factory = std::function<std::unique_ptr<ProfilerAdapter>(const AdapterOptions&)>;

  static AdapterRegistry& instance();
  void add(std::string name, Factory factory);
  std::unique_ptr<ProfilerAdapter> create(std::string_view name, const AdapterOptions& options) const;
  std::vector<std::string> names() const;

 private:
  AdapterRegistry();
  std::map<std::string, Factory, std::less<>> factories_;
};

}  // namespace profloop::profiling
