// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace profloop::metrics {

enum class Backend { cpu, gpu, any };

std::string_view to_string(Backend backend);
/// Throws Errc::unknown_backend for anything other than "cpu", "gpu" or "any".
Backend parse_backend(std::string_view text);

enum class Unit { ratio, percent, count, bytes_per_sec, nanoseconds, cycles, dimensionless };
enum class Direction { higher_better, lower_better, neutral };

std::string_view to_string(Unit unit);
std::string_view to_string(Direction direction);

/// Lowercase dotted metric name such as `cpu.ipc`. Identity is the name alone;
/// the backend is carried along for convenience.
class MetricId {
 public:
  MetricId() = default;
  MetricId(std::string name, Backend backend);
  /// Infers the backend from the `cpu.` / `gpu.` prefix (anything else is `any`).
  static MetricId parse(std::string_view name);

  const std::string& name() const noexcept { return name_; }
  Backend backend() const noexcept { return backend_; }

  friend bool operator==(const MetricId& a, const MetricId& b) { return a.name_ == b.name_; }
  friend std::strong_ordering operator<=>(const MetricId& a, const MetricId& b) {
    return a.name_ <=> b.name_;
  }

 private:
  std::string name_;
  Backend backend_ = Backend::any;
};

struct MetricDescriptor {
  MetricId id;
  Unit unit = Unit::dimensionless;
  Direction direction = Direction::neutral;
  bool default_set = false;
  std::string doc;
};

class Catalog {
 public:
  Catalog() = default;
  explicit Catalog(std::vector<MetricDescriptor> descriptors);

  /// The catalog compiled into the binary from data/catalog.json.
  static const Catalog& builtin();
  static Catalog from_json(const nlohmann::json& doc);
  static Catalog load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  const MetricDescriptor* find(std::string_view name) const;
  bool contains(const MetricId& id) const { return find(id.name()) != nullptr; }
  /// Throws Errc::unknown_metric naming the id.
  const MetricDescriptor& at(std::string_view name) const;
  MetricId id(std::string_view name) const { return at(name).id; }

  const std::vector<MetricDescriptor>& descriptors() const noexcept { return descriptors_; }
  std::vector<MetricId> defaults_for(Backend backend) const;

 private:
  std::vector<MetricDescriptor> descriptors_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ProfileReport {
  Backend backend = Backend::cpu;
  std::map<MetricId, double> values;
  int iteration = 0;
  std::string raw_artifact;
  /// 0 means "not reported by the profiler"; the orchestrator fills it from timing.
  double wall_time_ns = 0.0;
  std::vector<std::string> warnings;

  std::optional<double> get(std::string_view name) const;
  bool operator==(const ProfileReport&) const = default;
};

/// Adds cpu.ipc, cpu.llc_miss_rate and cpu.branch_miss_rate when their inputs exist.
void add_derived_metrics(std::map<MetricId, double>& values);

/// Checks catalog membership, wall time, percent/ratio ranges and the top-down sum band.
void validate(const ProfileReport& report, const Catalog& catalog);

inline constexpr int kDefaultWarmupRuns = 5;
inline constexpr int kDefaultTimedRuns = 100;
inline constexpr double kTopdownSumLow = 99.0;
inline constexpr double kTopdownSumHigh = 101.0;

enum class Statistic { median, mean };

double median(std::span<const double> samples);
double mean(std::span<const double> samples);
double aggregate(std::span<const double> samples, Statistic statistic);

struct TimingResult {
  double t_reference_ns = 0.0;
  double t_candidate_ns = 0.0;
  double t_reference_mean_ns = 0.0;
  double t_candidate_mean_ns = 0.0;
  int warmup_runs = kDefaultWarmupRuns;
  int timed_runs = kDefaultTimedRuns;
  std::vector<double> reference_samples;
  std::vector<double> candidate_samples;

  bool operator==(const TimingResult&) const = default;
};

/// t_reference / t_candidate. Throws Errc::invalid_timing unless both are > 0.
double speedup(double t_reference_ns, double t_candidate_ns);
double speedup(const TimingResult& timing);

/// Default metric list for a backend, in the documented order.
std::vector<MetricId> default_metric_set(Backend backend, const Catalog& catalog = Catalog::builtin());
std::vector<MetricId> default_metric_set(std::string_view backend,
                                         const Catalog& catalog = Catalog::builtin());

/// Order-preserving union, defaults first. Unknown extras raise Errc::unknown_metric.
std::vector<MetricId> merge_metric_requests(std::span<const MetricId> defaults,
                                            std::span<const MetricId> extra,
                                            const Catalog& catalog = Catalog::builtin());

struct MetricDelta {
  enum class Side { both, current_only, baseline_only };
  Side side = Side::both;
  std::optional<double> current;
  std::optional<double> baseline;
  double delta = 0.0;  // current - baseline; 0 for one-sided entries

  bool operator==(const MetricDelta&) const = default;
};

std::map<MetricId, MetricDelta> profile_delta(const ProfileReport& current,
                                              const ProfileReport& baseline);

void to_json(nlohmann::json& j, const MetricId& id);
void from_json(const nlohmann::json& j, MetricId& id);
void to_json(nlohmann::json& j, const ProfileReport& report);
void from_json(const nlohmann::json& j, ProfileReport& report);
void to_json(nlohmann::json& j, const TimingResult& timing);
void from_json(const nlohmann::json& j, TimingResult& timing);

}  // namespace profloop::metrics
