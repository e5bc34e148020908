// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>

#include "corpus.hpp"
#include "profloop/error.hpp"
#include "profloop/profiler.hpp"
#include "test_support.hpp"

using namespace profloop;
using namespace profloop::profiling;
using profloop::testing::TempDir;

namespace {

void report_failures(const testing::CorpusOutcome& outcome) {
  for (const auto& f : outcome.failures) MESSAGE(f);
}

}  // namespace

TEST_SUITE("profiler") {

TEST_CASE("perf fixture corpus parses to the hand-verified values") {
  auto outcome = testing::check_corpus(testing::fixture_dir() / "perf", testing::CorpusFormat::perf);
  report_failures(outcome);
  CHECK(outcome.files >= 10);
  CHECK(outcome.error_files >= 3);
  CHECK(outcome.failures.empty());
}

TEST_CASE("ncu fixture corpus parses to the hand-verified values") {
  auto outcome = testing::check_corpus(testing::fixture_dir() / "ncu", testing::CorpusFormat::ncu);
  report_failures(outcome);
  CHECK(outcome.files >= 10);
  CHECK(outcome.error_files >= 3);
  CHECK(outcome.failures.empty());
}

TEST_CASE("perf parsing is a pure function of its input") {
  auto raw = util::read_file(testing::fixture_dir() / "perf" / "multiplexed.csv");
  auto req = metrics::default_metric_set(metrics::Backend::cpu);
  CHECK(perf_parse(raw, req) == perf_parse(raw, req));
}

TEST_CASE("perf not-counted events become warnings rather than zeros") {
  auto raw = util::read_file(testing::fixture_dir() / "perf" / "not_counted.csv");
  auto report = perf_parse(raw, metrics::default_metric_set(metrics::Backend::cpu));
  REQUIRE(report.warnings.size() == 2);
  CHECK(!report.get("cpu.frontend_bound"));
  for (const auto& [id, v] : report.values) CHECK(v == v);
}

TEST_CASE("perf parse errors carry the line number and text") {
  auto raw = util::read_file(testing::fixture_dir() / "perf" / "malformed_fields.csv");
  try {
    perf_parse(raw, metrics::default_metric_set(metrics::Backend::cpu));
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.code() == Errc::parse_error);
    CHECK(e.line() == 2);
    CHECK(!e.text().empty());
  }
}

TEST_CASE("ncu multi-launch aggregation sums times and time-weights percentages") {
  auto raw = util::read_file(testing::fixture_dir() / "ncu" / "multi_launch.csv");
  auto report = ncu_parse(raw, metrics::default_metric_set(metrics::Backend::gpu));
  CHECK(report.get("gpu.kernel_time") == 8000.0);
  CHECK(report.get("gpu.occupancy") == 72.5);
  CHECK(report.wall_time_ns == 8000.0);
}

TEST_CASE("ncu only reads the requested columns") {
  auto raw = util::read_file(testing::fixture_dir() / "ncu" / "single_raw.csv");
  std::vector<metrics::MetricId> req = {metrics::MetricId::parse("gpu.occupancy")};
  auto report = ncu_parse(raw, req);
  CHECK(report.get("gpu.occupancy") == 87.5);
  CHECK(!report.get("gpu.registers_per_thread"));
}

TEST_CASE("native names map onto catalog metrics") {
  CHECK(metric_for_native_name("instructions")->name() == "cpu.instructions_retired");
  CHECK(metric_for_native_name("cycles")->name() == "cpu.cycles");
  CHECK(metric_for_native_name("tma_backend_bound")->name() == "cpu.backend_bound");
  CHECK(metric_for_native_name("launch__registers_per_thread")->name() == "gpu.registers_per_thread");
  CHECK(metric_for_native_name("gpu__time_duration.sum")->name() == "gpu.kernel_time");
  CHECK(!metric_for_native_name("definitely-not-a-counter"));
}

TEST_CASE("ncu alias table lists every default gpu metric") {
  const auto& aliases = NcuAliasTable::builtin();
  for (const auto& id : metrics::default_metric_set(metrics::Backend::gpu)) {
    auto column = aliases.column_for(id);
    REQUIRE(column);
    CHECK(aliases.metric_for(*column) == id);
  }
}

TEST_CASE("perf adapter plan wraps the runner command") {
  PerfAdapter perf("perf");
  ProfileRequest req;
  req.command = {"./runner", "--mode", "time"};
  req.metrics = metrics::default_metric_set(metrics::Backend::cpu);
  auto plan = perf.plan(req);
  REQUIRE(plan.argv.size() > req.command.size());
  CHECK(plan.argv.front() == "perf");
  CHECK(std::equal(req.command.begin(), req.command.end(), plan.argv.end() - 3));
  CHECK(std::find(plan.argv.begin(), plan.argv.end(), "-x,") != plan.argv.end());
}

TEST_CASE("ncu adapter plan requests raw csv for the mapped columns") {
  NcuAdapter ncu("ncu");
  ProfileRequest req;
  req.command = {"./runner"};
  req.metrics = metrics::default_metric_set(metrics::Backend::gpu);
  auto plan = ncu.plan(req);
  CHECK(plan.argv.front() == "ncu");
  CHECK(std::find(plan.argv.begin(), plan.argv.end(), "--csv") != plan.argv.end());
  CHECK(plan.argv.back() == "./runner");
}

TEST_CASE("collect rejects metrics the adapter cannot gather") {
  PerfAdapter perf("perf");
  ProfileRequest req;
  req.metrics = {metrics::MetricId::parse("gpu.occupancy")};
  try {
    collect(perf, req);
    FAIL("expected dispatch_error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::dispatch_error);
  }
}

TEST_CASE("collect stores the raw output and parses it") {
  TempDir tmp;
  FixtureAdapter fixture(FixtureAdapter::Format::perf,
                         std::vector<std::filesystem::path>{testing::fixture_dir() / "perf" / "listing1_round1.csv"});
  ProfileRequest req;
  req.metrics = metrics::default_metric_set(metrics::Backend::cpu);
  req.raw_path = tmp / "raw" / "profile.raw";
  auto report = collect(fixture, req);
  CHECK(report.get("cpu.backend_bound") == 61.76);
  CHECK(util::read_file(req.raw_path) == util::read_file(testing::fixture_dir() / "perf" / "listing1_round1.csv"));
}

TEST_CASE("collect kills a profiled command that overruns its timeout") {
  TempDir tmp;
  FixtureAdapter fixture(FixtureAdapter::Format::perf,
                         std::vector<std::filesystem::path>{testing::fixture_dir() / "perf" / "listing1_round1.csv"});
  ProfileRequest req;
  req.command = {"sleep", "5"};
  req.timeout_s = 0.2;
  req.metrics = metrics::default_metric_set(metrics::Backend::cpu);
  req.raw_path = tmp / "profile.raw";
  try {
    collect(fixture, req);
    FAIL("expected profile_timeout");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::profile_timeout);
  }
}

TEST_CASE("a failing profiled command is a profiler failure") {
  TempDir tmp;
  FixtureAdapter fixture(FixtureAdapter::Format::perf,
                         std::vector<std::filesystem::path>{testing::fixture_dir() / "perf" / "listing1_round1.csv"});
  ProfileRequest req;
  req.command = {"false"};
  req.metrics = metrics::default_metric_set(metrics::Backend::cpu);
  req.raw_path = tmp / "profile.raw";
  try {
    collect(fixture, req);
    FAIL("expected profiler_failure");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::profiler_failure);
  }
}

TEST_CASE("fixture directories resolve per iteration, then per task, then globally") {
  TempDir tmp;
  std::filesystem::create_directories(tmp / "t");
  util::write_file(tmp / "t" / "iter2.perf.csv", "a");
  util::write_file(tmp / "t" / "default.perf.csv", "b");
  util::write_file(tmp / "default.perf.csv", "c");
  auto adapter = FixtureAdapter::from_directory(FixtureAdapter::Format::perf, tmp.path());
  ProfileRequest req;
  req.task_id = "t";
  req.iteration = 2;
  CHECK(adapter.plan(req).raw_file == tmp / "t" / "iter2.perf.csv");
  req.iteration = 3;
  CHECK(adapter.plan(req).raw_file == tmp / "t" / "default.perf.csv");
  req.task_id = "other";
  CHECK(adapter.plan(req).raw_file == tmp / "default.perf.csv");
  std::filesystem::remove(tmp / "default.perf.csv");
  try {
    adapter.plan(req);
    FAIL("expected profiler_failure");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::profiler_failure);
  }
}

TEST_CASE("adapter registry ships perf, ncu and fixture") {
  auto names = AdapterRegistry::instance().names();
  for (const char* n : {"perf", "ncu", "fixture"}) {
    CHECK(std::find(names.begin(), names.end(), n) != names.end());
  }
  CHECK(AdapterRegistry::instance().create("perf", {})->backend() == metrics::Backend::cpu);
  CHECK(AdapterRegistry::instance().create("ncu", {})->backend() == metrics::Backend::gpu);
  CHECK_THROWS_AS(AdapterRegistry::instance().create("vtune", {}), Error);
}

}  // TEST_SUITE
