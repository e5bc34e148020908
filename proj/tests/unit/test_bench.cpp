// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <random>

#include "profloop/bench.hpp"
#include "profloop/error.hpp"
#include "test_support.hpp"

using namespace profloop;
using namespace profloop::bench;
using orchestrator::TaskStatus;

namespace {

TaskEntry entry(std::string id, bool success, std::optional<double> speedup = std::nullopt,
                Category category = Category::activation, TaskStatus status = TaskStatus::completed) {
  return {std::move(id), category, status, success, speedup};
}

/// `total` tasks of which `correct` succeed and `fast` beat the reference.
std::vector<TaskEntry> suite_of(int total, int correct, int fast) {
  std::vector<TaskEntry> out;
  for (int i = 0; i < total; ++i) {
    auto id = fmt::format("task{:04}", i);
    auto category = kAllCategories[static_cast<std::size_t>(i) % std::size(kAllCategories)];
    if (i < fast) {
      out.push_back(entry(id, true, 1.5, category));
    } else if (i < correct) {
      out.push_back(entry(id, true, 0.8, category));
    } else {
      out.push_back(entry(id, false, std::nullopt, category));
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("bench") {

TEST_CASE("success and Fast1 reproduce the reference suite rows") {
  struct Row {
    int correct, fast;
    double success_rate, fast1_rate;
  };
  for (auto row : {Row{490, 143, 49.0, 14.3}, Row{920, 322, 92.0, 32.2}, Row{920, 598, 92.0, 59.8}}) {
    auto report = evaluate_suite(suite_of(1000, row.correct, row.fast));
    CHECK(report.overall.tasks == 1000);
    CHECK(report.overall.success_rate == doctest::Approx(row.success_rate).epsilon(1e-12));
    CHECK(report.overall.fast1_rate == doctest::Approx(row.fast1_rate).epsilon(1e-12));
  }
}

TEST_CASE("speedup means over successful tasks") {
  auto report = evaluate_suite(std::vector<TaskEntry>{entry("a", true, 2.0), entry("b", true, 8.0), entry("c", false)});
  CHECK(*report.overall.geomean_speedup == doctest::Approx(4.0));
  CHECK(*report.overall.mean_speedup == doctest::Approx(5.0));

  EvaluateOptions all;
  all.speedup_scope = SpeedupScope::all_tasks;
  auto wide = evaluate_suite(std::vector<TaskEntry>{entry("a", true, 2.0), entry("b", true, 8.0), entry("c", false)},
                             all);
  CHECK(*wide.overall.geomean_speedup == doctest::Approx(std::cbrt(16.0)));
  CHECK(*wide.overall.mean_speedup == doctest::Approx(11.0 / 3.0));

  auto none = evaluate_suite(std::vector<TaskEntry>{entry("a", false)});
  CHECK(!none.overall.geomean_speedup);
  CHECK(none.overall.success_rate == 0.0);
}

TEST_CASE("parity with the reference is not fast unless inclusive") {
  std::vector<TaskEntry> entries = {entry("a", true, 1.0), entry("b", true, 1.0)};
  CHECK(evaluate_suite(entries).overall.fast1_rate == 0.0);
  EvaluateOptions inclusive;
  inclusive.fast1_inclusive = true;
  CHECK(evaluate_suite(entries, inclusive).overall.fast1_rate == 100.0);
}

TEST_CASE("infrastructure failures leave the denominators") {
  std::vector<TaskEntry> entries = {entry("a", true, 2.0), entry("b", false),
                                    entry("c", false, std::nullopt, Category::matmul, TaskStatus::infrastructure_failed)};
  auto report = evaluate_suite(entries);
  CHECK(report.overall.tasks == 2);
  CHECK(report.overall.success_rate == 50.0);
  CHECK(report.excluded == std::vector<std::string>{"c"});
  CHECK(report.by_category.at(Category::matmul).tasks == 0);

  EvaluateOptions keep;
  keep.exclude_infrastructure = false;
  auto kept = evaluate_suite(entries, keep);
  CHECK(kept.overall.tasks == 3);
  CHECK(kept.excluded.empty());
  CHECK(report_render(report, Format::table).find("excluded (infrastructure): c") != std::string::npos);
}

TEST_CASE("per-category aggregates cover all six categories") {
  auto report = evaluate_suite(suite_of(60, 30, 12));
  CHECK(report.by_category.size() == 6);
  int tasks = 0, successes = 0;
  for (const auto& [category, a] : report.by_category) {
    tasks += a.tasks;
    successes += a.successes;
  }
  CHECK(tasks == 60);
  CHECK(successes == 30);
}

TEST_CASE("aggregates do not depend on input order") {
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> speed(0.1, 5.0);
  std::bernoulli_distribution coin(0.6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<TaskEntry> entries;
    for (int i = 0; i < 40; ++i) {
      bool ok = coin(rng);
      entries.push_back(entry(fmt::format("t{}", i), ok, ok ? std::optional<double>(speed(rng)) : std::nullopt,
                              kAllCategories[static_cast<std::size_t>(i) % 6]));
    }
    auto base = evaluate_suite(entries);
    std::shuffle(entries.begin(), entries.end(), rng);
    auto shuffled = evaluate_suite(entries);
    CHECK(shuffled.overall.tasks == base.overall.tasks);
    CHECK(shuffled.overall.successes == base.overall.successes);
    CHECK(shuffled.overall.fast1 == base.overall.fast1);
    CHECK(*shuffled.overall.geomean_speedup == doctest::Approx(*base.overall.geomean_speedup).epsilon(1e-12));
    CHECK(shuffled.per_task == base.per_task);
  }
}

TEST_CASE("reports round-trip through JSON and render as CSV") {
  auto report = evaluate_suite(suite_of(12, 8, 3));
  auto j = report_to_json(report);
  CHECK(j["schema_version"] == 1);
  CHECK(report_from_json(j) == report);
  CHECK(report_from_json(nlohmann::json::parse(report_render(report, Format::json))) == report);
  auto csv = report_render(report, Format::csv);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);
  CHECK(csv.starts_with("task_id,category,status,success,best_speedup,fast1\n"));
  CHECK(csv.find("task0000,") != std::string::npos);
  CHECK_THROWS_AS(report_from_json(nlohmann::json::object()), Error);
  CHECK(parse_format("csv") == Format::csv);
  CHECK_THROWS_AS(parse_format("xml"), Error);
}

TEST_CASE("an empty suite is rejected") {
  try {
    evaluate_suite(std::vector<TaskEntry>{});
    FAIL("expected invalid_argument");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::invalid_argument);
  }
}

TEST_CASE("suite results load from a state directory") {
  testing::TempDir tmp;
  for (auto [id, speedup] : {std::pair{"b", 1.5}, std::pair{"a", 0.5}}) {
    orchestrator::TaskResult r;
    r.task_id = id;
    r.category = Category::pooling_reduction;
    r.success = true;
    r.attempts_used = 1;
    BestRecord best;
    best.candidate = {"k", 0, "cpp"};
    best.verification.status = verify::Status::correct;
    best.verification.timing = metrics::TimingResult{};
    best.verification.timing->t_reference_ns = 100 * speedup;
    best.verification.timing->t_candidate_ns = 100;
    best.speedup = speedup;
    r.best = best;
    std::filesystem::create_directories(tmp / id);
    util::write_file(orchestrator::result_path(tmp.path(), id), nlohmann::json(r).dump());
  }
  std::filesystem::create_directories(tmp / "stray");
  auto results = load_suite_results(tmp.path());
  REQUIRE(results.size() == 2);
  CHECK(results[0].task_id == "a");
  auto report = evaluate_suite(results);
  CHECK(report.overall.fast1 == 1);
  CHECK(report.by_category.at(Category::pooling_reduction).tasks == 2);
  CHECK_THROWS_AS(load_suite_results(tmp / "missing"), Error);
}

}  // TEST_SUITE
