// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <random>

#include "profloop/error.hpp"
#include "profloop/orchestrator.hpp"
#include "test_support.hpp"

using namespace profloop;
using namespace profloop::orchestrator;
using profloop::testing::TempDir;
using verify::Status;

namespace {

agents::HardwareSpec cpu_hw() {
  agents::HardwareSpec hw;
  hw.backend = metrics::Backend::cpu;
  hw.core_or_sm_count = 8;
  hw.model = "Test CPU";
  return hw;
}

std::filesystem::path listing1() { return testing::fixture_dir() / "perf" / "listing1_round1.csv"; }

/// Scripted LLM, fake verifier and counting profiler wired into Dependencies.
struct Harness {
  explicit Harness(const std::vector<std::string>& sources, bool with_profiler = true)
      : client(testing::scripted_coder(sources)),
        session(client, testing::fast_retry()),
        profiler(profiling::FixtureAdapter::Format::perf, listing1()) {
    deps.session = &session;
    deps.verifier = &verifier;
    deps.profiler = with_profiler ? &profiler : nullptr;
    deps.hardware = cpu_hw();
  }

  std::shared_ptr<llm::ScriptedClient> client;
  llm::Session session;
  testing::FakeVerifier verifier;
  testing::CountingProfiler profiler;
  Dependencies deps;
};

RunOptions options_for(const TempDir& tmp, std::optional<int> budget = std::nullopt) {
  RunOptions o;
  o.state_dir = tmp.path();
  o.max_attempts = budget;
  return o;
}

std::string fake(Status s, double speedup = 1.0) { return testing::fake_source(s, speedup); }

}  // namespace

TEST_SUITE("orchestrator") {

TEST_CASE("build error, improvement, regression keeps the best at iteration 1") {
  TempDir tmp;
  Harness h({fake(Status::build_error), fake(Status::correct, 1.2), fake(Status::correct, 0.9)});
  auto result = run_task(testing::make_task("t", Category::activation, metrics::Backend::cpu, 3), h.deps,
                         options_for(tmp));
  REQUIRE(result.records.size() == 3);
  CHECK(result.status == TaskStatus::completed);
  CHECK(result.success);
  CHECK(result.attempts_used == 3);
  REQUIRE(result.best);
  CHECK(result.best->achieved_at_iteration == 1);
  CHECK(result.best->speedup == doctest::Approx(1.2));

  CHECK(result.records[0].diagnosis->verdict == agents::Verdict::correctness_failure);
  CHECK(!result.records[0].promoted_to_best);
  CHECK(result.records[1].diagnosis->verdict == agents::Verdict::first_measurement);
  CHECK(result.records[1].promoted_to_best);
  CHECK(result.records[2].diagnosis->verdict == agents::Verdict::regression);
  CHECK(!result.records[2].promoted_to_best);

  CHECK(h.session.calls(llm::Tag::coder_generate) == 1);
  CHECK(h.session.calls(llm::Tag::coder_refine) == 2);
  CHECK(h.session.calls(llm::Tag::conductor) == 3);
  CHECK(h.profiler.plans() == 2);
  CHECK(!result.records[0].profile);
  CHECK(result.records[1].profile);

  auto stored = load_result(tmp.path(), "t");
  REQUIRE(stored);
  CHECK(*stored == result);
  CHECK(load_records(tmp.path(), "t") == result.records);
}

TEST_CASE("refine after an improvement sees the promoted candidate as best") {
  TempDir tmp;
  Harness h({fake(Status::correct, 1.5), fake(Status::correct, 2.0), fake(Status::correct, 1.1)});
  run_task(testing::make_task("t"), h.deps, options_for(tmp, 3));
  auto requests = h.client->requests();
  std::vector<llm::ChatRequest> refines;
  for (const auto& r : requests) {
    if (r.tag == llm::Tag::coder_refine) refines.push_back(r);
  }
  REQUIRE(refines.size() == 2);
  auto best_of_second = refines[1].user_prompt.substr(refines[1].user_prompt.find("Historical best:"));
  CHECK(best_of_second.find("speedup=2") != std::string::npos);

  std::vector<llm::ChatRequest> conductors;
  for (const auto& r : requests) {
    if (r.tag == llm::Tag::conductor) conductors.push_back(r);
  }
  REQUIRE(conductors.size() == 3);
  auto best_section = conductors[1].user_prompt.substr(conductors[1].user_prompt.find("## 5. Historical best"));
  CHECK(best_section.find("speedup=1.5") != std::string::npos);
}

TEST_CASE("a task with no correct candidate fails and has no best") {
  TempDir tmp;
  Harness h({fake(Status::build_error), fake(Status::runtime_error), fake(Status::incorrect_output)});
  auto result = run_task(testing::make_task("t"), h.deps, options_for(tmp, 3));
  CHECK(!result.success);
  CHECK(!result.best);
  CHECK(result.attempts_used == 3);
  CHECK(h.profiler.plans() == 0);
  for (const auto& r : result.records) {
    CHECK(!r.speedup);
    CHECK(!r.profile);
    CHECK(r.diagnosis->verdict == agents::Verdict::correctness_failure);
  }
}

TEST_CASE("a coder reply without code is recorded and the next attempt regenerates") {
  TempDir tmp;
  auto client = std::make_shared<llm::ScriptedClient>(
      std::vector<llm::ScriptedClient::Step>{{llm::Tag::coder_generate, "I cannot help with that.\n```cpp\n```\n"},
                                             {llm::Tag::coder_generate, testing::fenced(fake(Status::correct, 1.3))}},
      std::vector<llm::ScriptedClient::Rule>{{llm::Tag::conductor, "", testing::conductor_reply()}});
  llm::Session session(client, testing::fast_retry());
  testing::FakeVerifier verifier;
  Dependencies deps;
  deps.session = &session;
  deps.verifier = &verifier;
  deps.hardware = cpu_hw();
  auto result = run_task(testing::make_task("t"), deps, options_for(tmp, 2));
  REQUIRE(result.records.size() == 2);
  CHECK(result.records[0].candidate.source.empty());
  CHECK(result.records[0].verification.status == Status::build_error);
  CHECK(!result.records[0].diagnosis);
  CHECK(verifier.calls() == 1);
  CHECK(result.best->speedup == doctest::Approx(1.3));
  CHECK(session.calls(llm::Tag::coder_generate) == 2);
}

TEST_CASE("profiler failures become warnings and the loop continues") {
  TempDir tmp;
  Harness h({fake(Status::correct, 1.1), fake(Status::correct, 1.4)});
  profiling::FixtureAdapter missing(profiling::FixtureAdapter::Format::perf,
                                    std::vector<std::filesystem::path>{tmp / "absent.csv"});
  h.deps.profiler = &missing;
  auto result = run_task(testing::make_task("t"), h.deps, options_for(tmp, 2));
  CHECK(result.status == TaskStatus::completed);
  CHECK(result.best->speedup == doctest::Approx(1.4));
  for (const auto& r : result.records) {
    CHECK(!r.profile);
    REQUIRE(r.warnings.size() == 1);
    CHECK(r.warnings[0].starts_with("profiling failed"));
  }
}

TEST_CASE("profiles carry extra metrics requested by the previous diagnosis") {
  TempDir tmp;
  auto client = testing::scripted_coder({fake(Status::correct, 1.1), fake(Status::correct, 1.2)},
                                        testing::conductor_reply({"look at caches"}, {"cpu.llc_miss_rate"}));
  llm::Session session(client, testing::fast_retry());
  testing::FakeVerifier verifier;
  auto fixture = tmp / "with_llc.csv";
  util::write_file(fixture, util::read_file(listing1()) + "4100,,LLC-loads,1203311,100.00,,\n"
                                                          "1025,,LLC-load-misses,1203311,100.00,25.00,of all LL-cache accesses\n");
  testing::CountingProfiler profiler(profiling::FixtureAdapter::Format::perf, fixture);
  Dependencies deps{&session, &verifier, &profiler, nullptr, cpu_hw(), nullptr, nullptr};
  auto result = run_task(testing::make_task("t"), deps, options_for(tmp, 2));
  auto llc = metrics::MetricId::parse("cpu.llc_miss_rate");
  CHECK(!result.records[0].profile->values.contains(llc));
  CHECK(result.records[1].profile->values.contains(llc));
  CHECK(result.records[0].profile->raw_artifact == "t/iter0/profile.raw");
}

TEST_CASE("the target speedup stops the loop early") {
  TempDir tmp;
  Harness h({fake(Status::correct, 0.8), fake(Status::correct, 2.5), fake(Status::correct, 3.0)});
  auto options = options_for(tmp, 3);
  options.target_speedup = 2.0;
  auto result = run_task(testing::make_task("t"), h.deps, options);
  CHECK(result.attempts_used == 2);
  CHECK(result.best->speedup == doctest::Approx(2.5));
}

TEST_CASE("provider outages abort the task and keep the persisted records") {
  TempDir tmp;
  auto client = std::make_shared<llm::ScriptedClient>(
      std::vector<llm::ScriptedClient::Step>{
          {llm::Tag::coder_generate, testing::fenced(fake(Status::correct, 1.5))},
          {llm::Tag::coder_refine, "", llm::ScriptedClient::Failure::transport},
          {llm::Tag::coder_refine, "", llm::ScriptedClient::Failure::transport}},
      std::vector<llm::ScriptedClient::Rule>{{llm::Tag::conductor, "", testing::conductor_reply()}});
  llm::Session session(client, testing::fast_retry());
  testing::FakeVerifier verifier;
  Dependencies deps{&session, &verifier, nullptr, nullptr, cpu_hw(), nullptr, nullptr};
  auto result = run_task(testing::make_task("t"), deps, options_for(tmp, 4));
  CHECK(result.status == TaskStatus::aborted);
  CHECK(result.records.size() == 1);
  CHECK(result.error.find("iteration 1") != std::string::npos);
  CHECK(result.success);
  CHECK(load_records(tmp.path(), "t").size() == 1);
}

TEST_CASE("resuming after a crash replays no LLM calls and matches an uninterrupted run") {
  std::vector<std::string> sources = {fake(Status::build_error), fake(Status::correct, 1.2),
                                      fake(Status::correct, 0.9), fake(Status::correct, 1.7)};
  TempDir full_dir;
  Harness full(sources);
  auto expected = run_task(testing::make_task("t", Category::activation, metrics::Backend::cpu, 4), full.deps,
                           options_for(full_dir));

  for (int crash_after = 0; crash_after < 3; ++crash_after) {
    TempDir tmp;
    struct Crash {};
    Harness first(sources);
    auto options = options_for(tmp);
    options.on_persisted = [&](const IterationRecord& r) {
      if (r.iteration == crash_after) throw Crash{};
    };
    auto task = testing::make_task("t", Category::activation, metrics::Backend::cpu, 4);
    CHECK_THROWS_AS(run_task(task, first.deps, options), Crash);
    CHECK(!load_result(tmp.path(), "t"));
    int calls_before = first.session.total_calls();

    std::vector<std::string> remaining(sources.begin() + crash_after + 1, sources.end());
    Harness second({});
    for (const auto& s : remaining) second.client->push({llm::Tag::coder_refine, testing::fenced(s)});
    options.on_persisted = nullptr;
    auto resumed = resume_task(task, second.deps, options);

    CHECK(calls_before + second.session.total_calls() == full.session.total_calls());
    CHECK(second.session.calls(llm::Tag::coder_generate) == 0);
    REQUIRE(resumed.records.size() == expected.records.size());
    for (std::size_t i = 0; i < resumed.records.size(); ++i) {
      auto a = resumed.records[i], b = expected.records[i];
      if (a.profile) a.profile->raw_artifact.clear();
      if (b.profile) b.profile->raw_artifact.clear();
      CHECK(a == b);
    }
    CHECK(resumed.best == expected.best);
  }
}

TEST_CASE("a completed task is returned from disk without LLM traffic") {
  TempDir tmp;
  Harness h({fake(Status::correct, 1.5)});
  auto first = run_task(testing::make_task("t"), h.deps, options_for(tmp, 1));
  Harness idle({});
  auto again = resume_task(testing::make_task("t"), idle.deps, options_for(tmp, 1));
  CHECK(again == first);
  CHECK(idle.session.total_calls() == 0);
  CHECK(idle.verifier.calls() == 0);
}

TEST_CASE("tampered records are reported as resume errors naming the iteration") {
  TempDir tmp;
  Harness h({fake(Status::correct, 1.5), fake(Status::correct, 1.6)});
  run_task(testing::make_task("t"), h.deps, options_for(tmp, 2));
  std::filesystem::remove(result_path(tmp.path(), "t"));
  util::write_file(record_path(tmp.path(), "t", 1), "{\"iteration\": 1, \"candidate\": 7}");
  Harness again({});
  try {
    resume_task(testing::make_task("t"), again.deps, options_for(tmp, 3));
    FAIL("expected resume_error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::resume_error);
    CHECK(std::string(e.what()).find("iteration 1") != std::string::npos);
  }

  auto rec = load_record(tmp.path(), "t", 0);
  rec.verification.status = Status::build_error;
  rec.verification.timing.reset();
  util::write_file(record_path(tmp.path(), "t", 0), nlohmann::json(rec).dump());
  CHECK_THROWS_AS(load_record(tmp.path(), "t", 0), Error);
}

TEST_CASE("random trajectories keep the best monotone and consistent with the records") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> status_dist(0, 3);
  std::uniform_real_distribution<double> speed(0.2, 4.0);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<std::string> sources;
    for (int i = 0; i < 6; ++i) {
      auto s = static_cast<Status>(status_dist(rng));
      sources.push_back(fake(s, s == Status::correct ? speed(rng) : 1.0));
    }
    TempDir tmp;
    Harness h(sources);
    auto result = run_task(testing::make_task("t"), h.deps, options_for(tmp, 6));
    CHECK(result.attempts_used <= 6);
    CHECK(fold_best(result.records) == result.best);
    double running = 0;
    int profiled = 0;
    for (const auto& r : result.records) {
      CHECK(r.profile.has_value() == r.verification.correct());
      if (r.profile) ++profiled;
      if (r.promoted_to_best) {
        CHECK(*r.speedup > running);
        running = *r.speedup;
      } else if (r.speedup) {
        CHECK(*r.speedup <= running);
      }
    }
    CHECK(h.profiler.plans() == profiled);
    CHECK(result.success == result.best.has_value());
  }
}

TEST_CASE("fold_best prefers the earliest of equal speedups") {
  std::vector<IterationRecord> records(3);
  for (int i = 0; i < 3; ++i) {
    records[i].iteration = i;
    records[i].verification.status = Status::correct;
    metrics::TimingResult t;
    t.t_reference_ns = 100;
    t.t_candidate_ns = i == 0 ? 100 : 50;
    records[i].verification.timing = t;
  }
  auto best = fold_best(records);
  REQUIRE(best);
  CHECK(best->achieved_at_iteration == 1);
  CHECK(best->speedup == 2.0);
  CHECK(!fold_best({}));
}

TEST_CASE("suites keep input order under parallel workers") {
  TempDir tmp;
  auto client = std::make_shared<llm::ScriptedClient>(
      std::vector<llm::ScriptedClient::Step>{},
      std::vector<llm::ScriptedClient::Rule>{{llm::Tag::conductor, "", testing::conductor_reply()},
                                             {std::nullopt, "", testing::fenced(fake(Status::correct, 1.25))}});
  llm::Session session(client, testing::fast_retry());
  testing::FakeVerifier verifier;
  Dependencies deps{&session, &verifier, nullptr, nullptr, cpu_hw(), nullptr, nullptr};
  std::vector<TaskSpec> tasks;
  for (int i = 0; i < 6; ++i) tasks.push_back(testing::make_task(fmt::format("task{}", i)));
  auto results = run_suite(tasks, deps, options_for(tmp, 2), 3);
  REQUIRE(results.size() == 6);
  for (int i = 0; i < 6; ++i) {
    CHECK(results[i].task_id == fmt::format("task{}", i));
    CHECK(results[i].attempts_used == 2);
  }
  CHECK(verifier.calls() == 12);
}

TEST_CASE("task results round-trip through JSON") {
  TempDir tmp;
  Harness h({fake(Status::runtime_error), fake(Status::correct, 1.5)});
  auto result = run_task(testing::make_task("t"), h.deps, options_for(tmp, 2));
  nlohmann::json j = result;
  CHECK(j.get<TaskResult>() == result);
  CHECK(parse_task_status("aborted") == TaskStatus::aborted);
  CHECK_THROWS_AS(parse_task_status("done"), Error);
}

TEST_CASE("the loop requires a session and a verifier") {
  TempDir tmp;
  Dependencies deps;
  CHECK_THROWS_AS(run_task(testing::make_task("t"), deps, options_for(tmp)), Error);
}

}  // TEST_SUITE
