// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>

#include "profloop/error.hpp"
#include "profloop/process.hpp"
#include "profloop/records.hpp"
#include "profloop/verifier.hpp"
#include "test_support.hpp"

using namespace profloop;
using namespace profloop::verify;
using profloop::testing::TempDir;

namespace {

VerifierOptions fast_options(const TempDir& tmp) {
  VerifierOptions o;
  o.state_dir = tmp.path();
  o.warmup = 1;
  o.reps = 20;
  return o;
}

CandidateKernel sim_candidate(std::string directive, int iteration = 0) {
  return {fmt::format("// @sim {}\nvoid kernel() {{}}\n", directive), iteration, "cpp"};
}

}  // namespace

TEST_SUITE("verifier") {

TEST_CASE("a correct candidate is timed against the reference") {
  TempDir tmp;
  Verifier verifier(fast_options(tmp));
  auto task = testing::sim_task("toy");
  auto out = verifier.verify(task, sim_candidate("ns=6665 scale=2 bias=1"));
  REQUIRE(out.status == Status::correct);
  REQUIRE(out.timing);
  CHECK(out.timing->t_reference_ns == 7998);
  CHECK(out.timing->t_candidate_ns == 6665);
  CHECK(out.timing->candidate_samples.size() == 20);
  CHECK(out.timing->warmup_runs == 1);
  CHECK(out.max_abs_err == 0.0);
  CHECK(metrics::speedup(*out.timing) == doctest::Approx(1.2).epsilon(1e-3));
  CHECK(std::filesystem::exists(verifier.iteration_dir("toy", 0) / "candidate.src"));
}

TEST_CASE("failure classes map to build, runtime and output errors") {
  TempDir tmp;
  auto options = fast_options(tmp);
  Verifier verifier(options);
  auto task = testing::sim_task("toy");
  task.candidate_runner.timeout_s = 1.0;

  auto build = verifier.verify(task, sim_candidate("build=fail", 0));
  CHECK(build.status == Status::build_error);
  CHECK(build.logs.find("simulated compile failure") != std::string::npos);
  CHECK(build.logs.find("<state>/toy/iter0/candidate.src") != std::string::npos);
  CHECK(build.logs.find(tmp.path().string()) == std::string::npos);
  CHECK(!build.timing);

  auto crash = verifier.verify(task, sim_candidate("crash", 1));
  CHECK(crash.status == Status::runtime_error);

  auto hang = verifier.verify(task, sim_candidate("hang", 2));
  CHECK(hang.status == Status::runtime_error);
  CHECK(hang.logs.find("timed out") != std::string::npos);

  auto wrong = verifier.verify(task, sim_candidate("scale=3", 3));
  CHECK(wrong.status == Status::incorrect_output);
  CHECK(wrong.max_abs_err.value_or(0) > 0);

  auto truncated = verifier.verify(task, sim_candidate("short", 4));
  CHECK(truncated.status == Status::incorrect_output);
  CHECK(truncated.logs.find("shape mismatch") != std::string::npos);
}

TEST_CASE("timing is present exactly when the candidate is correct") {
  TempDir tmp;
  Verifier verifier(fast_options(tmp));
  auto task = testing::sim_task("toy");
  int i = 0;
  for (std::string d : {"ns=100", "build=fail", "scale=5", "crash", "ns=9000"}) {
    auto out = verifier.verify(task, sim_candidate(d, i++));
    CHECK(out.timing.has_value() == (out.status == Status::correct));
  }
}

TEST_CASE("a broken reference is an infrastructure error") {
  TempDir tmp;
  Verifier verifier(fast_options(tmp));
  auto task = testing::sim_task("toy");
  task.runner.argv = {"false"};
  try {
    verifier.verify(task, sim_candidate("ns=100"));
    FAIL("expected infrastructure_error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::infrastructure_error);
  }
}

TEST_CASE("profile command runs the candidate in time mode") {
  TempDir tmp;
  Verifier verifier(fast_options(tmp));
  auto task = testing::sim_task("toy");
  auto argv = verifier.profile_command(task, sim_candidate("ns=100", 3));
  REQUIRE(!argv.empty());
  CHECK(argv.front() == testing::sim_runner().string());
  CHECK(std::find(argv.begin(), argv.end(), "time") != argv.end());
  for (const auto& a : argv) CHECK(a.find('{') == std::string::npos);
}

TEST_CASE("timing samples must be positive integers with the exact count") {
  TempDir tmp;
  util::write_file(tmp / "ok.txt", "10\n20\n\n30\n");
  CHECK(read_timing_samples(tmp / "ok.txt", 3) == std::vector<double>{10, 20, 30});
  auto code = [&](std::string content, int expected) {
    util::write_file(tmp / "t.txt", content);
    try {
      read_timing_samples(tmp / "t.txt", expected);
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::io_error;
  };
  CHECK(code("10\n20\n", 3) == Errc::timing_protocol);
  CHECK(code("10\nabc\n", 2) == Errc::timing_protocol);
  CHECK(code("10\n0\n", 2) == Errc::timing_protocol);
  CHECK(code("10\n-5\n", 2) == Errc::timing_protocol);
  CHECK(code("1.5\n", 1) == Errc::timing_protocol);
  CHECK_THROWS_AS(read_timing_samples(tmp / "missing.txt", 1), Error);
}

TEST_CASE("truncate_log keeps head and tail within the cap") {
  std::string text(10000, 'x');
  text.replace(0, 5, "HEAD!");
  text.replace(text.size() - 5, 5, "TAIL!");
  auto out = truncate_log(text, 1000);
  CHECK(out.size() <= 1000);
  CHECK(out.starts_with("HEAD!"));
  CHECK(out.ends_with("TAIL!"));
  CHECK(out.find("truncated") != std::string::npos);
  CHECK(truncate_log("short", 1000) == "short");
}

TEST_CASE("process runner reports exit codes, signals and timeouts") {
  auto ok = run_process({{"sh", "-c", "echo out; echo err >&2"}, {}, {}, 5});
  CHECK(ok.ok());
  CHECK(ok.stdout_text == "out\n");
  CHECK(ok.stderr_text == "err\n");
  auto code = run_process({{"sh", "-c", "exit 3"}, {}, {}, 5});
  CHECK(code.exit_code == 3);
  auto sig = run_process({{"sh", "-c", "kill -SEGV $$"}, {}, {}, 5});
  CHECK(sig.signal == 11);
  auto slow = run_process({{"sh", "-c", "sleep 5 & sleep 5"}, {}, {}, 0.3});
  CHECK(slow.timed_out);
  CHECK(slow.elapsed_s < 3.0);
  auto missing = run_process({{"/nonexistent/binary"}, {}, {}, 5});
  CHECK(!missing.ok());
  auto env = run_process({{"sh", "-c", "printf %s \"$PROFLOOP_X\""}, {}, {{"PROFLOOP_X", "42"}}, 5});
  CHECK(env.stdout_text == "42");
}

TEST_CASE("verification outcomes round-trip and enforce the timing invariant") {
  VerificationOutcome v;
  v.status = Status::correct;
  v.logs = "fine";
  v.max_abs_err = 0.0;
  v.max_rel_err = 0.0;
  metrics::TimingResult t;
  t.t_reference_ns = 10;
  t.t_candidate_ns = 5;
  v.timing = t;
  nlohmann::json j = v;
  CHECK(j.get<VerificationOutcome>() == v);
  j["status"] = "runtime_error";
  CHECK_THROWS_AS(j.get<VerificationOutcome>(), Error);
}

TEST_CASE("best records round-trip through JSON") {
  BestRecord b;
  b.candidate = {"int k;\n", 4, "cpp"};
  b.verification.status = Status::correct;
  b.verification.timing = metrics::TimingResult{};
  b.verification.timing->t_reference_ns = 4;
  b.verification.timing->t_candidate_ns = 2;
  b.speedup = 2.0;
  b.achieved_at_iteration = 4;
  nlohmann::json j = b;
  CHECK(j.get<BestRecord>() == b);
}

TEST_CASE("task specs load, validate and substitute defaults") {
  auto task = TaskSpec::load(testing::source_dir() / "desk" / "tasks" / "toy_affine.json");
  CHECK(task.task_id == "toy_affine");
  CHECK(task.category == Category::activation);
  CHECK(task.max_attempts == 4);
  CHECK(task.seed == 7);
  CHECK(task.code_language() == "cpp");
  nlohmann::json j = task;
  auto copy = j.get<TaskSpec>();
  CHECK(nlohmann::json(copy) == j);

  auto bad = nlohmann::json::parse(R"({"task_id":"x","runner":{"argv":["r"]},"candidate_runner":{"argv":["r"]},
                                      "category":"nonsense"})");
  CHECK_THROWS_AS(bad.get<TaskSpec>(), Error);
}

}  // TEST_SUITE
