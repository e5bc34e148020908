// SPDX-License-Identifier: Apache-2.0
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <doctest.h>

#include <random>
#include <thread>

#include "profloop/compendium.hpp"
#include "profloop/error.hpp"
#include "test_support.hpp"

using namespace profloop;
using namespace profloop::compendium;
using profloop::testing::TempDir;

namespace {

const std::vector<metrics::Backend> kBoth = {metrics::Backend::cpu, metrics::Backend::gpu};

std::vector<MetricKnowledgeEntry> full_coverage() {
  std::vector<MetricKnowledgeEntry> out;
  for (auto backend : kBoth) {
    for (const auto& id : metrics::default_metric_set(backend)) {
      out.push_back({id.name(), "about " + id.name(), "counter", {"generic"}, {"seg-" + id.name()}, false, {}});
    }
  }
  return out;
}

llm::Session session_for(std::shared_ptr<llm::ScriptedClient> client) {
  return llm::Session(std::move(client), testing::fast_retry());
}

std::string random_document(std::mt19937& rng, std::size_t length) {
  static const std::vector<std::string> pieces = {"# Heading\n", "\n", "\n\n", "word ", "counter ", "x", "- item\n",
                                                  "## Sub\n"};
  std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
  std::string text;
  while (text.size() < length) text += pieces[pick(rng)];
  text.resize(length);
  return text;
}

}  // namespace

TEST_SUITE("compendium") {

TEST_CASE("split concatenates back to the input and respects the budget") {
  std::mt19937 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<std::size_t> len(0, 9000), bud(20, 1500);
    std::string text = random_document(rng, len(rng));
    std::size_t budget = bud(rng);
    auto segments = split_document("doc.md", "generic", text, budget);
    std::string joined;
    std::size_t offset = 0;
    for (const auto& s : segments) {
      CHECK(s.text.size() <= budget);
      CHECK(!s.text.empty());
      CHECK(s.offset == offset);
      offset += s.text.size();
      joined += s.text;
    }
    CHECK(joined == text);
  }
}

TEST_CASE("a ten thousand character document splits into three segments") {
  std::string text;
  for (int i = 0; text.size() < 10000; ++i) text += fmt::format("line {} of the perf manual text\n", i);
  text.resize(10000);
  auto segments = split_document("perf.md", "perf", text, 4000);
  CHECK(segments.size() == 3);
  for (const auto& s : segments) CHECK(s.text.size() <= 4000);
}

TEST_CASE("split prefers heading boundaries") {
  std::string intro(1500, 'a');
  std::string body = intro + "\n# Second\n" + std::string(1000, 'b') + "\n";
  auto segments = split_document("d.md", "generic", body, 2000);
  REQUIRE(segments.size() == 2);
  CHECK(segments[1].text.starts_with("# Second"));
}

TEST_CASE("segment ids are stable and distinct") {
  std::string text(9000, 'z');
  auto a = split_document("a.md", "generic", text, 4000);
  auto b = split_document("a.md", "generic", text, 4000);
  auto c = split_document("b.md", "generic", text, 4000);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].segment_id == b[i].segment_id);
    CHECK(a[i].segment_id != c[i].segment_id);
  }
  CHECK(a[0].segment_id != a[1].segment_id);
}

TEST_CASE("strip_html keeps headings and text and drops scripts") {
  std::string html =
      "<html><head><style>p{}</style><script>var x=1;</script></head><body>"
      "<h2>Achieved Occupancy</h2><p>Warps &amp; blocks &lt;active&gt;</p></body></html>";
  auto text = strip_html(html);
  CHECK(text.find("# Achieved Occupancy") != std::string::npos);
  CHECK(text.find("Warps & blocks <active>") != std::string::npos);
  CHECK(text.find("var x") == std::string::npos);
  CHECK(text.find("p{}") == std::string::npos);
}

TEST_CASE("tool inference and metric name resolution") {
  CHECK(infer_tool("docs/ncu_memory.md") == "ncu");
  CHECK(infer_tool("https://docs.nvidia.com/nsight-compute/") == "ncu");
  CHECK(infer_tool("perf_topdown.md") == "perf");
  CHECK(infer_tool("intro.md") == "generic");
  const auto& catalog = metrics::Catalog::builtin();
  CHECK(resolve_metric_name("cpu.ipc", catalog) == "cpu.ipc");
  CHECK(resolve_metric_name("IPC", catalog) == "cpu.ipc");
  CHECK(resolve_metric_name("instructions", catalog) == "cpu.instructions_retired");
  CHECK(resolve_metric_name("tma_backend_bound", catalog) == "cpu.backend_bound");
  CHECK(resolve_metric_name("launch__registers_per_thread", catalog) == "gpu.registers_per_thread");
  CHECK(resolve_metric_name("Some Tool Metric", catalog) == "some tool metric");
}

TEST_CASE("summaries must be well-formed JSON entry lists") {
  DocSegment seg{"perf.md", "perf", "text", 0, "seg1"};
  const auto& catalog = metrics::Catalog::builtin();
  auto entries = parse_summary(
      "```json\n[{\"metric\":\"cycles\",\"description\":\"clock\",\"bottlenecks\":[\"slow\"]}]\n```", seg, catalog);
  REQUIRE(entries.size() == 1);
  CHECK(entries[0].metric == "cpu.cycles");
  CHECK(entries[0].provenance == std::vector<std::string>{"seg1"});
  CHECK(parse_summary("{\"entries\": []}", seg, catalog).empty());

  for (std::string bad : {"no json at all {", "{\"metric\": 1}", "[{\"description\":\"x\"}]",
                          "[{\"metric\":\"a\",\"description\":\"\"}]", "[{\"metric\":\"a\",\"description\":\"d\","
                                                                       "\"bottlenecks\":\"str\"}]"}) {
    try {
      parse_summary(bad, seg, catalog);
      FAIL("expected malformed_output for " << bad);
    } catch (const Error& e) {
      CHECK(e.code() == Errc::malformed_output);
    }
  }
}

TEST_CASE("summarize retries malformed output then skips the segment") {
  DocSegment seg{"perf.md", "perf", "text", 0, "seg1"};
  auto client = std::make_shared<llm::ScriptedClient>(std::vector<llm::ScriptedClient::Step>{
      {std::nullopt, "garbage"}, {std::nullopt, "[{\"metric\":\"cycles\",\"description\":\"clock\"}]"}});
  auto session = session_for(client);
  auto ok = summarize_segment(seg, session);
  CHECK(ok.failure.empty());
  CHECK(ok.retries == 1);
  REQUIRE(ok.entries.size() == 1);

  for (int i = 0; i < 3; ++i) client->push({std::nullopt, "still garbage"});
  auto skipped = summarize_segment(seg, session, metrics::Catalog::builtin(), {2});
  CHECK(!skipped.failure.empty());
  CHECK(skipped.entries.empty());
  CHECK(client->sends() == 5);
}

TEST_CASE("synthesize enforces coverage of every default metric") {
  auto client = std::make_shared<llm::ScriptedClient>();
  auto session = session_for(client);
  auto entries = full_coverage();
  entries.erase(std::remove_if(entries.begin(), entries.end(),
                               [](const auto& e) { return e.metric == "gpu.occupancy" || e.metric == "cpu.ipc"; }),
                entries.end());
  try {
    synthesize(entries, session, kBoth);
    FAIL("expected coverage_error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::coverage_error);
    CHECK(std::string(e.what()).find("gpu.occupancy") != std::string::npos);
    CHECK(std::string(e.what()).find("cpu.ipc") != std::string::npos);
  }
  std::vector<metrics::Backend> gpu_only = {metrics::Backend::gpu};
  entries = full_coverage();
  auto gpu = synthesize(entries, session, gpu_only);
  CHECK(gpu.entries.size() == 12);
  CHECK(client->sends() == 0);
}

TEST_CASE("synthesize merges duplicates and flags differing descriptions") {
  auto entries = full_coverage();
  entries.push_back({"IPC", "second opinion on ipc", "ratio", {"stalls"}, {"seg-x"}, false, {}});
  auto client = std::make_shared<llm::ScriptedClient>(
      std::vector<llm::ScriptedClient::Step>{},
      std::vector<llm::ScriptedClient::Rule>{
          {llm::Tag::compendium, "cpu.ipc", "```json\n{\"description\":\"merged ipc\",\"bottlenecks\":[\"x\"]}\n```"}});
  auto session = session_for(client);
  auto c = synthesize(entries, session, kBoth);
  CHECK(client->sends() == 1);
  auto it = std::find_if(c.entries.begin(), c.entries.end(), [](const auto& e) { return e.metric == "cpu.ipc"; });
  REQUIRE(it != c.entries.end());
  CHECK(it->description == "merged ipc");
  CHECK(it->flagged);
  CHECK(it->variants.size() == 2);
  CHECK(it->provenance == std::vector<std::string>{"seg-cpu.ipc", "seg-x"});
  CHECK(std::is_sorted(c.entries.begin(), c.entries.end(),
                       [](const auto& a, const auto& b) { return a.metric < b.metric; }));
}

TEST_CASE("a failed merge keeps every description") {
  auto entries = full_coverage();
  entries.push_back({"cpu.cycles", "other cycles text", "", {}, {"seg-y"}, false, {}});
  auto client = std::make_shared<llm::ScriptedClient>();
  auto session = session_for(client);
  auto c = synthesize(entries, session, kBoth, metrics::Catalog::builtin(), {1});
  auto it = std::find_if(c.entries.begin(), c.entries.end(), [](const auto& e) { return e.metric == "cpu.cycles"; });
  REQUIRE(it != c.entries.end());
  CHECK(it->description == "about cpu.cycles\nother cycles text");
  CHECK(it->flagged);
}

TEST_CASE("compendium JSON round-trips and hashes without the timestamp") {
  Compendium c;
  c.entries = full_coverage();
  c.entries[0].flagged = true;
  c.entries[0].variants = {"a", "b"};
  c.built_at = "2026-10-18T00:00:00Z";
  auto back = Compendium::from_json(c.to_json());
  CHECK(back.entries == c.entries);
  CHECK(back.built_at == c.built_at);
  Compendium later = c;
  later.built_at = "2027-01-01T00:00:00Z";
  CHECK(later.content_hash() == c.content_hash());
  later.entries[1].description = "changed";
  CHECK(later.content_hash() != c.content_hash());
  auto doc = c.to_json();
  doc["schema_version"] = 99;
  CHECK_THROWS_AS(Compendium::from_json(doc), Error);
}

TEST_CASE("lookup ranks by field-boosted term frequency") {
  Compendium c;
  c.entries = {
      {"gpu.occupancy", "active warps relative to maximum", "", {"low occupancy"}, {}, false, {}},
      {"gpu.theoretical_occupancy", "upper bound on occupancy", "", {"resource limits"}, {}, false, {}},
      {"cpu.backend_bound", "slots stalled in the backend", "", {"memory stalls"}, {}, false, {}},
      {"cpu.memory_bound", "backend stalls on memory", "", {"cache misses"}, {}, false, {}},
  };
  auto occ = lookup(c, "occupancy", 1);
  REQUIRE(occ.size() == 1);
  CHECK(occ[0].metric == "gpu.occupancy");
  auto be = lookup(c, "backend bound", 1);
  REQUIRE(be.size() == 1);
  CHECK(be[0].metric == "cpu.backend_bound");
  CHECK(lookup(c, "tensor cores", 3).empty());
  CHECK(lookup(c, "", 3).empty());
  CHECK(lookup(c, "occupancy", 10).size() == 2);
}

TEST_CASE("lookup is deterministic under ties") {
  Compendium c;
  c.entries = {{"cpu.b", "same words", "", {}, {}, false, {}}, {"cpu.a", "same words", "", {}, {}, false, {}}};
  auto r = lookup(c, "words", 2);
  REQUIRE(r.size() == 2);
  CHECK(r[0].metric == "cpu.a");
  CHECK(r[1].metric == "cpu.b");
}

TEST_CASE("ingest reads files, records failures and rejects an empty corpus") {
  TempDir tmp;
  util::write_file(tmp / "a.md", "# A\n" + std::string(100, 'a') + "\n");
  util::write_file(tmp / "empty.md", "");
  auto result = ingest({"a.md", "empty.md", "missing.md"}, 4000, tmp.path());
  CHECK(result.segments.size() == 1);
  CHECK(result.warnings.size() == 1);
  CHECK(result.errors.size() == 1);
  try {
    ingest({"missing.md"}, 4000, tmp.path());
    FAIL("expected build_error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::build_error);
  }
}

TEST_CASE("ingest fetches http sources and strips HTML") {
  httplib::Server server;
  server.Get("/occupancy.html", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("<html><body><h1>Occupancy</h1><p>Active warps.</p></body></html>", "text/html");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  auto result = ingest({fmt::format("http://127.0.0.1:{}/occupancy.html", port),
                        fmt::format("http://127.0.0.1:{}/missing.html", port)});
  server.stop();
  thread.join();
  REQUIRE(result.segments.size() == 1);
  CHECK(result.segments[0].text.find("# Occupancy") != std::string::npos);
  CHECK(result.segments[0].tool == "generic");
  CHECK(result.errors.size() == 1);
}

TEST_CASE("building from the bundled snapshots covers both backends") {
  auto client = llm::ScriptedClient::from_file(testing::source_dir() / "docs" / "snapshots" / "compendium_script.json");
  llm::Session session(std::shared_ptr<llm::LlmClient>(std::move(client)), testing::fast_retry());
  BuildOptions options;
  options.base_dir = testing::source_dir() / "docs" / "snapshots";
  auto report = build(read_sources_file(options.base_dir / "sources.txt"), session, options);
  CHECK(report.failures.empty());
  CHECK(report.segments.size() == 5);
  for (auto backend : kBoth) {
    for (const auto& id : metrics::default_metric_set(backend)) {
      CHECK_MESSAGE(std::any_of(report.compendium.entries.begin(), report.compendium.entries.end(),
                                [&](const auto& e) { return e.metric == id.name(); }),
                    id.name());
    }
  }
  CHECK(lookup(report.compendium, "occupancy", 1).at(0).metric == "gpu.occupancy");
  CHECK(lookup(report.compendium, "backend bound", 1).at(0).metric == "cpu.backend_bound");
  auto committed = Compendium::load(testing::source_dir() / "docs" / "compendium.json");
  CHECK(committed.content_hash() == report.compendium.content_hash());
}

}  // TEST_SUITE
