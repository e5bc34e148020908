// SPDX-License-Identifier: Apache-2.0
//
// Deterministic stand-in for a real kernel runner. It follows the runner
// protocol (build / produce / time) but derives its behaviour from `@sim`
// directives embedded in the candidate source, for example:
//
//   // @sim scale=2 bias=1 ns=6665
//
// produce writes y = scale * x + bias over seeded inputs as a KSTN tensor and
// time writes `reps` copies of `ns`. Other directives: build=fail, crash,
// hang, short (truncated output) and shape=<n>.

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <map>
#include <random>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "profloop/tensor.hpp"
#include "profloop/util.hpp"

namespace {

using Directives = std::map<std::string, std::string>;

constexpr std::string_view kReferenceSource = "@reference";

Directives parse_directives(std::string_view source) {
  Directives d{{"scale", "2"}, {"bias", "1"}, {"ns", "7998"}, {"shape", "64"}};
  for (const auto& line : profloop::util::split(source, '\n')) {
    auto at = line.find("@sim");
    if (at == std::string::npos) continue;
    std::istringstream tokens(line.substr(at + 4));
    std::string token;
    while (tokens >> token) {
      auto eq = token.find('=');
      if (eq == std::string::npos) {
        d[token] = "1";
      } else {
        d[token.substr(0, eq)] = token.substr(eq + 1);
      }
    }
  }
  return d;
}

double number(const Directives& d, const std::string& key) {
  auto v = profloop::util::parse_double(d.at(key));
  if (!v) throw std::runtime_error(fmt::format("directive {}={} is not a number", key, d.at(key)));
  return *v;
}

void misbehave(const Directives& d) {
  if (d.contains("crash")) {
    std::cerr << "simulated crash: segmentation fault in kernel\n";
    std::exit(139);
  }
  if (d.contains("hang")) {
    for (;;) std::this_thread::sleep_for(std::chrono::seconds(1));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic simulated kernel runner"};
  std::string mode;
  std::string source;
  std::string output;
  std::string timing;
  int warmup = 5;
  int reps = 100;
  std::uint64_t seed = 0;
  app.add_option("--mode", mode, "build, produce or time")->required()->check(CLI::IsMember({"build", "produce", "time"}));
  app.add_option("--source", source, "candidate source path or @reference")->required();
  app.add_option("--output", output, "KSTN output path (produce)");
  app.add_option("--timing", timing, "timing output path (time)");
  app.add_option("--warmup", warmup, "warmup runs")->check(CLI::NonNegativeNumber);
  app.add_option("--reps", reps, "timed runs")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "input seed");
  CLI11_PARSE(app, argc, argv);

  try {
    const std::string text = source == kReferenceSource ? std::string() : profloop::util::read_file(source);
    const Directives d = parse_directives(text);

    if (mode == "build") {
      if (d.contains("build") && d.at("build") == "fail") {
        std::cerr << fmt::format("{}:3:5: error: simulated compile failure\n", source);
        return 1;
      }
      return 0;
    }
    if (d.contains("build") && d.at("build") == "fail") {
      std::cerr << "candidate was never built\n";
      return 1;
    }
    misbehave(d);

    if (mode == "produce") {
      if (output.empty()) throw std::runtime_error("--output is required for produce");
      std::size_t n = static_cast<std::size_t>(number(d, "shape"));
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
      profloop::tensor::Tensor t;
      t.dtype = profloop::tensor::DType::f32;
      std::size_t written = d.contains("short") ? n / 2 : n;
      t.shape = {static_cast<std::uint64_t>(written)};
      const double scale = number(d, "scale");
      const double bias = number(d, "bias");
      for (std::size_t i = 0; i < n; ++i) {
        float x = dist(rng);
        if (i < written) t.values.push_back(static_cast<float>(scale * x + bias));
      }
      profloop::tensor::write(output, t);
      return 0;
    }

    if (timing.empty()) throw std::runtime_error("--timing is required for time");
    const auto ns = static_cast<long long>(number(d, "ns"));
    if (ns <= 0) throw std::runtime_error("ns must be positive");
    std::string lines;
    for (int i = 0; i < reps; ++i) lines += fmt::format("{}\n", ns);
    profloop::util::write_file(timing, lines);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "sim-runner: " << e.what() << "\n";
    return 2;
  }
}
