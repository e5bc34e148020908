// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <regex>
#include <thread>

#include <fmt/format.h>

#include "profloop/agents.hpp"
#include "profloop/error.hpp"
#include "profloop/util.hpp"

namespace profloop::agents {
namespace {

std::string human_bytes(std::uint64_t bytes) {
  if (bytes >= (1ull << 20) && bytes % (1ull << 20) == 0) return fmt::format("{} MiB", bytes >> 20);
  if (bytes >= (1ull << 20)) return fmt::format("{:.2f} MiB", static_cast<double>(bytes) / (1 << 20));
  if (bytes >= 1024 && bytes % 1024 == 0) return fmt::format("{} KiB", bytes >> 10);
  return fmt::format("{} B", bytes);
}

std::string read_trimmed(const std::filesystem::path& path) {
  return std::string(util::trim(util::read_file(path)));
}

}  // namespace

void HardwareSpec::validate() const {
  if (core_or_sm_count < 1) {
    throw Error(Errc::invalid_argument, fmt::format("core_or_sm_count must be >= 1, got {}", core_or_sm_count));
  }
  if (memory_bandwidth_gbps && !(*memory_bandwidth_gbps > 0)) {
    throw Error(Errc::invalid_argument, "memory_bandwidth_gbps must be positive");
  }
}

std::string HardwareSpec::describe() const {
  std::string out = fmt::format("backend: {}\n", metrics::to_string(backend));
  if (!model.empty()) out += fmt::format("model: {}\n", model);
  out += fmt::format("{}: {}\n", backend == metrics::Backend::gpu ? "SM count" : "cores", core_or_sm_count);
  if (!cache_hierarchy.empty()) {
    out += "caches:";
    for (const auto& c : cache_hierarchy) out += fmt::format(" {} {};", c.level, human_bytes(c.size_bytes));
    out.pop_back();
    out += '\n';
  }
  if (memory_bandwidth_gbps) out += fmt::format("memory bandwidth: {} GB/s\n", *memory_bandwidth_gbps);
  if (!notes.empty()) out += fmt::format("notes: {}\n", notes);
  return out;
}

HardwareSpec HardwareSpec::load(const std::filesystem::path& path) {
  try {
    HardwareSpec hw = nlohmann::json::parse(util::read_file(path)).get<HardwareSpec>();
    hw.validate();
    return hw;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse_error, fmt::format("{}: {}", path.string(), e.what()));
  }
}

void to_json(nlohmann::json& j, const HardwareSpec& hw) {
  nlohmann::json caches = nlohmann::json::array();
  for (const auto& c : hw.cache_hierarchy) caches.push_back({{"level", c.level}, {"size_bytes", c.size_bytes}});
  j = {{"backend", metrics::to_string(hw.backend)},
       {"core_or_sm_count", hw.core_or_sm_count},
       {"cache_hierarchy", std::move(caches)},
       {"model", hw.model},
       {"notes", hw.notes}};
  j["memory_bandwidth_gbps"] =
      hw.memory_bandwidth_gbps ? nlohmann::json(*hw.memory_bandwidth_gbps) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, HardwareSpec& hw) {
  hw.backend = metrics::parse_backend(j.at("backend").get<std::string>());
  hw.core_or_sm_count = j.at("core_or_sm_count").get<int>();
  hw.cache_hierarchy.clear();
  for (const auto& c : j.value("cache_hierarchy", nlohmann::json::array())) {
    hw.cache_hierarchy.push_back({c.at("level").get<std::string>(), c.at("size_bytes").get<std::uint64_t>()});
  }
  hw.model = j.value("model", "");
  hw.notes = j.value("notes", "");
  if (j.contains("memory_bandwidth_gbps") && !j["memory_bandwidth_gbps"].is_null()) {
    hw.memory_bandwidth_gbps = j["memory_bandwidth_gbps"].get<double>();
  } else {
    hw.memory_bandwidth_gbps.reset();
  }
}

std::uint64_t parse_cache_size(std::string_view text) {
  auto t = util::trim(text);
  if (t.empty()) throw Error(Errc::parse_error, "empty cache size");
  std::uint64_t multiplier = 1;
  char suffix = static_cast<char>(std::toupper(static_cast<unsigned char>(t.back())));
  if (suffix == 'K' || suffix == 'M' || suffix == 'G') {
    multiplier = suffix == 'K' ? 1ull << 10 : suffix == 'M' ? 1ull << 20 : 1ull << 30;
    t.remove_suffix(1);
  }
  auto value = util::parse_uint(util::trim(t));
  if (!value) throw Error(Errc::parse_error, fmt::format("bad cache size '{}'", text));
  return *value * multiplier;
}

HardwareSpec probe_cpu(const std::filesystem::path& sys_cpu_root, const std::filesystem::path& cpuinfo) {
  namespace fs = std::filesystem;
  HardwareSpec hw;
  hw.backend = metrics::Backend::cpu;

  static const std::regex cpu_dir("cpu[0-9]+");
  int cores = 0;
  std::error_code ec;
  if (fs::is_directory(sys_cpu_root, ec)) {
    for (const auto& entry : fs::directory_iterator(sys_cpu_root, ec)) {
      if (entry.is_directory() && std::regex_match(entry.path().filename().string(), cpu_dir)) ++cores;
    }
  }
  if (cores == 0) cores = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  hw.core_or_sm_count = cores;

  struct Found {
    int level;
    std::string name;
    std::uint64_t size;
  };
  std::vector<Found> found;
  fs::path cache_root = sys_cpu_root / "cpu0" / "cache";
  if (fs::is_directory(cache_root, ec)) {
    for (const auto& entry : fs::directory_iterator(cache_root, ec)) {
      if (!entry.path().filename().string().starts_with("index")) continue;
      try {
        int level = static_cast<int>(util::parse_uint(read_trimmed(entry.path() / "level")).value_or(0));
        std::string type = read_trimmed(entry.path() / "type");
        std::uint64_t size = parse_cache_size(read_trimmed(entry.path() / "size"));
        std::string name = fmt::format("L{}", level);
        if (type == "Data") name += 'd';
        if (type == "Instruction") name += 'i';
        found.push_back({level, name, size});
      } catch (const std::exception&) {
        continue;
      }
    }
  }
  std::sort(found.begin(), found.end(),
            [](const Found& a, const Found& b) { return std::tie(a.level, a.name) < std::tie(b.level, b.name); });
  for (const auto& f : found) hw.cache_hierarchy.push_back({f.name, f.size});

  try {
    for (const auto& line : util::split(util::read_file(cpuinfo), '\n')) {
      if (line.starts_with("model name")) {
        auto colon = line.find(':');
        if (colon != std::string::npos) hw.model = std::string(util::trim(std::string_view(line).substr(colon + 1)));
        break;
      }
    }
  } catch (const std::exception&) {
  }
  hw.notes = "probed from sysfs";
  return hw;
}

}  // namespace profloop::agents
