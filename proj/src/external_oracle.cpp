#include <array>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "forge/allocation.hpp"
#include "forge/error.hpp"

namespace forge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'')
      out += "'\\''";
    else
      out += c;
  }
  return out + "'";
}

fs::path request_path() {
  static std::atomic<unsigned> counter{0};
  return fs::temp_directory_path() /
         ("forge-bench-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + ".json");
}

}  // namespace

ExternalCommandOracle::ExternalCommandOracle(std::string command) : command_(std::move(command)) {
  if (command_.empty()) throw Error(Errc::BadArgument, "external bench command is empty");
}

BenchResult ExternalCommandOracle::evaluate(std::span<const DnnSpec> dnns, const AllocationState& state,
                                            std::span<const DeviceSpec> devices,
                                            std::size_t workload_images) const {
  check_state(state, dnns.size(), devices, false);

  json jdnns = json::array();
  for (const auto& d : dnns)
    jdnns.push_back({{"id", d.id},
                     {"weight_bytes", d.weight_bytes},
                     {"activation_bytes_per_image", d.activation_bytes_per_image}});
  json request = {{"dnns", jdnns},
                  {"devices", devices_to_json(devices)},
                  {"batch", state.batch},
                  {"gpu_lists", state.gpu_lists},
                  {"cpu_lists", state.cpu_lists},
                  {"workload_images", workload_images}};

  const fs::path path = request_path();
  {
    std::ofstream out(path);
    if (!out) throw Error(Errc::IoError, "cannot write bench request " + path.string());
    out << request.dump() << '\n';
  }

  const std::string cmd = command_ + " " + shell_quote(path.string());
  std::string output;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) {
    fs::remove(path);
    throw Error(Errc::IoError, "cannot spawn bench command: " + command_);
  }
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe)) output += buf.data();
  const int status = ::pclose(pipe);
  std::error_code ec;
  fs::remove(path, ec);
  if (status != 0) throw Error(Errc::IoError, "bench command exited with status " + std::to_string(status));

  std::istringstream lines(output);
  std::string line;
  while (std::getline(lines, line)) {
    json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("throughput")) continue;
    if (!doc["throughput"].is_number()) break;
    BenchResult r;
    r.throughput = doc["throughput"].get<double>();
    r.feasible = doc.value("feasible", r.throughput > 0.0);
    if (!r.feasible) r.throughput = 0.0;
    if (doc.contains("per_device_memory") && doc["per_device_memory"].is_array())
      r.per_device_memory = doc["per_device_memory"].get<std::vector<double>>();
    return r;
  }
  throw Error(Errc::ParseError, "bench command printed no {\"throughput\": ...} line");
}

}  // namespace forge
