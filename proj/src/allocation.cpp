#include "forge/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>

#include "forge/error.hpp"
#include "forge/library.hpp"
#include "parallel.hpp"

namespace forge {

using nlohmann::json;

namespace {
constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
}

DnnSpec dnn_from_model(const ModelRecord& model) {
  return DnnSpec{model.id, model.weight_bytes, model.activation_bytes_per_image};
}

DeviceLayout::DeviceLayout(std::span<const DeviceSpec> devices) {
  for (std::size_t d = 0; d < devices.size(); ++d)
    (devices[d].kind == DeviceKind::GPU ? gpus : cpus).push_back(d);
}

AllocationState empty_state(std::size_t n_dnns, std::span<const DeviceSpec> devices, int batch) {
  DeviceLayout layout(devices);
  AllocationState s;
  s.batch.assign(n_dnns, batch);
  s.gpu_lists.resize(layout.gpus.size());
  s.cpu_lists.resize(layout.cpus.size());
  return s;
}

namespace {

// Maps device-list index d to the list holding its DNNs.
std::vector<std::size_t>& list_for(AllocationState& s, const DeviceLayout& layout, std::size_t d) {
  if (auto it = std::find(layout.gpus.begin(), layout.gpus.end(), d); it != layout.gpus.end())
    return s.gpu_lists[static_cast<std::size_t>(it - layout.gpus.begin())];
  auto it = std::find(layout.cpus.begin(), layout.cpus.end(), d);
  return s.cpu_lists[static_cast<std::size_t>(it - layout.cpus.begin())];
}

const std::vector<std::size_t>& list_for(const AllocationState& s, const DeviceLayout& layout, std::size_t d) {
  return list_for(const_cast<AllocationState&>(s), layout, d);
}

}  // namespace

void check_state(const AllocationState& state, std::size_t n_dnns, std::span<const DeviceSpec> devices,
                 bool require_complete) {
  DeviceLayout layout(devices);
  if (state.gpu_lists.size() != layout.gpus.size() || state.cpu_lists.size() != layout.cpus.size())
    throw Error(Errc::MalformedState, "device list counts do not match the device specification");
  if (state.batch.size() != n_dnns) throw Error(Errc::MalformedState, "batch list length differs from DNN count");
  std::vector<int> seen(n_dnns, 0);
  auto visit = [&](const std::vector<std::vector<std::size_t>>& lists) {
    for (const auto& list : lists)
      for (auto i : list) {
        if (i >= n_dnns) throw Error(Errc::MalformedState, "DNN index " + std::to_string(i) + " out of range");
        if (++seen[i] > 1) throw Error(Errc::MalformedState, "DNN " + std::to_string(i) + " placed twice");
        if (state.batch[i] <= 0) throw Error(Errc::MalformedState, "batch sizes must be positive");
      }
  };
  visit(state.gpu_lists);
  visit(state.cpu_lists);
  if (require_complete)
    for (std::size_t i = 0; i < n_dnns; ++i)
      if (seen[i] != 1) throw Error(Errc::MalformedState, "DNN " + std::to_string(i) + " is not placed");
}

std::vector<std::size_t> placement_of(const AllocationState& state, std::span<const DeviceSpec> devices) {
  DeviceLayout layout(devices);
  std::vector<std::size_t> where(state.batch.size(), npos);
  for (std::size_t j = 0; j < state.gpu_lists.size(); ++j)
    for (auto i : state.gpu_lists[j]) where.at(i) = layout.gpus[j];
  for (std::size_t k = 0; k < state.cpu_lists.size(); ++k)
    for (auto i : state.cpu_lists[k]) where.at(i) = layout.cpus[k];
  return where;
}

void place(AllocationState& state, std::span<const DeviceSpec> devices, std::size_t dnn, std::size_t device) {
  DeviceLayout layout(devices);
  for (auto* lists : {&state.gpu_lists, &state.cpu_lists})
    for (auto& list : *lists) std::erase(list, dnn);
  auto& target = list_for(state, layout, device);
  target.insert(std::upper_bound(target.begin(), target.end(), dnn), dnn);
}

double SimulatorOracle::memory_bytes(const DnnSpec& dnn, int batch) noexcept {
  return static_cast<double>(dnn.weight_bytes) +
         static_cast<double>(dnn.activation_bytes_per_image) * static_cast<double>(batch);
}

double SimulatorOracle::base_ips(const DnnSpec& dnn) noexcept {
  return 1e9 / static_cast<double>(dnn.weight_bytes) * 1000.0;
}

BenchResult SimulatorOracle::evaluate(std::span<const DnnSpec> dnns, const AllocationState& state,
                                      std::span<const DeviceSpec> devices, std::size_t) const {
  check_state(state, dnns.size(), devices, false);
  DeviceLayout layout(devices);
  BenchResult result;
  result.per_device_memory.assign(devices.size(), 0.0);

  const double reference = kReferenceBatch / (kReferenceBatch + kSaturation);
  double slowest = std::numeric_limits<double>::infinity();
  bool memory_ok = true;
  std::size_t placed = 0;
  for (std::size_t d = 0; d < devices.size(); ++d) {
    const auto& residents = list_for(state, layout, d);
    for (auto i : residents) result.per_device_memory[d] += memory_bytes(dnns[i], state.batch[i]);
    if (result.per_device_memory[d] > devices[d].memory_capacity) memory_ok = false;
    const double share = static_cast<double>(residents.size());
    for (auto i : residents) {
      const double b = static_cast<double>(state.batch[i]);
      const double speed = base_ips(dnns[i]) * devices[d].speed_factor * (b / (b + kSaturation)) / reference;
      slowest = std::min(slowest, speed / share);
      ++placed;
    }
  }
  result.feasible = memory_ok && placed > 0;
  result.throughput = result.feasible ? slowest : 0.0;
  return result;
}

BenchResult simulate_bench(std::span<const DnnSpec> dnns, const AllocationState& state,
                           std::span<const DeviceSpec> devices, std::size_t workload_images) {
  return SimulatorOracle{}.evaluate(dnns, state, devices, workload_images);
}

namespace {

bool accepted(const BenchResult& r) { return r.feasible && r.throughput > 0.0; }

}  // namespace

AllocationState allocate_memory_fit(std::span<const DnnSpec> dnns, std::span<const DeviceSpec> devices,
                                    int default_batch, const BenchOracle& oracle, std::size_t workload_images) {
  if (devices.empty()) throw Error(Errc::BadArgument, "at least one device is required");
  if (default_batch <= 0) throw Error(Errc::BadArgument, "default batch size must be positive");
  DeviceLayout layout(devices);
  AllocationState state = empty_state(dnns.size(), devices, default_batch);

  std::vector<std::size_t> order(dnns.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return dnns[a].weight_bytes > dnns[b].weight_bytes; });

  std::vector<double> gpu_load(layout.gpus.size(), 0.0);
  std::vector<double> cpu_load(layout.cpus.size(), 0.0);
  for (auto i : order) {
    const double weight = static_cast<double>(dnns[i].weight_bytes);
    if (!gpu_load.empty()) {
      auto gi = static_cast<std::size_t>(std::min_element(gpu_load.begin(), gpu_load.end()) - gpu_load.begin());
      AllocationState trial = state;
      place(trial, devices, i, layout.gpus[gi]);
      if (accepted(oracle.evaluate(dnns, trial, devices, workload_images))) {
        state = std::move(trial);
        gpu_load[gi] += weight;
        continue;
      }
    }
    if (!cpu_load.empty()) {
      auto ci = static_cast<std::size_t>(std::min_element(cpu_load.begin(), cpu_load.end()) - cpu_load.begin());
      AllocationState trial = state;
      place(trial, devices, i, layout.cpus[ci]);
      if (accepted(oracle.evaluate(dnns, trial, devices, workload_images))) {
        state = std::move(trial);
        cpu_load[ci] += weight;
        continue;
      }
    }
    throw Error(Errc::OutOfMemory, "no device has enough memory for DNN '" + dnns[i].id + "'");
  }
  return state;
}

std::vector<AllocationState> neighbors(const AllocationState& state, std::span<const int> permitted_batches,
                                       std::span<const DeviceSpec> devices) {
  std::vector<AllocationState> out;
  const auto where = placement_of(state, devices);
  for (std::size_t i = 0; i < state.batch.size(); ++i) {
    for (int b : permitted_batches) {
      if (b == state.batch[i]) continue;
      AllocationState next = state;
      next.batch[i] = b;
      out.push_back(std::move(next));
    }
    for (std::size_t d = 0; d < devices.size(); ++d) {
      if (d == where[i]) continue;
      AllocationState next = state;
      place(next, devices, i, d);
      out.push_back(std::move(next));
    }
  }
  return out;
}

RefineResult refine_allocation(std::span<const DnnSpec> dnns, const AllocationState& start,
                               std::span<const DeviceSpec> devices, std::span<const int> permitted_batches,
                               const BenchOracle& oracle, const RefineOptions& options) {
  check_state(start, dnns.size(), devices, true);
  const BenchResult first = oracle.evaluate(dnns, start, devices, options.workload_images);
  if (!accepted(first)) throw Error(Errc::InfeasibleStart, "the starting allocation is not feasible");

  RefineResult result{start, first.throughput, first.throughput, 0, 0};
  const std::size_t threads = oracle.concurrent() ? options.threads : 1;
  while (result.evaluations < options.max_combi) {
    auto candidates = neighbors(result.state, permitted_batches, devices);
    if (candidates.empty()) break;
    const std::size_t budget = std::min(candidates.size(), options.max_combi - result.evaluations);
    std::vector<BenchResult> benches(budget);
    detail::parallel_for(budget, threads, [&](std::size_t k, std::size_t) {
      benches[k] = oracle.evaluate(dnns, candidates[k], devices, options.workload_images);
    });
    result.evaluations += budget;

    std::optional<std::size_t> best;
    for (std::size_t k = 0; k < budget; ++k) {
      if (!accepted(benches[k]) || !(benches[k].throughput > result.throughput)) continue;
      if (!best || benches[k].throughput > benches[*best].throughput) best = k;
    }
    if (!best) break;
    result.state = std::move(candidates[*best]);
    result.throughput = benches[*best].throughput;
    ++result.moves;
  }
  return result;
}

BruteForceAllocation brute_force_allocation(std::span<const DnnSpec> dnns, std::span<const DeviceSpec> devices,
                                            std::span<const int> permitted_batches, const BenchOracle& oracle,
                                            std::size_t workload_images) {
  if (dnns.empty()) throw Error(Errc::BadArgument, "no DNNs to place");
  if (devices.empty() || permitted_batches.empty())
    throw Error(Errc::BadArgument, "devices and permitted batches must be non-empty");
  const std::size_t choices = devices.size() * permitted_batches.size();
  const double total = std::pow(static_cast<double>(choices), static_cast<double>(dnns.size()));
  if (total > kBruteForceMaxStates)
    throw Error(Errc::TooLarge, "(M*|PB|)^n = " + std::to_string(total) + " exceeds the enumeration guard");

  const std::size_t n = dnns.size();
  std::vector<std::size_t> digit(n, 0);  // digit = device * |PB| + batch index
  BruteForceAllocation best;
  bool found = false;
  while (true) {
    AllocationState s = empty_state(n, devices, permitted_batches.front());
    for (std::size_t i = 0; i < n; ++i) {
      s.batch[i] = permitted_batches[digit[i] % permitted_batches.size()];
      place(s, devices, i, digit[i] / permitted_batches.size());
    }
    BenchResult r = oracle.evaluate(dnns, s, devices, workload_images);
    ++best.states;
    if (accepted(r) && (!found || r.throughput > best.throughput)) {
      best.state = std::move(s);
      best.throughput = r.throughput;
      found = true;
    }
    // Odometer increment with DNN n-1 as the least significant digit.
    bool exhausted = true;
    for (std::size_t pos = n; pos-- > 0;) {
      if (++digit[pos] < choices) {
        exhausted = false;
        break;
      }
      digit[pos] = 0;
    }
    if (exhausted) break;
  }
  if (!found) throw Error(Errc::OutOfMemory, "no assignment fits into device memory");
  return best;
}

std::vector<DeviceSpec> parse_devices(const json& doc) {
  if (!doc.is_array()) throw Error(Errc::SchemaError, "device file must hold a JSON list");
  std::vector<DeviceSpec> out;
  for (std::size_t k = 0; k < doc.size(); ++k) {
    const auto& jd = doc[k];
    const std::string where = "devices[" + std::to_string(k) + "]";
    if (!jd.is_object()) throw Error(Errc::SchemaError, where + " must be an object");
    DeviceSpec d;
    d.id = jd.value("id", "dev" + std::to_string(k));
    std::string kind = jd.value("kind", "");
    std::transform(kind.begin(), kind.end(), kind.begin(), [](unsigned char c) { return std::toupper(c); });
    if (kind == "GPU") {
      d.kind = DeviceKind::GPU;
    } else if (kind == "CPU") {
      d.kind = DeviceKind::CPU;
    } else {
      throw Error(Errc::SchemaError, where + ": kind must be GPU or CPU");
    }
    if (!jd.contains("memory_capacity") || !jd["memory_capacity"].is_number())
      throw Error(Errc::SchemaError, where + ": memory_capacity must be a number");
    d.memory_capacity = jd["memory_capacity"].get<double>();
    if (!(d.memory_capacity > 0.0)) throw Error(Errc::SchemaError, where + ": memory_capacity must be > 0");
    d.speed_factor = jd.value("speed_factor", 1.0);
    if (!(d.speed_factor > 0.0)) throw Error(Errc::SchemaError, where + ": speed_factor must be > 0");
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<DeviceSpec> load_devices(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::MissingFile, "cannot open device file " + path);
  try {
    return parse_devices(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(Errc::SchemaError, "device file is not valid JSON: " + std::string(e.what()));
  }
}

json devices_to_json(std::span<const DeviceSpec> devices) {
  json out = json::array();
  for (const auto& d : devices)
    out.push_back({{"id", d.id},
                   {"kind", d.kind == DeviceKind::GPU ? "GPU" : "CPU"},
                   {"memory_capacity", d.memory_capacity},
                   {"speed_factor", d.speed_factor}});
  return out;
}

json allocation_to_json(std::span<const DnnSpec> dnns, const AllocationState& state,
                        std::span<const DeviceSpec> devices, double throughput) {
  DeviceLayout layout(devices);
  auto ids_of = [&](const std::vector<std::vector<std::size_t>>& lists) {
    json out = json::array();
    for (const auto& list : lists) {
      json ids = json::array();
      for (auto i : list) ids.push_back(dnns[i].id);
      out.push_back(std::move(ids));
    }
    return out;
  };
  auto device_ids = [&](const std::vector<std::size_t>& where) {
    json out = json::array();
    for (auto d : where) out.push_back(devices[d].id);
    return out;
  };
  json jdnns = json::array();
  for (const auto& d : dnns) jdnns.push_back(d.id);
  return {{"dnns", jdnns},
          {"batch", state.batch},
          {"gpu_lists", ids_of(state.gpu_lists)},
          {"cpu_lists", ids_of(state.cpu_lists)},
          {"gpu_devices", device_ids(layout.gpus)},
          {"cpu_devices", device_ids(layout.cpus)},
          {"throughput", throughput}};
}

}  // namespace forge
