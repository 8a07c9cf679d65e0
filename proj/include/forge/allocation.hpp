#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace forge {

struct ModelRecord;

enum class DeviceKind { GPU, CPU };

struct DeviceSpec {
  std::string id;
  DeviceKind kind = DeviceKind::GPU;
  double memory_capacity = 0.0;  // bytes
  double speed_factor = 1.0;
};

// The memory/compute profile of one ensemble member.
struct DnnSpec {
  std::string id;
  std::uint64_t weight_bytes = 0;
  std::uint64_t activation_bytes_per_image = 0;
};

DnnSpec dnn_from_model(const ModelRecord& model);

// Per-DNN batch sizes plus per-GPU and per-CPU membership lists. GPU j is the
// j-th GPU in the device list, CPU k the k-th CPU. DNN indices inside each
// list are kept sorted so equal placements compare equal.
struct AllocationState {
  std::vector<int> batch;
  std::vector<std::vector<std::size_t>> gpu_lists;
  std::vector<std::vector<std::size_t>> cpu_lists;

  friend bool operator==(const AllocationState&, const AllocationState&) = default;
  friend auto operator<=>(const AllocationState&, const AllocationState&) = default;
};

// Flat view of a device list: the position of every GPU and CPU.
struct DeviceLayout {
  std::vector<std::size_t> gpus;  // indices into the device list
  std::vector<std::size_t> cpus;

  explicit DeviceLayout(std::span<const DeviceSpec> devices);
  std::size_t size() const noexcept { return gpus.size() + cpus.size(); }
};

AllocationState empty_state(std::size_t n_dnns, std::span<const DeviceSpec> devices, int batch);

// Device (index into the device list) hosting each DNN, or npos when unplaced.
std::vector<std::size_t> placement_of(const AllocationState& state, std::span<const DeviceSpec> devices);

// Moves DNN `dnn` onto device `device` (index into the device list).
void place(AllocationState& state, std::span<const DeviceSpec> devices, std::size_t dnn, std::size_t device);

struct BenchResult {
  double throughput = 0.0;  // ensemble images / second; > 0 iff feasible
  bool feasible = false;
  std::vector<double> per_device_memory;  // bytes, device-list order
};

class BenchOracle {
 public:
  virtual ~BenchOracle() = default;

  // Benches the DNNs placed in `state`. Unplaced DNNs are ignored.
  virtual BenchResult evaluate(std::span<const DnnSpec> dnns, const AllocationState& state,
                               std::span<const DeviceSpec> devices, std::size_t workload_images) const = 0;

  // Whether several evaluations may run at the same time.
  virtual bool concurrent() const noexcept { return false; }
};

// Deterministic stand-in for real hardware:
//   memory(d, b) = weight_bytes + activation_bytes_per_image * b
//   speed(d, dev, b) = base_ips(d) * speed_factor(dev) * sat(b) / sat(32),
//     sat(b) = b / (b + 16),  base_ips(d) = 1e12 / weight_bytes
//   co-located DNNs share a device: each speed is divided by the resident count
//   ensemble throughput = min over placed DNNs; 0 when any device overflows.
class SimulatorOracle final : public BenchOracle {
 public:
  static constexpr double kSaturation = 16.0;
  static constexpr double kReferenceBatch = 32.0;

  BenchResult evaluate(std::span<const DnnSpec> dnns, const AllocationState& state,
                       std::span<const DeviceSpec> devices, std::size_t workload_images) const override;
  bool concurrent() const noexcept override { return true; }

  static double memory_bytes(const DnnSpec& dnn, int batch) noexcept;
  static double base_ips(const DnnSpec& dnn) noexcept;
};

// Runs `<command> <request.json>` and parses one JSON line
// {"throughput": x, "feasible": true} from its standard output.
class ExternalCommandOracle final : public BenchOracle {
 public:
  explicit ExternalCommandOracle(std::string command);

  BenchResult evaluate(std::span<const DnnSpec> dnns, const AllocationState& state,
                       std::span<const DeviceSpec> devices, std::size_t workload_images) const override;

 private:
  std::string command_;
};

BenchResult simulate_bench(std::span<const DnnSpec> dnns, const AllocationState& state,
                           std::span<const DeviceSpec> devices, std::size_t workload_images = 1000);

// Throws MalformedState unless every placed DNN index is valid and appears in
// at most one list, and list counts match the device list. With
// `require_complete`, every DNN must be placed.
void check_state(const AllocationState& state, std::size_t n_dnns, std::span<const DeviceSpec> devices,
                 bool require_complete);

inline constexpr std::size_t kDefaultWorkloadImages = 1000;

// Worst-fit decreasing with GPU priority: DNNs by weight size descending, each
// onto the least-loaded GPU if the oracle accepts it, else the least-loaded
// CPU, else OutOfMemory.
AllocationState allocate_memory_fit(std::span<const DnnSpec> dnns, std::span<const DeviceSpec> devices,
                                    int default_batch, const BenchOracle& oracle,
                                    std::size_t workload_images = kDefaultWorkloadImages);

// All states one update away: per DNN, every other permitted batch size, then
// every other device. Count n * (|PB| - 1) + n * (M - 1).
std::vector<AllocationState> neighbors(const AllocationState& state, std::span<const int> permitted_batches,
                                       std::span<const DeviceSpec> devices);

struct RefineResult {
  AllocationState state;
  double throughput = 0.0;
  double start_throughput = 0.0;
  std::size_t evaluations = 0;
  std::size_t moves = 0;
};

struct RefineOptions {
  std::size_t max_combi = 500;  // total bench evaluations
  std::size_t workload_images = kDefaultWorkloadImages;
  std::size_t threads = 1;  // honoured only for concurrent oracles
};

// Steepest-ascent local search from `start`: bench every neighbour, move to the
// best strictly better one, stop when none improves or the budget is spent.
RefineResult refine_allocation(std::span<const DnnSpec> dnns, const AllocationState& start,
                               std::span<const DeviceSpec> devices, std::span<const int> permitted_batches,
                               const BenchOracle& oracle, const RefineOptions& options = {});

inline constexpr double kBruteForceMaxStates = 1e6;

struct BruteForceAllocation {
  AllocationState state;
  double throughput = 0.0;
  std::size_t states = 0;
};

// Exhaustive search over every (device, batch) assignment. The first optimum in
// lexicographic order (DNN 0 most significant, devices then batches in list
// order) wins.
BruteForceAllocation brute_force_allocation(std::span<const DnnSpec> dnns, std::span<const DeviceSpec> devices,
                                            std::span<const int> permitted_batches, const BenchOracle& oracle,
                                            std::size_t workload_images = kDefaultWorkloadImages);

std::vector<DeviceSpec> parse_devices(const nlohmann::json& doc);
std::vector<DeviceSpec> load_devices(const std::string& path);
nlohmann::json devices_to_json(std::span<const DeviceSpec> devices);

// {"dnns": [...], "batch": [...], "gpu_lists": [[ids]], "cpu_lists": [[ids]], "throughput": x}
nlohmann::json allocation_to_json(std::span<const DnnSpec> dnns, const AllocationState& state,
                                  std::span<const DeviceSpec> devices, double throughput);

}  // namespace forge
