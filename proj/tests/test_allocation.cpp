#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "forge/allocation.hpp"
#include "forge/error.hpp"
#include "support.hpp"

using namespace forge;
using forge::testing::reference_throughput;

namespace {

DeviceSpec gpu(const std::string& id, double mem, double speed = 1.0) { return {id, DeviceKind::GPU, mem, speed}; }
DeviceSpec cpu(const std::string& id, double mem, double speed = 0.1) { return {id, DeviceKind::CPU, mem, speed}; }

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no forge::Error thrown";
  return Errc::BadArgument;
}

AllocationState make_state(const std::vector<std::size_t>& where, const std::vector<int>& batch,
                           const std::vector<DeviceSpec>& devices) {
  AllocationState s = empty_state(where.size(), devices, 32);
  s.batch = batch;
  for (std::size_t i = 0; i < where.size(); ++i) place(s, devices, i, where[i]);
  return s;
}

struct Instance {
  std::vector<DnnSpec> dnns;
  std::vector<DeviceSpec> devices;
  std::vector<int> pb;
};

Instance random_instance(std::mt19937_64& rng, std::size_t n, std::size_t n_gpu, std::size_t n_cpu,
                         std::size_t n_pb) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Instance inst;
  for (std::size_t i = 0; i < n; ++i)
    inst.dnns.push_back({"d" + std::to_string(i), static_cast<std::uint64_t>(5e7 + u(rng) * 9.5e8),
                         static_cast<std::uint64_t>(1e5 + u(rng) * 1e7)});
  for (std::size_t g = 0; g < n_gpu; ++g) inst.devices.push_back(gpu("g" + std::to_string(g), 1e9 + u(rng) * 3e9, 0.5 + u(rng)));
  for (std::size_t c = 0; c < n_cpu; ++c) inst.devices.push_back(cpu("c" + std::to_string(c), 2e10, 0.05 + 0.2 * u(rng)));
  const std::vector<int> all{8, 16, 32, 64, 128, 256};
  inst.pb.assign(all.begin(), all.begin() + static_cast<long>(n_pb));
  if (std::find(inst.pb.begin(), inst.pb.end(), 32) == inst.pb.end()) inst.pb.push_back(32);
  return inst;
}

}  // namespace

TEST(Simulator, SoloAtReferenceBatch) {
  std::vector<DnnSpec> dnns{{"a", 1'000'000'000, 1000}};
  std::vector<DeviceSpec> devices{gpu("g", 4e9, 1.5)};
  auto r = simulate_bench(dnns, make_state({0}, {32}, devices), devices);
  ASSERT_TRUE(r.feasible);
  EXPECT_DOUBLE_EQ(r.throughput, 1000.0 * 1.5);
  EXPECT_DOUBLE_EQ(r.per_device_memory[0], 1e9 + 32000.0);
}

TEST(Simulator, ColocationHalvesSpeed) {
  std::vector<DnnSpec> dnns{{"a", 500'000'000, 0}, {"b", 500'000'000, 0}};
  std::vector<DeviceSpec> devices{gpu("g", 4e9)};
  auto solo = simulate_bench(std::span(dnns).first(1), make_state({0}, {32}, devices), devices);
  auto both = simulate_bench(dnns, make_state({0, 0}, {32, 32}, devices), devices);
  EXPECT_DOUBLE_EQ(both.throughput, solo.throughput / 2.0);
}

TEST(Simulator, OverflowIsInfeasible) {
  std::vector<DnnSpec> dnns{{"a", 5'000'000'000, 0}};
  std::vector<DeviceSpec> devices{gpu("g", 4e9), cpu("c", 4.5e9)};
  for (std::size_t d : {0u, 1u}) {
    auto r = simulate_bench(dnns, make_state({d}, {32}, devices), devices);
    EXPECT_FALSE(r.feasible);
    EXPECT_EQ(r.throughput, 0.0);
  }
}

TEST(Simulator, MatchesReferenceAndIsDeterministic) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    auto inst = random_instance(rng, 4, 2, 1, 6);
    std::vector<std::size_t> where;
    std::vector<int> batch;
    for (std::size_t i = 0; i < 4; ++i) {
      where.push_back(rng() % inst.devices.size());
      batch.push_back(inst.pb[rng() % inst.pb.size()]);
    }
    auto s = make_state(where, batch, inst.devices);
    auto a = simulate_bench(inst.dnns, s, inst.devices);
    auto b = simulate_bench(inst.dnns, s, inst.devices);
    EXPECT_EQ(a.throughput, b.throughput);
    EXPECT_EQ(a.per_device_memory, b.per_device_memory);
    EXPECT_NEAR(a.throughput, reference_throughput(inst.dnns, where, batch, inst.devices),
                1e-9 * std::max(1.0, a.throughput));
    EXPECT_EQ(a.feasible, a.throughput > 0.0);
  }
}

TEST(Simulator, MemoryGrowsWithBatch) {
  DnnSpec d{"a", 1000, 7};
  for (int b = 1; b < 300; ++b) EXPECT_LT(SimulatorOracle::memory_bytes(d, b), SimulatorOracle::memory_bytes(d, b + 1));
}

TEST(Simulator, MalformedState) {
  std::vector<DnnSpec> dnns{{"a", 1000, 0}};
  std::vector<DeviceSpec> devices{gpu("g", 1e9)};
  AllocationState s = empty_state(1, devices, 32);
  s.gpu_lists[0] = {0, 0};
  EXPECT_EQ(code_of([&] { simulate_bench(dnns, s, devices); }), Errc::MalformedState);
  s.gpu_lists[0] = {3};
  EXPECT_EQ(code_of([&] { simulate_bench(dnns, s, devices); }), Errc::MalformedState);
  s.gpu_lists.push_back({});
  EXPECT_EQ(code_of([&] { simulate_bench(dnns, s, devices); }), Errc::MalformedState);
}

TEST(MemoryFit, SpreadsOverGpus) {
  std::vector<DnnSpec> dnns{{"a", 1000, 0}, {"b", 900, 0}};
  std::vector<DeviceSpec> devices{gpu("g0", 5000), gpu("g1", 5000)};
  SimulatorOracle sim;
  auto s = allocate_memory_fit(dnns, devices, 32, sim);
  EXPECT_EQ(s.gpu_lists, (std::vector<std::vector<std::size_t>>{{0}, {1}}));
  EXPECT_EQ(s.batch, (std::vector<int>{32, 32}));
}

TEST(MemoryFit, LargestFallsBackToCpu) {
  std::vector<DnnSpec> dnns{{"small", 200, 0}, {"big", 5000, 0}, {"mid", 300, 0}};
  std::vector<DeviceSpec> devices{gpu("g0", 1000), gpu("g1", 1000), cpu("c0", 100000)};
  SimulatorOracle sim;
  auto s = allocate_memory_fit(dnns, devices, 32, sim);
  // trace: big -> g0 rejected -> c0; mid -> g0 (both empty, first wins); small -> g1
  EXPECT_EQ(s.cpu_lists, (std::vector<std::vector<std::size_t>>{{1}}));
  EXPECT_EQ(s.gpu_lists, (std::vector<std::vector<std::size_t>>{{2}, {0}}));
}

TEST(MemoryFit, OutOfMemory) {
  std::vector<DnnSpec> dnns{{"huge", 1'000'000, 0}};
  std::vector<DeviceSpec> devices{gpu("g0", 1000), cpu("c0", 2000)};
  SimulatorOracle sim;
  EXPECT_EQ(code_of([&] { allocate_memory_fit(dnns, devices, 32, sim); }), Errc::OutOfMemory);
  EXPECT_EQ(code_of([&] { allocate_memory_fit(dnns, {}, 32, sim); }), Errc::BadArgument);
}

TEST(MemoryFit, AlwaysFeasibleOrOutOfMemory) {
  std::mt19937_64 rng(2);
  SimulatorOracle sim;
  int placed = 0, oom = 0;
  for (int t = 0; t < 200; ++t) {
    auto inst = random_instance(rng, 1 + rng() % 8, 1 + rng() % 3, rng() % 2, 6);
    try {
      auto s = allocate_memory_fit(inst.dnns, inst.devices, 32, sim);
      check_state(s, inst.dnns.size(), inst.devices, true);
      EXPECT_TRUE(simulate_bench(inst.dnns, s, inst.devices).feasible);
      ++placed;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::OutOfMemory);
      ++oom;
    }
  }
  EXPECT_GT(placed, 0);
  EXPECT_GT(oom, 0);
}

TEST(Neighbors, Examples) {
  std::vector<DeviceSpec> two{gpu("g0", 1e9), gpu("g1", 1e9)};
  const std::vector<int> pb2{8, 16};
  EXPECT_EQ(neighbors(make_state({0}, {8}, two), pb2, two).size(), 2u);

  std::vector<DeviceSpec> seven;
  for (int g = 0; g < 5; ++g) seven.push_back(gpu("g" + std::to_string(g), 1e9));
  seven.push_back(cpu("c0", 1e10));
  seven.push_back(cpu("c1", 1e10));
  const std::vector<int> pb6{8, 16, 32, 64, 128, 256};
  auto start = make_state({0, 5}, {32, 8}, seven);
  auto n = neighbors(start, pb6, seven);
  EXPECT_EQ(n.size(), 22u);
  for (const auto& s : n) {
    EXPECT_NE(s, start);
    check_state(s, 2, seven, true);
  }
  EXPECT_TRUE(neighbors(empty_state(0, seven, 32), pb6, seven).empty());
}

TEST(Neighbors, CountFormula) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + rng() % 6, n_gpu = 1 + rng() % 4, n_cpu = rng() % 3, n_pb = 1 + rng() % 6;
    auto inst = random_instance(rng, n, n_gpu, n_cpu, n_pb);
    std::vector<std::size_t> where;
    std::vector<int> batch;
    for (std::size_t i = 0; i < n; ++i) {
      where.push_back(rng() % inst.devices.size());
      batch.push_back(inst.pb[rng() % inst.pb.size()]);
    }
    auto start = make_state(where, batch, inst.devices);
    auto list = neighbors(start, inst.pb, inst.devices);
    const std::size_t M = inst.devices.size();
    EXPECT_EQ(list.size(), n * (inst.pb.size() - 1) + n * (M - 1));
    std::sort(list.begin(), list.end());
    EXPECT_EQ(std::adjacent_find(list.begin(), list.end()), list.end());
  }
}

TEST(Refine, LocalOptimumIsReturnedUnchanged) {
  std::vector<DnnSpec> dnns{{"a", 1'000'000'000, 0}};
  std::vector<DeviceSpec> devices{gpu("g0", 4e9)};
  const std::vector<int> pb{8, 16, 32};
  SimulatorOracle sim;
  // alone on the only device at the largest batch: nothing to improve
  auto start = make_state({0}, {32}, devices);
  auto r = refine_allocation(dnns, start, devices, pb, sim);
  EXPECT_EQ(r.state, start);
  EXPECT_EQ(r.moves, 0u);
  EXPECT_EQ(r.throughput, r.start_throughput);
}

TEST(Refine, SplitsCrowdedGpu) {
  std::vector<DnnSpec> dnns{{"a", 500'000'000, 0}, {"b", 500'000'000, 0}};
  std::vector<DeviceSpec> devices{gpu("g0", 4e9), gpu("g1", 4e9)};
  const std::vector<int> pb{32};
  SimulatorOracle sim;
  auto start = make_state({0, 0}, {32, 32}, devices);
  auto r = refine_allocation(dnns, start, devices, pb, sim);
  EXPECT_GT(r.throughput, r.start_throughput);
  EXPECT_EQ(r.state.gpu_lists[0].size(), 1u);
  EXPECT_EQ(r.state.gpu_lists[1].size(), 1u);
  EXPECT_DOUBLE_EQ(r.throughput, 2 * r.start_throughput);
}

TEST(Refine, ZeroBudget) {
  std::vector<DnnSpec> dnns{{"a", 500'000'000, 0}, {"b", 500'000'000, 0}};
  std::vector<DeviceSpec> devices{gpu("g0", 4e9), gpu("g1", 4e9)};
  const std::vector<int> pb{32};
  SimulatorOracle sim;
  auto start = make_state({0, 0}, {32, 32}, devices);
  RefineOptions opt;
  opt.max_combi = 0;
  auto r = refine_allocation(dnns, start, devices, pb, sim, opt);
  EXPECT_EQ(r.state, start);
  EXPECT_EQ(r.evaluations, 0u);
}

TEST(Refine, InfeasibleStart) {
  std::vector<DnnSpec> dnns{{"a", 5'000'000'000, 0}};
  std::vector<DeviceSpec> devices{gpu("g0", 4e9)};
  const std::vector<int> pb{32};
  SimulatorOracle sim;
  EXPECT_EQ(code_of([&] { refine_allocation(dnns, make_state({0}, {32}, devices), devices, pb, sim); }),
            Errc::InfeasibleStart);
}

TEST(Refine, EvaluationBudgetIsHonoured) {
  std::mt19937_64 rng(4);
  SimulatorOracle sim;
  for (int t = 0; t < 30; ++t) {
    auto inst = random_instance(rng, 5, 3, 1, 6);
    AllocationState start;
    try {
      start = allocate_memory_fit(inst.dnns, inst.devices, 32, sim);
    } catch (const Error&) {
      continue;
    }
    RefineOptions opt;
    opt.max_combi = 1 + rng() % 80;
    auto r = refine_allocation(inst.dnns, start, inst.devices, inst.pb, sim, opt);
    EXPECT_LE(r.evaluations, opt.max_combi);
    EXPECT_GE(r.throughput, r.start_throughput);
  }
}

TEST(Refine, ThreadsDoNotChangeResult) {
  std::mt19937_64 rng(5);
  SimulatorOracle sim;
  for (int t = 0; t < 10; ++t) {
    auto inst = random_instance(rng, 6, 3, 1, 6);
    AllocationState start;
    try {
      start = allocate_memory_fit(inst.dnns, inst.devices, 32, sim);
    } catch (const Error&) {
      continue;
    }
    RefineOptions serial, parallel;
    parallel.threads = 4;
    auto a = refine_allocation(inst.dnns, start, inst.devices, inst.pb, sim, serial);
    auto b = refine_allocation(inst.dnns, start, inst.devices, inst.pb, sim, parallel);
    EXPECT_EQ(a.state, b.state);
    EXPECT_EQ(a.throughput, b.throughput);
  }
}

TEST(BruteForce, SingleDnn) {
  std::vector<DnnSpec> dnns{{"a", 1'000'000'000, 1'000'000}};
  std::vector<DeviceSpec> devices{gpu("g0", 1.1e9, 1.0), gpu("g1", 4e9, 0.9)};
  const std::vector<int> pb{8, 64, 256};
  SimulatorOracle sim;
  auto r = brute_force_allocation(dnns, devices, pb, sim);
  EXPECT_EQ(r.states, 6u);
  double best = 0.0;
  for (std::size_t d = 0; d < 2; ++d)
    for (int b : pb) best = std::max(best, reference_throughput(dnns, {d}, {b}, devices));
  EXPECT_DOUBLE_EQ(r.throughput, best);
}

TEST(BruteForce, ThreeByThreeByTwoBracketsRefine) {
  std::mt19937_64 rng(6);
  SimulatorOracle sim;
  auto inst = random_instance(rng, 3, 2, 1, 1);
  inst.pb = {16, 64};
  auto bf = brute_force_allocation(inst.dnns, inst.devices, inst.pb, sim);
  EXPECT_EQ(bf.states, 216u);
  // independent enumeration
  double best = 0.0;
  for (std::size_t code = 0; code < 216; ++code) {
    std::vector<std::size_t> where(3);
    std::vector<int> batch(3);
    std::size_t c = code;
    for (std::size_t i = 0; i < 3; ++i) {
      where[i] = (c % 6) / 2;
      batch[i] = inst.pb[c % 2];
      c /= 6;
    }
    best = std::max(best, reference_throughput(inst.dnns, where, batch, inst.devices));
  }
  EXPECT_NEAR(bf.throughput, best, 1e-9 * best);
  auto start = allocate_memory_fit(inst.dnns, inst.devices, 16, sim);
  auto r = refine_allocation(inst.dnns, start, inst.devices, inst.pb, sim);
  EXPECT_LE(r.throughput, bf.throughput * (1 + 1e-12));
  EXPECT_GE(r.throughput, r.start_throughput);
}

TEST(BruteForce, Guard) {
  std::vector<DnnSpec> dnns(14, DnnSpec{"d", 1000, 0});
  std::vector<DeviceSpec> devices;
  for (int d = 0; d < 7; ++d) devices.push_back(gpu("g" + std::to_string(d), 1e9));
  const std::vector<int> pb{8, 16, 32, 64, 128, 256};
  SimulatorOracle sim;
  EXPECT_EQ(code_of([&] { brute_force_allocation(dnns, devices, pb, sim); }), Errc::TooLarge);
}

TEST(Devices, ParseAndRoundTrip) {
  auto doc = nlohmann::json::parse(R"([{"id":"g","kind":"gpu","memory_capacity":4e9,"speed_factor":1.2},
                                       {"id":"c","kind":"CPU","memory_capacity":1.6e10}])");
  auto devices = parse_devices(doc);
  ASSERT_EQ(devices.size(), 2u);
  EXPECT_EQ(devices[0].kind, DeviceKind::GPU);
  EXPECT_EQ(devices[1].speed_factor, 1.0);
  EXPECT_EQ(parse_devices(devices_to_json(devices)).size(), 2u);
  EXPECT_EQ(code_of([] { parse_devices(nlohmann::json::parse(R"([{"kind":"TPU","memory_capacity":1}])")); }),
            Errc::SchemaError);
  EXPECT_EQ(code_of([] { parse_devices(nlohmann::json::parse(R"([{"kind":"GPU","memory_capacity":0}])")); }),
            Errc::SchemaError);
}

TEST(ExternalOracle, ParsesThroughputLine) {
  auto dir = forge::testing::scratch_dir("oracle");
  const auto script = dir / "bench.sh";
  {
    std::ofstream out(script);
    out << "#!/bin/sh\n"
           "test -s \"$1\" || exit 3\n"
           "echo warming up\n"
           "echo '{\"throughput\": 42.5, \"feasible\": true}'\n";
  }
  std::filesystem::permissions(script, std::filesystem::perms::owner_all);
  std::vector<DnnSpec> dnns{{"a", 1000, 0}};
  std::vector<DeviceSpec> devices{gpu("g0", 1e9)};
  ExternalCommandOracle oracle(script.string());
  auto r = oracle.evaluate(dnns, make_state({0}, {32}, devices), devices, 100);
  EXPECT_TRUE(r.feasible);
  EXPECT_EQ(r.throughput, 42.5);
  EXPECT_FALSE(oracle.concurrent());

  ExternalCommandOracle silent("true");
  EXPECT_EQ(code_of([&] { silent.evaluate(dnns, make_state({0}, {32}, devices), devices, 100); }),
            Errc::ParseError);
  ExternalCommandOracle failing("false");
  EXPECT_EQ(code_of([&] { failing.evaluate(dnns, make_state({0}, {32}, devices), devices, 100); }),
            Errc::IoError);
}
