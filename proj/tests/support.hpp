#pragma once

// Fixtures and reference computations shared by the test suites. The
// reference functions deliberately avoid the library's combiners so that they
// can serve as independent checks.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <map>

#include "forge/allocation.hpp"
#include "forge/library.hpp"

namespace forge::testing {

inline std::filesystem::path scratch_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("forge-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline ModelRecord make_model(const std::string& id, double cost, const std::vector<std::vector<double>>& rows,
                              double metric = 0.5, std::uint64_t weight_bytes = 1000) {
  ModelRecord m;
  m.id = id;
  m.cost = cost;
  m.weight_bytes = weight_bytes;
  m.activation_bytes_per_image = 10;
  m.validation_metric = metric;
  m.predictions = std::make_shared<const PredictionMatrix>(PredictionMatrix::from_rows(rows));
  return m;
}

// Random library: every model is a noisy classifier of random strength.
inline ModelLibrary random_library(std::mt19937_64& rng, std::size_t n_models, std::size_t n_samples = 50,
                                   std::size_t n_classes = 4, double min_cost = 1.0, double max_cost = 10.0) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> cls(0, n_classes - 1);
  Labels labels;
  for (std::size_t i = 0; i < n_samples; ++i) labels.classes.push_back(cls(rng));
  std::vector<ModelRecord> models;
  for (std::size_t m = 0; m < n_models; ++m) {
    const double strength = 0.2 + 0.7 * unit(rng);
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < n_samples; ++i) {
      std::vector<double> row(n_classes);
      double total = 0.0;
      for (auto& v : row) total += (v = unit(rng) + 0.05);
      for (auto& v : row) v = (1.0 - strength) * v / total;
      const std::size_t hit = unit(rng) < 0.5 + 0.5 * strength ? labels[i] : cls(rng);
      row[hit] += strength;
      rows.push_back(row);
    }
    char id[32];
    std::snprintf(id, sizeof(id), "m%02zu", m);
    models.push_back(make_model(id, min_cost + (max_cost - min_cost) * unit(rng), rows, unit(rng),
                                1000 + static_cast<std::uint64_t>(unit(rng) * 1e6)));
  }
  return ModelLibrary(std::move(models), std::move(labels));
}

// Mean of -log(p_true) for the plain average of the chosen members.
inline double reference_ce(const ModelLibrary& lib, const std::vector<std::size_t>& members) {
  double total = 0.0;
  for (std::size_t i = 0; i < lib.n_samples(); ++i) {
    double p = 0.0;
    for (auto m : members) p += (*lib[m].predictions)(i, lib.labels()[i]);
    p /= static_cast<double>(members.size());
    total += -std::log(std::max(p, 1e-12));
  }
  return total / static_cast<double>(lib.n_samples());
}

inline double reference_cost(const ModelLibrary& lib, const std::vector<std::size_t>& members) {
  double c = 0.0;
  for (auto m : members) c += lib[m].cost;
  return c;
}

inline std::vector<std::size_t> members_of(std::uint64_t mask, std::size_t n) {
  std::vector<std::size_t> out;
  for (std::size_t m = 0; m < n; ++m)
    if (mask & (std::uint64_t{1} << m)) out.push_back(m);
  return out;
}

// Lowest cross-entropy over every non-empty subset that fits the budget; +inf when none does.
inline double reference_best_error(const ModelLibrary& lib, double budget) {
  double best = std::numeric_limits<double>::infinity();
  const std::size_t n = lib.size();
  for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << n); ++mask) {
    auto members = members_of(mask, n);
    if (reference_cost(lib, members) > budget + 1e-9 * std::max(1.0, budget)) continue;
    best = std::min(best, reference_ce(lib, members));
  }
  return best;
}

// (1 - w) * CE + w * C / B + penalty with the default coefficients.
inline double reference_score(const ModelLibrary& lib, const std::vector<std::size_t>& members, double w,
                              double budget) {
  if (members.empty()) return std::numeric_limits<double>::infinity();
  const double c = reference_cost(lib, members);
  double pen = 0.0;
  if (c > budget) pen = 10.0 + (c - budget) * (c - budget);
  return (1.0 - w) * reference_ce(lib, members) + w * c / budget + pen;
}

// Throughput straight from the simulator formulas, given each DNN's device.
inline double reference_throughput(const std::vector<DnnSpec>& dnns, const std::vector<std::size_t>& where,
                                   const std::vector<int>& batch, const std::vector<DeviceSpec>& devices) {
  std::map<std::size_t, std::size_t> residents;
  std::map<std::size_t, double> memory;
  for (std::size_t i = 0; i < dnns.size(); ++i) {
    ++residents[where[i]];
    memory[where[i]] += static_cast<double>(dnns[i].weight_bytes) +
                        static_cast<double>(dnns[i].activation_bytes_per_image) * batch[i];
  }
  for (auto [d, m] : memory)
    if (m > devices[d].memory_capacity) return 0.0;
  double slowest = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < dnns.size(); ++i) {
    const double b = batch[i];
    const double ips = 1e12 / static_cast<double>(dnns[i].weight_bytes);
    const double speed = ips * devices[where[i]].speed_factor * (b / (b + 16.0)) / (32.0 / 48.0);
    slowest = std::min(slowest, speed / static_cast<double>(residents[where[i]]));
  }
  return slowest;
}

// Best throughput over every (device, batch) choice per DNN.
inline double reference_best_throughput(const std::vector<DnnSpec>& dnns, const std::vector<DeviceSpec>& devices,
                                        const std::vector<int>& pb) {
  const std::size_t n = dnns.size(), choices = devices.size() * pb.size();
  std::vector<std::size_t> digit(n, 0), where(n);
  std::vector<int> batch(n);
  double best = 0.0;
  while (true) {
    for (std::size_t i = 0; i < n; ++i) {
      where[i] = digit[i] / pb.size();
      batch[i] = pb[digit[i] % pb.size()];
    }
    best = std::max(best, reference_throughput(dnns, where, batch, devices));
    std::size_t i = 0;
    while (i < n && ++digit[i] == choices) digit[i++] = 0;
    if (i == n) return best;
  }
}

}  // namespace forge::testing
