#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "forge/allocation.hpp"
#include "forge/hpo.hpp"
#include "forge/library.hpp"
#include "forge/selection.hpp"

namespace forge {

inline constexpr std::uint64_t kDefaultSeed = 20210901;

// FORGE_SEED when set and parsable, otherwise kDefaultSeed.
std::uint64_t default_seed();

// Every random stream of a run, derived from one seed.
struct SeedSet {
  std::uint64_t scheduler = 0;
  std::uint64_t cost = 0;
  std::uint64_t predictions = 0;
};
SeedSet derive_seeds(std::uint64_t seed);

// trials.json: {"algo", "eta", "min_resource", "max_resource", "seed", "trials": [...]}
nlohmann::json trials_document(const std::vector<TrialRecord>& trials, const std::string& algo,
                               const SchedulerConfig& config);

nlohmann::json solution_to_json(const EnsembleSolution& solution, std::optional<double> budget,
                                 const std::string& algorithm);
// Reads the "ids" list of a solution document.
std::vector<std::string> solution_ids(const std::filesystem::path& path);

std::vector<DeviceSpec> default_devices();
const std::vector<int>& default_permitted_batches();

// `count` budgets spaced geometrically from the cheapest model to the cost of
// the whole library.
std::vector<double> default_budgets(const ModelLibrary& lib, std::size_t count = 6);

struct AllocationPlan {
  std::vector<DnnSpec> dnns;
  AllocationState start;
  RefineResult refined;
  nlohmann::json to_json(std::span<const DeviceSpec> devices) const;
};

// Memory-fit placement followed by throughput refinement.
AllocationPlan plan_allocation(const ModelLibrary& lib, const std::vector<std::string>& ids,
                               std::span<const DeviceSpec> devices, std::span<const int> permitted_batches,
                               int default_batch, const BenchOracle& oracle, const RefineOptions& options);

struct PipelineConfig {
  std::filesystem::path space_path;
  std::filesystem::path out_dir = "forge-run";
  std::string algo = "asha";
  SchedulerConfig scheduler;
  std::size_t workers = 4;
  CostModel cost_model;
  PredictionGenerator generator;
  double keep_fraction = 0.2;
  std::vector<double> budgets;   // empty: default_budgets of the pruned library
  std::optional<double> budget;  // budget of sol.json; default: middle sweep budget
  std::vector<double> weights{0.1, 0.01, 0.001};
  PenaltyParams penalty;
  std::vector<DeviceSpec> devices;  // empty: default_devices()
  std::vector<int> permitted_batches;
  int default_batch = 32;
  std::size_t max_combi = 500;
  std::size_t threads = 1;
};

struct PipelineArtifacts {
  std::filesystem::path trials;
  std::filesystem::path manifest;
  std::filesystem::path solution;
  std::filesystem::path allocation;
  std::filesystem::path sweep;
};

// hpo -> export -> prune -> multi-weight selection -> allocation, plus a
// budget sweep. Every stage writes its artifact into out_dir.
PipelineArtifacts run_pipeline(const PipelineConfig& config);

struct SweepCsvRow {
  double budget = 0.0;
  double error = 0.0;  // +inf for infeasible rows
  double cost = 0.0;
  std::size_t n_models = 0;
  std::vector<std::string> ids;
};

std::vector<SweepCsvRow> parse_sweep_csv(const std::string& text);

struct ReportRow {
  std::string method;  // "smobf" or "fixed-k"
  double budget = std::numeric_limits<double>::quiet_NaN();
  std::size_t k = 0;
  double error = 0.0;
  double cost = 0.0;
  std::size_t n_models = 0;
  std::string pareto_flag;  // dominated | nondominated | infeasible
  std::optional<double> oracle_error;
  std::optional<bool> oracle_monotone;
};

// One row per sweep budget. With a library, adds fixed-size greedy baseline
// rows (k = 1 .. largest swept ensemble) and the brute-force oracle error per
// budget. A row is dominated when another feasible row is no worse on both
// error and cost and strictly better on one (1e-12 slack on both axes).
std::vector<ReportRow> build_report(const std::vector<SweepCsvRow>& sweep, const ModelLibrary* lib);
std::string report_to_csv(const std::vector<ReportRow>& rows);

}  // namespace forge
