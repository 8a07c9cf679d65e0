#include "forge/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "forge/error.hpp"
#include "text.hpp"

namespace forge {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t default_seed() {
  if (const char* env = std::getenv("FORGE_SEED")) {
    if (auto v = text::parse_int<std::uint64_t>(env)) return *v;
  }
  return kDefaultSeed;
}

SeedSet derive_seeds(std::uint64_t seed) {
  return {seed, hash_mix(seed, "cost-model"), hash_mix(seed, "predictions")};
}

json trials_document(const std::vector<TrialRecord>& trials, const std::string& algo, const SchedulerConfig& config) {
  return {{"algo", algo},
          {"eta", config.eta},
          {"min_resource", config.min_resource},
          {"max_resource", config.max_resource},
          {"seed", config.seed},
          {"total_epochs", total_resource(trials)},
          {"trials", trials_to_json(trials)}};
}

json solution_to_json(const EnsembleSolution& s, std::optional<double> budget, const std::string& algorithm) {
  auto number_or_null = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json out = {{"algorithm", algorithm},
              {"ids", s.ids},
              {"error", {{"name", to_string(s.error.name)}, {"value", s.error.value}}},
              {"cost", s.cost},
              {"normalized_cost", number_or_null(s.normalized_cost)},
              {"score", number_or_null(s.score)},
              {"w", number_or_null(s.w)},
              {"feasible", s.feasible},
              {"step_scores", s.step_scores}};
  out["budget"] = budget ? json(*budget) : json(nullptr);
  return out;
}

std::vector<std::string> solution_ids(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::MissingFile, "cannot open solution " + path.string());
  try {
    auto doc = json::parse(in);
    return doc.at("ids").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaError, "solution " + path.string() + ": " + e.what());
  }
}

std::vector<DeviceSpec> default_devices() {
  return {{"gpu0", DeviceKind::GPU, 4e9, 1.0}, {"gpu1", DeviceKind::GPU, 4e9, 1.0}, {"cpu0", DeviceKind::CPU, 6.4e10, 0.15}};
}

const std::vector<int>& default_permitted_batches() {
  static const std::vector<int> pb{8, 16, 32, 64, 128, 256};
  return pb;
}

std::vector<double> default_budgets(const ModelLibrary& lib, std::size_t count) {
  if (lib.empty()) throw Error(Errc::EmptyLibrary, "no models to derive budgets from");
  double lo = std::numeric_limits<double>::infinity();
  double total = 0.0;
  for (const auto& m : lib.models()) {
    lo = std::min(lo, m.cost);
    total += m.cost;
  }
  std::vector<double> out;
  if (count <= 1 || total <= lo) return {total};
  for (std::size_t i = 0; i < count; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(count - 1);
    // Rounded up to 1e-3 so the file stays readable and the first budget still fits the cheapest model.
    out.push_back(std::ceil(lo * std::pow(total / lo, t) * 1000.0) / 1000.0);
  }
  return out;
}

json AllocationPlan::to_json(std::span<const DeviceSpec> devices) const {
  json out = allocation_to_json(dnns, refined.state, devices, refined.throughput);
  out["start"] = allocation_to_json(dnns, start, devices, refined.start_throughput);
  out["evaluations"] = refined.evaluations;
  out["moves"] = refined.moves;
  return out;
}

AllocationPlan plan_allocation(const ModelLibrary& lib, const std::vector<std::string>& ids,
                               std::span<const DeviceSpec> devices, std::span<const int> permitted_batches,
                               int default_batch, const BenchOracle& oracle, const RefineOptions& options) {
  AllocationPlan plan;
  for (auto i : resolve_ids(lib, ids)) plan.dnns.push_back(dnn_from_model(lib[i]));
  if (plan.dnns.empty()) throw Error(Errc::BadArgument, "solution selects no models");
  plan.start = allocate_memory_fit(plan.dnns, devices, default_batch, oracle, options.workload_images);
  plan.refined = refine_allocation(plan.dnns, plan.start, devices, permitted_batches, oracle, options);
  return plan;
}

namespace {

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << content;
  out.flush();
  if (!out) throw Error(Errc::IoError, "failed writing " + path.string());
}

}  // namespace

PipelineArtifacts run_pipeline(const PipelineConfig& config) {
  if (config.space_path.empty()) throw Error(Errc::BadArgument, "a hyperparameter space file is required");
  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  if (!fs::is_directory(config.out_dir)) throw Error(Errc::IoError, "cannot create " + config.out_dir.string());

  PipelineArtifacts out{config.out_dir / "trials.json", config.out_dir / "manifest.json",
                        config.out_dir / "sol.json", config.out_dir / "alloc.json", config.out_dir / "sweep.csv"};

  // 1. trials
  const auto space = HyperparameterSpace::load(config.space_path);
  SyntheticObjective objective(config.scheduler.seed);
  std::vector<TrialRecord> trials;
  if (config.algo == "asha") {
    trials = run_asha(space, objective, config.scheduler, config.workers, Executor::virtual_clock);
  } else if (config.algo == "random") {
    trials = run_random_search(space, objective, config.scheduler, config.workers, Executor::virtual_clock);
  } else {
    throw Error(Errc::BadArgument, "unknown algorithm '" + config.algo + "'");
  }
  write_text(out.trials, trials_document(trials, config.algo, config.scheduler).dump(2) + "\n");

  // 2. library
  export_library(trials, config.cost_model, config.generator, out.manifest);
  const ModelLibrary full = load_library(out.manifest);
  const ModelLibrary lib = prune_library(full, config.keep_fraction);
  save_library(lib, config.out_dir / "pruned");

  // 3. selection
  const auto budgets = config.budgets.empty() ? default_budgets(lib) : config.budgets;
  const double budget = config.budget ? *config.budget : budgets[budgets.size() / 2];
  SelectionOptions options;
  options.threads = config.threads;
  const auto solution = smobf_multi_w(lib, BudgetSpec{budget, config.weights}, config.penalty, options);
  write_text(out.solution, solution_to_json(solution, budget, "smobf").dump(2) + "\n");

  // 4. allocation
  const auto devices = config.devices.empty() ? default_devices() : config.devices;
  const auto& pb = config.permitted_batches.empty() ? default_permitted_batches() : config.permitted_batches;
  RefineOptions refine;
  refine.max_combi = config.max_combi;
  refine.threads = config.threads;
  SimulatorOracle oracle;
  const auto plan = plan_allocation(lib, solution.ids, devices, pb, config.default_batch, oracle, refine);
  write_text(out.allocation, plan.to_json(devices).dump(2) + "\n");

  // 5. sweep
  write_text(out.sweep, sweep_to_csv(budget_sweep(lib, budgets, config.weights, config.penalty, options)));
  return out;
}

std::vector<SweepCsvRow> parse_sweep_csv(const std::string& content) {
  std::istringstream in(content);
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != "budget,error,cost,n_models,ids")
    throw Error(Errc::ParseError, "sweep file must start with 'budget,error,cost,n_models,ids'");
  std::vector<SweepCsvRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    auto cells = text::split(text::trim(line), ',');
    if (cells.size() != 5) throw Error(Errc::ParseError, "sweep line " + std::to_string(lineno) + ": expected 5 cells");
    SweepCsvRow row;
    auto budget = text::parse_double(cells[0]);
    auto cost = text::parse_double(cells[2]);
    auto n = text::parse_int<std::size_t>(cells[3]);
    std::optional<double> error =
        text::trim(cells[1]) == "inf" ? std::optional<double>(std::numeric_limits<double>::infinity())
                                      : text::parse_double(cells[1]);
    if (!budget || !cost || !n || !error)
      throw Error(Errc::ParseError, "sweep line " + std::to_string(lineno) + ": unparsable value");
    row.budget = *budget;
    row.error = *error;
    row.cost = *cost;
    row.n_models = *n;
    if (!text::trim(cells[4]).empty())
      for (auto id : text::split(text::trim(cells[4]), ';')) row.ids.emplace_back(id);
    if (row.ids.size() != row.n_models)
      throw Error(Errc::ParseError, "sweep line " + std::to_string(lineno) + ": n_models disagrees with ids");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(Errc::ParseError, "sweep file has no rows");
  return rows;
}

namespace {
// Errors of the same ensemble differ in the last bits when members are summed in another order.
constexpr double kReportTolerance = 1e-12;
}  // namespace

std::vector<ReportRow> build_report(const std::vector<SweepCsvRow>& sweep, const ModelLibrary* lib) {
  if (sweep.empty()) throw Error(Errc::ParseError, "empty sweep");
  std::vector<ReportRow> rows;
  std::size_t largest = 1;
  std::optional<double> previous_oracle;
  for (const auto& s : sweep) {
    ReportRow r;
    r.method = "smobf";
    r.budget = s.budget;
    r.error = s.error;
    r.cost = s.cost;
    r.n_models = s.n_models;
    r.k = s.n_models;
    largest = std::max(largest, s.n_models);
    if (lib && lib->size() <= kBruteForceMaxModels) {
      double oracle = std::numeric_limits<double>::infinity();
      try {
        oracle = brute_force_best(*lib, s.budget).error.value;
      } catch (const Error& e) {
        if (e.code() != Errc::InfeasibleBudget) throw;
      }
      r.oracle_error = oracle;
      r.oracle_monotone = !previous_oracle || oracle <= *previous_oracle + kReportTolerance;
      previous_oracle = oracle;
    }
    rows.push_back(std::move(r));
  }
  if (lib) {
    for (std::size_t k = 1; k <= std::min(largest, lib->size()); ++k) {
      auto sol = forward_greedy_fixed_size(*lib, k);
      ReportRow r;
      r.method = "fixed-k";
      r.k = k;
      r.error = sol.error.value;
      r.cost = sol.cost;
      r.n_models = k;
      rows.push_back(std::move(r));
    }
  }
  for (auto& r : rows) {
    if (!std::isfinite(r.error)) {
      r.pareto_flag = "infeasible";
      continue;
    }
    bool dominated = false;
    for (const auto& other : rows) {
      if (&other == &r || !std::isfinite(other.error)) continue;
      const bool no_worse = other.error <= r.error + kReportTolerance && other.cost <= r.cost + kReportTolerance;
      const bool better = other.error < r.error - kReportTolerance || other.cost < r.cost - kReportTolerance;
      if (no_worse && better) {
        dominated = true;
        break;
      }
    }
    r.pareto_flag = dominated ? "dominated" : "nondominated";
  }
  return rows;
}

std::string report_to_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  out << "method,budget,k,error,cost,n_models,pareto_flag,oracle_error,oracle_monotone\n";
  for (const auto& r : rows) {
    out << r.method << ',' << (std::isnan(r.budget) ? "" : text::format_double(r.budget)) << ',' << r.k << ','
        << (std::isfinite(r.error) ? text::format_double(r.error) : "inf") << ',' << text::format_double(r.cost)
        << ',' << r.n_models << ',' << r.pareto_flag << ',';
    if (r.oracle_error) out << (std::isfinite(*r.oracle_error) ? text::format_double(*r.oracle_error) : "inf");
    out << ',';
    if (r.oracle_monotone) out << (*r.oracle_monotone ? "true" : "false");
    out << '\n';
  }
  return out.str();
}

}  // namespace forge
