// forge: command-line front end for the library, selection, allocation and
// trial-scheduling stages.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "forge/allocation.hpp"
#include "forge/combiners.hpp"
#include "forge/error.hpp"
#include "forge/hpo.hpp"
#include "forge/library.hpp"
#include "forge/pipeline.hpp"
#include "forge/selection.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;

int verbosity = 0;

void log(const std::string& msg) {
  if (verbosity > 0) std::cerr << "forge: " << msg << '\n';
}

void emit(const std::string& content, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << content;
    return;
  }
  const fs::path p(out);
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
  }
  std::ofstream f(p, std::ios::binary);
  if (!f) throw forge::Error(forge::Errc::IoError, "cannot write " + out);
  f << content;
  if (!f.flush()) throw forge::Error(forge::Errc::IoError, "failed writing " + out);
  log("wrote " + out);
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw forge::Error(forge::Errc::MissingFile, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw forge::Error(forge::Errc::ParseError, path + ": " + e.what());
  }
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw forge::Error(forge::Errc::MissingFile, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) { return flag ? *flag : forge::default_seed(); }

forge::ModelLibrary load_maybe_pruned(const std::string& manifest, std::optional<double> keep) {
  auto lib = forge::load_library(manifest);
  if (keep) lib = forge::prune_library(lib, *keep);
  return lib;
}

std::unique_ptr<forge::BenchOracle> make_oracle(const std::string& choice) {
  if (choice == "sim") return std::make_unique<forge::SimulatorOracle>();
  if (choice.rfind("cmd:", 0) == 0 && choice.size() > 4) return std::make_unique<forge::ExternalCommandOracle>(choice.substr(4));
  throw CLI::ValidationError("--oracle", "expected 'sim' or 'cmd:<path>'");
}

forge::SchedulerConfig scheduler_config(int eta, int min_r, int max_r, std::size_t trials, std::uint64_t seed) {
  forge::SchedulerConfig c;
  c.eta = eta;
  c.min_resource = min_r;
  c.max_resource = max_r;
  c.max_trials = trials;
  c.seed = seed;
  c.validate();
  return c;
}

std::string fixed_k_value(const std::string& baseline) {
  const std::string prefix = "fixed-k=";
  if (baseline.rfind(prefix, 0) != 0) throw CLI::ValidationError("--baseline", "expected fixed-k=K");
  return baseline.substr(prefix.size());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Budgeted ensemble selection, trial scheduling and inference placement"};
  app.require_subcommand(1);
  app.add_flag("-v,--verbose", verbosity, "Progress messages on stderr");
  std::optional<std::uint64_t> seed_flag;
  app.add_option("--seed", seed_flag, "Seed for every random stream (default: $FORGE_SEED or a fixed constant)");

  // library
  auto* library = app.add_subcommand("library", "Validate or prune a model library");
  library->require_subcommand(1);
  std::string lib_manifest;
  auto* validate = library->add_subcommand("validate", "Load a manifest and check every invariant");
  validate->add_option("manifest", lib_manifest, "Manifest JSON")->required();
  double keep = 0.2;
  std::string prune_out;
  auto* prune = library->add_subcommand("prune", "Keep the top fraction of models by validation metric");
  prune->add_option("manifest", lib_manifest, "Manifest JSON")->required();
  prune->add_option("--keep", keep, "Fraction of models to keep, in (0, 1]")->capture_default_str();
  prune->add_option("--out", prune_out, "Output directory")->required();

  // select
  auto* select = app.add_subcommand("select", "Budget-constrained ensemble selection");
  std::string manifest;
  std::optional<double> budget;
  std::vector<double> weights{0.1, 0.01, 0.001};
  std::optional<double> prune_keep;
  std::string baseline;
  std::string metric_name = "cross_entropy";
  std::size_t threads = 1;
  std::string out;
  select->add_option("--manifest", manifest, "Manifest JSON")->required();
  select->add_option("--budget", budget, "Cost budget B");
  select->add_option("--w", weights, "Scalarization weights")->delimiter(',')->capture_default_str();
  select->add_option("--prune", prune_keep, "Prune the library to this fraction first");
  select->add_option("--baseline", baseline, "Run a baseline instead: fixed-k=K");
  select->add_option("--metric", metric_name, "cross_entropy | error_rate | macro_f1")->capture_default_str();
  select->add_option("--threads", threads, "Threads for candidate scoring")->capture_default_str();
  select->add_option("--out", out, "Solution JSON (default: stdout)");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Run the selection over a list of budgets");
  std::vector<double> budgets;
  sweep->add_option("--manifest", manifest, "Manifest JSON")->required();
  sweep->add_option("--budgets", budgets, "Ascending budgets")->delimiter(',')->required();
  sweep->add_option("--w", weights, "Scalarization weights")->delimiter(',')->capture_default_str();
  sweep->add_option("--prune", prune_keep, "Prune the library to this fraction first");
  sweep->add_option("--threads", threads, "Threads for candidate scoring")->capture_default_str();
  sweep->add_option("--out", out, "Sweep CSV (default: stdout)");

  // allocate
  auto* allocate = app.add_subcommand("allocate", "Place an ensemble on CPUs and GPUs");
  std::string solution_path;
  std::string devices_path;
  std::vector<int> pb(forge::default_permitted_batches());
  std::size_t max_combi = 500;
  std::string oracle_spec = "sim";
  int default_batch = 32;
  allocate->add_option("--manifest", manifest, "Manifest JSON")->required();
  allocate->add_option("--solution", solution_path, "Solution JSON from select")->required();
  allocate->add_option("--devices", devices_path, "Device list JSON (default: two GPUs and one CPU)");
  allocate->add_option("--pb", pb, "Permitted batch sizes")->delimiter(',')->capture_default_str();
  allocate->add_option("--max-combi", max_combi, "Bench evaluations for refinement")->capture_default_str();
  allocate->add_option("--oracle", oracle_spec, "sim | cmd:<path>")->capture_default_str();
  allocate->add_option("--batch", default_batch, "Batch size of the starting allocation")->capture_default_str();
  allocate->add_option("--threads", threads, "Threads for simulator benches")->capture_default_str();
  allocate->add_option("--out", out, "Allocation JSON (default: stdout)");

  // eval
  auto* eval = app.add_subcommand("eval", "Combine a set of models and report every metric");
  std::vector<std::string> ids;
  std::string combiner = "average";
  std::vector<double> eval_weights;
  eval->add_option("--manifest", manifest, "Manifest JSON")->required();
  eval->add_option("--ids", ids, "Model ids")->delimiter(',');
  eval->add_option("--solution", solution_path, "Take the ids from a solution JSON");
  eval->add_option("--combiner", combiner, "average | weighted | vote")->capture_default_str();
  eval->add_option("--weights", eval_weights, "Weights for the weighted combiner")->delimiter(',');
  eval->add_option("--out", out, "Metrics JSON (default: stdout)");

  // hpo
  auto* hpo = app.add_subcommand("hpo", "Run trials with asynchronous successive halving or random search");
  std::string space_path;
  std::string algo = "asha";
  int eta = 3, min_r = 1, max_r = 81;
  std::size_t n_trials = 64, workers = 4;
  std::string executor = "virtual";
  hpo->add_option("--space", space_path, "Hyperparameter space JSON");
  hpo->add_option("--algo", algo, "asha | random")->check(CLI::IsMember({"asha", "random"}))->capture_default_str();
  hpo->add_option("--eta", eta, "Reduction factor")->capture_default_str();
  hpo->add_option("--min-r", min_r, "Minimum resource (epochs)")->capture_default_str();
  hpo->add_option("--max-r", max_r, "Maximum resource (epochs)")->capture_default_str();
  hpo->add_option("--trials", n_trials, "Number of trials")->capture_default_str();
  hpo->add_option("--workers", workers, "Number of workers")->capture_default_str();
  hpo->add_option("--executor", executor, "virtual (reproducible) | threads")
      ->check(CLI::IsMember({"virtual", "threads"}))
      ->capture_default_str();
  hpo->add_option("--out", out, "Trials JSON (default: stdout)");
  auto* hpo_export = hpo->add_subcommand("export", "Turn a trials file into a model library");
  std::string trials_path;
  std::size_t n_samples = 200, n_classes = 10;
  hpo_export->add_option("--trials", trials_path, "Trials JSON")->required();
  hpo_export->add_option("--out", out, "Manifest path")->required();
  hpo_export->add_option("--samples", n_samples, "Validation samples")->capture_default_str();
  hpo_export->add_option("--classes", n_classes, "Classes")->capture_default_str();

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "hpo, export, prune, select, allocate and sweep in one run");
  std::string out_dir = "forge-run";
  double pipeline_keep = 0.2;
  std::optional<double> pipeline_budget;
  pipeline->add_option("--space", space_path, "Hyperparameter space JSON")->required();
  pipeline->add_option("--out-dir", out_dir, "Directory for every artifact")->capture_default_str();
  pipeline->add_option("--algo", algo, "asha | random")->check(CLI::IsMember({"asha", "random"}))->capture_default_str();
  pipeline->add_option("--eta", eta, "Reduction factor")->capture_default_str();
  pipeline->add_option("--min-r", min_r, "Minimum resource (epochs)")->capture_default_str();
  pipeline->add_option("--max-r", max_r, "Maximum resource (epochs)")->capture_default_str();
  pipeline->add_option("--trials", n_trials, "Number of trials")->capture_default_str();
  pipeline->add_option("--workers", workers, "Number of simulated workers")->capture_default_str();
  pipeline->add_option("--keep", pipeline_keep, "Fraction of the library kept for selection")->capture_default_str();
  pipeline->add_option("--budgets", budgets, "Sweep budgets (default: 6 geometric steps)")->delimiter(',');
  pipeline->add_option("--budget", pipeline_budget, "Budget of sol.json (default: middle sweep budget)");
  pipeline->add_option("--w", weights, "Scalarization weights")->delimiter(',')->capture_default_str();
  pipeline->add_option("--devices", devices_path, "Device list JSON");
  pipeline->add_option("--pb", pb, "Permitted batch sizes")->delimiter(',')->capture_default_str();
  pipeline->add_option("--max-combi", max_combi, "Bench evaluations for refinement")->capture_default_str();
  pipeline->add_option("--samples", n_samples, "Validation samples")->capture_default_str();
  pipeline->add_option("--classes", n_classes, "Classes")->capture_default_str();
  pipeline->add_option("--threads", threads, "Threads for selection and benches")->capture_default_str();

  // report
  auto* report = app.add_subcommand("report", "Plot-ready summary of a sweep with baseline and oracle columns");
  std::string sweep_path;
  report->add_option("--sweep", sweep_path, "Sweep CSV")->required();
  report->add_option("--manifest", manifest, "Library the sweep ran on (enables baseline and oracle columns)");
  report->add_option("--prune", prune_keep, "Prune fraction used for the sweep");
  report->add_option("--out", out, "Report CSV (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", "UsageError"}, {"message", e.what()}}.dump() << '\n';
    return kExitUsage;
  }

  try {
    const std::uint64_t seed = resolve_seed(seed_flag);

    if (validate->parsed()) {
      auto lib = forge::load_library(lib_manifest);
      std::cout << json{{"valid", true},
                        {"models", lib.size()},
                        {"samples", lib.n_samples()},
                        {"classes", lib.n_classes()}}
                       .dump()
                << '\n';
    } else if (prune->parsed()) {
      auto lib = forge::prune_library(forge::load_library(lib_manifest), keep);
      auto path = forge::save_library(lib, prune_out);
      std::cout << json{{"manifest", path.string()}, {"models", lib.size()}}.dump() << '\n';
    } else if (select->parsed()) {
      auto lib = load_maybe_pruned(manifest, prune_keep);
      forge::SelectionOptions options;
      options.metric = forge::parse_error_metric(metric_name);
      options.threads = threads;
      json doc;
      if (!baseline.empty()) {
        const std::string kstr = fixed_k_value(baseline);
        std::size_t k = 0;
        try {
          k = std::stoul(kstr);
        } catch (const std::exception&) {
          throw CLI::ValidationError("--baseline", "K must be a positive integer");
        }
        auto sol = forge::forward_greedy_fixed_size(lib, k, options, budget);
        doc = forge::solution_to_json(sol, budget, "fixed-k");
        doc["k"] = k;
      } else {
        if (!budget) throw CLI::RequiredError("--budget");
        auto sol = forge::smobf_multi_w(lib, forge::BudgetSpec{*budget, weights}, {}, options);
        doc = forge::solution_to_json(sol, budget, "smobf");
      }
      emit(doc.dump(2) + "\n", out);
    } else if (sweep->parsed()) {
      auto lib = load_maybe_pruned(manifest, prune_keep);
      forge::SelectionOptions options;
      options.threads = threads;
      emit(forge::sweep_to_csv(forge::budget_sweep(lib, budgets, weights, {}, options)), out);
    } else if (allocate->parsed()) {
      auto lib = forge::load_library(manifest);
      auto devices = devices_path.empty() ? forge::default_devices() : forge::load_devices(devices_path);
      auto oracle = make_oracle(oracle_spec);
      forge::RefineOptions refine;
      refine.max_combi = max_combi;
      refine.threads = threads;
      auto plan = forge::plan_allocation(lib, forge::solution_ids(solution_path), devices, pb, default_batch,
                                         *oracle, refine);
      emit(plan.to_json(devices).dump(2) + "\n", out);
    } else if (eval->parsed()) {
      auto lib = forge::load_library(manifest);
      if (!solution_path.empty()) ids = forge::solution_ids(solution_path);
      if (ids.empty()) throw CLI::RequiredError("--ids or --solution");
      forge::PredictionRefs refs;
      for (auto i : forge::resolve_ids(lib, ids)) refs.emplace_back(*lib[i].predictions);
      forge::PredictionMatrix combined;
      if (combiner == "average") {
        combined = forge::average_combine(refs);
      } else if (combiner == "weighted") {
        if (eval_weights.empty()) eval_weights.assign(refs.size(), 1.0 / static_cast<double>(refs.size()));
        combined = forge::weighted_average_combine(refs, eval_weights);
      } else if (combiner == "vote") {
        combined = forge::majority_vote_combine(refs);
      } else {
        throw CLI::ValidationError("--combiner", "expected average, weighted or vote");
      }
      json metrics = json::object();
      for (auto m : {forge::ErrorMetric::cross_entropy, forge::ErrorMetric::error_rate, forge::ErrorMetric::macro_f1})
        metrics[std::string(forge::to_string(m))] = forge::evaluate_metric(m, combined, lib.labels()).value;
      emit(json{{"ids", ids}, {"combiner", combiner}, {"metrics", metrics}}.dump(2) + "\n", out);
    } else if (hpo_export->parsed()) {
      auto doc = read_json(trials_path);
      auto trials = forge::trials_from_json(doc);
      const std::uint64_t run_seed = (!seed_flag && doc.is_object() && doc.contains("seed"))
                                         ? doc["seed"].get<std::uint64_t>()
                                         : seed;
      const auto seeds = forge::derive_seeds(run_seed);
      forge::CostModel cost;
      cost.seed = seeds.cost;
      forge::PredictionGenerator gen{n_samples, n_classes, seeds.predictions};
      forge::export_library(trials, cost, gen, out);
      std::cout << json{{"manifest", out}, {"models", trials.size()}}.dump() << '\n';
    } else if (hpo->parsed()) {
      if (space_path.empty()) throw CLI::RequiredError("--space");
      const auto space = forge::HyperparameterSpace::load(space_path);
      const auto config = scheduler_config(eta, min_r, max_r, n_trials, forge::derive_seeds(seed).scheduler);
      forge::SyntheticObjective objective(config.seed);
      const auto exec = executor == "threads" ? forge::Executor::threads : forge::Executor::virtual_clock;
      auto trials = algo == "asha" ? forge::run_asha(space, objective, config, workers, exec)
                                   : forge::run_random_search(space, objective, config, workers, exec);
      log(std::to_string(trials.size()) + " trials, " + std::to_string(forge::total_resource(trials)) + " epochs");
      emit(forge::trials_document(trials, algo, config).dump(2) + "\n", out);
    } else if (pipeline->parsed()) {
      const auto seeds = forge::derive_seeds(seed);
      forge::PipelineConfig config;
      config.space_path = space_path;
      config.out_dir = out_dir;
      config.algo = algo;
      config.scheduler = scheduler_config(eta, min_r, max_r, n_trials, seeds.scheduler);
      config.workers = workers;
      config.cost_model.seed = seeds.cost;
      config.generator = {n_samples, n_classes, seeds.predictions};
      config.keep_fraction = pipeline_keep;
      config.budgets = budgets;
      config.budget = pipeline_budget;
      config.weights = weights;
      if (!devices_path.empty()) config.devices = forge::load_devices(devices_path);
      config.permitted_batches = pb;
      config.max_combi = max_combi;
      config.threads = threads;
      auto artifacts = forge::run_pipeline(config);
      std::cout << json{{"trials", artifacts.trials.string()},
                        {"manifest", artifacts.manifest.string()},
                        {"solution", artifacts.solution.string()},
                        {"allocation", artifacts.allocation.string()},
                        {"sweep", artifacts.sweep.string()}}
                       .dump()
                << '\n';
    } else if (report->parsed()) {
      auto rows = forge::parse_sweep_csv(read_text(sweep_path));
      std::optional<forge::ModelLibrary> lib;
      if (!manifest.empty()) lib = load_maybe_pruned(manifest, prune_keep);
      emit(forge::report_to_csv(forge::build_report(rows, lib ? &*lib : nullptr)), out);
    }
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", "UsageError"}, {"message", e.what()}}.dump() << '\n';
    return kExitUsage;
  } catch (const forge::Error& e) {
    std::cerr << json{{"error", forge::to_string(e.code())}, {"message", e.what()}}.dump() << '\n';
    return kExitDomain;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "InternalError"}, {"message", e.what()}}.dump() << '\n';
    return kExitDomain;
  }
  return 0;
}
