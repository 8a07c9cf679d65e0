#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "forge/combiners.hpp"
#include "forge/library.hpp"

namespace forge {

// Budget B in the library's cost units plus the scalarization weights tried
// by the multi-weight search.
struct BudgetSpec {
  double budget = 0.0;
  std::vector<double> weights{0.1, 0.01, 0.001};

  void validate() const;
};

struct PenaltyParams {
  double rho1 = 10.0;
  double rho2 = 1.0;
  double rho3 = 2.0;

  void validate() const;
};

// Score of the empty ensemble. Never produced by evaluating the scalarized formula.
inline constexpr double kEmptyEnsembleScore = std::numeric_limits<double>::infinity();

// Slack used for every cost <= budget comparison.
double budget_slack(double budget) noexcept;
bool within_budget(double cost, double budget) noexcept;

struct EnsembleSolution {
  std::vector<std::string> ids;       // in order of addition
  std::vector<std::size_t> indices;   // library positions, same order as ids
  MetricValue error;
  double cost = 0.0;
  double normalized_cost = 0.0;
  double score = kEmptyEnsembleScore;
  double w = std::numeric_limits<double>::quiet_NaN();  // scalarization weight, NaN for baselines
  bool feasible = false;
  std::vector<double> step_scores;  // score after each accepted step
  PredictionMatrix combined;
};

struct SelectionOptions {
  ErrorMetric metric = ErrorMetric::cross_entropy;
  // Candidate additions of one greedy step may be scored on several threads.
  // The reduction is always serial, so results do not depend on this value.
  std::size_t threads = 1;
};

std::vector<std::size_t> resolve_ids(const ModelLibrary& lib, const std::vector<std::string>& ids);
double selection_cost(const ModelLibrary& lib, const std::vector<std::size_t>& indices);

// (sum of selected costs) / B.
double normalized_cost(const std::vector<std::string>& ids, const ModelLibrary& lib, const BudgetSpec& budget);

// 0 when cost <= B, otherwise rho1 + rho2 * |B - cost|^rho3.
double penalty(double cost, double budget, const PenaltyParams& params);

// (1 - w) * E(average of selection) + w * cost / B + penalty(cost).
// The empty selection scores kEmptyEnsembleScore.
double scalarized_score(const std::vector<std::string>& ids, const ModelLibrary& lib, double w,
                        const BudgetSpec& budget, const PenaltyParams& params,
                        ErrorMetric metric = ErrorMetric::cross_entropy);

// Forward greedy over the scalarized score. Starts from the empty ensemble,
// adds the candidate with the lowest score while that strictly improves the
// current score, and never adds a model that would exceed the budget.
EnsembleSolution smobf_greedy(const ModelLibrary& lib, const BudgetSpec& budget, double w,
                              const PenaltyParams& params = {}, const SelectionOptions& options = {});

// Runs smobf_greedy once per weight in budget.weights and keeps the solution
// with the lowest validation cross-entropy (ties: lower cost, then ids).
EnsembleSolution smobf_multi_w(const ModelLibrary& lib, const BudgetSpec& budget, const PenaltyParams& params = {},
                               const SelectionOptions& options = {});

// Baseline: k greedy additions minimizing the error, costs ignored. When a
// budget is given the solution reports normalized cost and feasibility.
EnsembleSolution forward_greedy_fixed_size(const ModelLibrary& lib, std::size_t k,
                                           const SelectionOptions& options = {},
                                           std::optional<double> budget = std::nullopt);

struct WeightedSelection {
  std::vector<std::string> ids;             // distinct models, order of first addition
  std::vector<std::size_t> multiplicities;  // how many times each was added
  std::vector<double> weights;              // multiplicities / k
  MetricValue error;
  double cost = 0.0;  // cost of the distinct models
  PredictionMatrix combined;
};

WeightedSelection forward_greedy_with_replacement(const ModelLibrary& lib, std::size_t k,
                                                  ErrorMetric metric = ErrorMetric::cross_entropy);

std::vector<double> weights_from_multiplicities(const std::vector<std::size_t>& multiplicities);

inline constexpr std::size_t kBruteForceMaxModels = 20;

// Exact minimizer of the error over all non-empty subsets within budget.
EnsembleSolution brute_force_best(const ModelLibrary& lib, double budget,
                                  ErrorMetric metric = ErrorMetric::cross_entropy);

struct SweepRow {
  double budget = 0.0;
  std::optional<EnsembleSolution> solution;  // empty when the budget is infeasible
};

std::vector<SweepRow> budget_sweep(const ModelLibrary& lib, const std::vector<double>& budgets,
                                   const std::vector<double>& weights, const PenaltyParams& params = {},
                                   const SelectionOptions& options = {});

// CSV with header "budget,error,cost,n_models,ids"; ids are ';'-separated.
// Infeasible rows carry error "inf", cost 0 and no ids.
std::string sweep_to_csv(const std::vector<SweepRow>& rows);

}  // namespace forge
