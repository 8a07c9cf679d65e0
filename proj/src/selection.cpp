#include "forge/selection.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "forge/error.hpp"
#include "parallel.hpp"
#include "text.hpp"

namespace forge {

void BudgetSpec::validate() const {
  if (!(budget > 0.0) || !std::isfinite(budget)) throw Error(Errc::BadArgument, "budget must be > 0");
  for (double w : weights)
    if (!(w > 0.0 && w < 1.0)) throw Error(Errc::BadArgument, "each scalarization weight must lie in (0, 1)");
}

void PenaltyParams::validate() const {
  if (!(rho1 > 0.0)) throw Error(Errc::BadArgument, "rho1 must be > 0");
  if (!(rho2 >= 0.0)) throw Error(Errc::BadArgument, "rho2 must be >= 0");
  if (!(rho3 >= 1.0)) throw Error(Errc::BadArgument, "rho3 must be >= 1");
}

double budget_slack(double budget) noexcept { return 1e-9 * std::max(1.0, std::abs(budget)); }

bool within_budget(double cost, double budget) noexcept { return cost <= budget + budget_slack(budget); }

std::vector<std::size_t> resolve_ids(const ModelLibrary& lib, const std::vector<std::string>& ids) {
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(lib.index_of(id));
  return out;
}

double selection_cost(const ModelLibrary& lib, const std::vector<std::size_t>& indices) {
  double total = 0.0;
  for (auto i : indices) total += lib[i].cost;
  return total;
}

double normalized_cost(const std::vector<std::string>& ids, const ModelLibrary& lib, const BudgetSpec& budget) {
  if (!(budget.budget > 0.0)) throw Error(Errc::BadArgument, "budget must be > 0");
  return selection_cost(lib, resolve_ids(lib, ids)) / budget.budget;
}

double penalty(double cost, double budget, const PenaltyParams& params) {
  if (cost <= budget) return 0.0;
  return params.rho1 + params.rho2 * std::pow(cost - budget, params.rho3);
}

namespace {

double scalarize(double loss, double cost, double w, double budget, const PenaltyParams& params) {
  return (1.0 - w) * loss + w * (cost / budget) + penalty(cost, budget, params);
}

// Running sum of member predictions; candidates are scored by averaging the
// sum with one more member into a scratch matrix.
struct Accumulator {
  explicit Accumulator(const ModelLibrary& lib)
      : sum(lib.n_samples(), lib.n_classes()) {}

  void add(const PredictionMatrix& p, double weight = 1.0) {
    auto& acc = sum.values();
    const auto& src = p.values();
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += weight * src[k];
    members += weight;
  }

  // (sum + extra) / (members + 1) written into `out`.
  void average_with(const PredictionMatrix& extra, PredictionMatrix& out) const {
    const auto& acc = sum.values();
    const auto& src = extra.values();
    auto& dst = out.values();
    const double inv = 1.0 / (members + 1.0);
    for (std::size_t k = 0; k < acc.size(); ++k) dst[k] = (acc[k] + src[k]) * inv;
  }

  PredictionMatrix average() const {
    PredictionMatrix out = sum;
    if (members > 0.0)
      for (double& v : out.values()) v /= members;
    return out;
  }

  PredictionMatrix sum;
  double members = 0.0;
};

struct Candidate {
  std::size_t index = 0;
  double score = 0.0;
};

// Lowest score wins; equal scores go to the lexicographically smallest id.
std::optional<Candidate> reduce_min(const ModelLibrary& lib, const std::vector<std::optional<double>>& scores) {
  std::optional<Candidate> best;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!scores[i]) continue;
    if (!best || *scores[i] < best->score || (*scores[i] == best->score && lib[i].id < lib[best->index].id))
      best = Candidate{i, *scores[i]};
  }
  return best;
}

// Scores every eligible candidate addition. `eligible(i)` filters candidates,
// `score_of(loss, i)` turns the candidate ensemble's loss into its score.
template <typename Eligible, typename ScoreOf>
std::vector<std::optional<double>> score_candidates(const ModelLibrary& lib, const Accumulator& acc,
                                                    ErrorMetric metric, std::size_t threads, Eligible eligible,
                                                    ScoreOf score_of) {
  const std::size_t n = lib.size();
  std::vector<std::optional<double>> scores(n);
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n));
  std::vector<PredictionMatrix> scratch(workers, PredictionMatrix(lib.n_samples(), lib.n_classes()));
  detail::parallel_for(n, workers, [&](std::size_t i, std::size_t worker) {
    if (!eligible(i)) return;
    acc.average_with(*lib[i].predictions, scratch[worker]);
    double loss = evaluate_metric(metric, scratch[worker], lib.labels()).loss();
    scores[i] = score_of(loss, i);
  });
  return scores;
}

void finish_solution(const ModelLibrary& lib, const Accumulator& acc, ErrorMetric metric,
                     std::optional<double> budget, EnsembleSolution& sol) {
  sol.ids.clear();
  for (auto i : sol.indices) sol.ids.push_back(lib[i].id);
  sol.combined = acc.average();
  sol.error = evaluate_metric(metric, sol.combined, lib.labels());
  sol.cost = selection_cost(lib, sol.indices);
  if (budget) {
    sol.normalized_cost = sol.cost / *budget;
    sol.feasible = within_budget(sol.cost, *budget);
  } else {
    sol.normalized_cost = std::numeric_limits<double>::quiet_NaN();
    sol.feasible = true;
  }
}

std::vector<std::string> sorted_ids(const EnsembleSolution& s) {
  auto ids = s.ids;
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

double scalarized_score(const std::vector<std::string>& ids, const ModelLibrary& lib, double w,
                        const BudgetSpec& budget, const PenaltyParams& params, ErrorMetric metric) {
  auto indices = resolve_ids(lib, ids);
  if (indices.empty()) return kEmptyEnsembleScore;
  if (!(budget.budget > 0.0)) throw Error(Errc::BadArgument, "budget must be > 0");
  PredictionRefs refs;
  for (auto i : indices) refs.emplace_back(*lib[i].predictions);
  double loss = evaluate_metric(metric, average_combine(refs), lib.labels()).loss();
  return scalarize(loss, selection_cost(lib, indices), w, budget.budget, params);
}

EnsembleSolution smobf_greedy(const ModelLibrary& lib, const BudgetSpec& budget, double w,
                              const PenaltyParams& params, const SelectionOptions& options) {
  if (lib.empty()) throw Error(Errc::EmptyLibrary, "cannot select from an empty library");
  if (!(budget.budget > 0.0)) throw Error(Errc::BadArgument, "budget must be > 0");
  if (!(w > 0.0 && w < 1.0)) throw Error(Errc::BadArgument, "w must lie in (0, 1)");
  params.validate();

  const double B = budget.budget;
  bool any_fits = false;
  for (const auto& m : lib.models()) any_fits = any_fits || within_budget(m.cost, B);
  if (!any_fits) throw Error(Errc::InfeasibleBudget, "no single model fits within budget " + text::format_double(B));

  EnsembleSolution sol;
  sol.w = w;
  Accumulator acc(lib);
  std::vector<bool> selected(lib.size(), false);
  double cost = 0.0;
  double current = kEmptyEnsembleScore;

  while (true) {
    auto scores = score_candidates(
        lib, acc, options.metric, options.threads,
        [&](std::size_t i) { return !selected[i] && within_budget(cost + lib[i].cost, B); },
        [&](double loss, std::size_t i) { return scalarize(loss, cost + lib[i].cost, w, B, params); });
    auto best = reduce_min(lib, scores);
    if (!best || !(best->score < current)) break;
    selected[best->index] = true;
    sol.indices.push_back(best->index);
    acc.add(*lib[best->index].predictions);
    cost += lib[best->index].cost;
    current = best->score;
    sol.step_scores.push_back(current);
  }

  finish_solution(lib, acc, options.metric, B, sol);
  sol.score = current;
  return sol;
}

EnsembleSolution smobf_multi_w(const ModelLibrary& lib, const BudgetSpec& budget, const PenaltyParams& params,
                               const SelectionOptions& options) {
  if (budget.weights.empty()) throw Error(Errc::BadArgument, "no scalarization weights given");
  budget.validate();

  std::optional<EnsembleSolution> best;
  double best_ce = 0.0;
  for (double w : budget.weights) {
    EnsembleSolution sol = smobf_greedy(lib, budget, w, params, options);
    if (!sol.feasible) continue;
    double ce = cross_entropy(sol.combined, lib.labels());
    bool better = !best || ce < best_ce || (ce == best_ce && sol.cost < best->cost) ||
                  (ce == best_ce && sol.cost == best->cost && sorted_ids(sol) < sorted_ids(*best));
    if (better) {
      best_ce = ce;
      best = std::move(sol);
    }
  }
  if (!best) throw Error(Errc::InfeasibleBudget, "no weight produced a feasible ensemble");
  return *std::move(best);
}

EnsembleSolution forward_greedy_fixed_size(const ModelLibrary& lib, std::size_t k, const SelectionOptions& options,
                                           std::optional<double> budget) {
  if (lib.empty()) throw Error(Errc::EmptyLibrary, "cannot select from an empty library");
  if (k < 1 || k > lib.size())
    throw Error(Errc::BadK, "k must lie in [1, " + std::to_string(lib.size()) + "], got " + std::to_string(k));
  if (budget && !(*budget > 0.0)) throw Error(Errc::BadArgument, "budget must be > 0");

  EnsembleSolution sol;
  Accumulator acc(lib);
  std::vector<bool> selected(lib.size(), false);
  for (std::size_t step = 0; step < k; ++step) {
    auto scores = score_candidates(
        lib, acc, options.metric, options.threads, [&](std::size_t i) { return !selected[i]; },
        [](double loss, std::size_t) { return loss; });
    auto best = reduce_min(lib, scores);
    selected[best->index] = true;
    sol.indices.push_back(best->index);
    acc.add(*lib[best->index].predictions);
    sol.step_scores.push_back(best->score);
  }
  finish_solution(lib, acc, options.metric, budget, sol);
  sol.score = sol.error.loss();
  return sol;
}

std::vector<double> weights_from_multiplicities(const std::vector<std::size_t>& multiplicities) {
  double total = 0.0;
  for (auto m : multiplicities) total += static_cast<double>(m);
  if (!(total > 0.0)) throw Error(Errc::BadWeights, "multiplicities sum to zero");
  std::vector<double> out;
  out.reserve(multiplicities.size());
  for (auto m : multiplicities) out.push_back(static_cast<double>(m) / total);
  return out;
}

WeightedSelection forward_greedy_with_replacement(const ModelLibrary& lib, std::size_t k, ErrorMetric metric) {
  if (lib.empty()) throw Error(Errc::EmptyLibrary, "cannot select from an empty library");
  if (k < 1) throw Error(Errc::BadK, "k must be >= 1");

  Accumulator acc(lib);
  std::vector<std::size_t> counts(lib.size(), 0);
  std::vector<std::size_t> first_added;
  for (std::size_t step = 0; step < k; ++step) {
    auto scores = score_candidates(
        lib, acc, metric, 1, [](std::size_t) { return true; }, [](double loss, std::size_t) { return loss; });
    auto best = reduce_min(lib, scores);
    if (counts[best->index]++ == 0) first_added.push_back(best->index);
    acc.add(*lib[best->index].predictions);
  }

  WeightedSelection out;
  for (auto i : first_added) {
    out.ids.push_back(lib[i].id);
    out.multiplicities.push_back(counts[i]);
    out.cost += lib[i].cost;
  }
  out.weights = weights_from_multiplicities(out.multiplicities);
  PredictionRefs refs;
  for (auto i : first_added) refs.emplace_back(*lib[i].predictions);
  out.combined = weighted_average_combine(refs, out.weights);
  out.error = evaluate_metric(metric, out.combined, lib.labels());
  return out;
}

EnsembleSolution brute_force_best(const ModelLibrary& lib, double budget, ErrorMetric metric) {
  if (lib.empty()) throw Error(Errc::EmptyLibrary, "cannot select from an empty library");
  if (lib.size() > kBruteForceMaxModels)
    throw Error(Errc::TooLarge, "brute force is limited to " + std::to_string(kBruteForceMaxModels) + " models");
  if (!(budget > 0.0)) throw Error(Errc::BadArgument, "budget must be > 0");

  const std::size_t n = lib.size();
  // Lexicographic comparison needs ids in sorted order; enumerate in that order.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return lib[a].id < lib[b].id; });

  struct Best {
    double loss;
    double cost;
    std::vector<std::size_t> members;  // positions in `order`, ascending
  };
  std::optional<Best> best;

  auto better = [&](double loss, double cost, const std::vector<std::size_t>& members) {
    if (!best) return true;
    if (loss != best->loss) return loss < best->loss;
    if (cost != best->cost) return cost < best->cost;
    // ids ascending along `order`, so comparing positions is comparing ids.
    return members < best->members;
  };

  std::vector<PredictionMatrix> sums(n + 1, PredictionMatrix(lib.n_samples(), lib.n_classes()));
  PredictionMatrix scratch(lib.n_samples(), lib.n_classes());
  std::vector<std::size_t> members;

  std::function<void(std::size_t, std::size_t, double)> visit = [&](std::size_t start, std::size_t depth,
                                                                      double cost) {
    for (std::size_t p = start; p < n; ++p) {
      const auto& model = lib[order[p]];
      double next_cost = cost + model.cost;
      if (!within_budget(next_cost, budget)) continue;
      auto& dst = sums[depth + 1].values();
      const auto& prev = sums[depth].values();
      const auto& src = model.predictions->values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = prev[k] + src[k];
      const double inv = 1.0 / static_cast<double>(depth + 1);
      for (std::size_t k = 0; k < dst.size(); ++k) scratch.values()[k] = dst[k] * inv;
      members.push_back(p);
      double loss = evaluate_metric(metric, scratch, lib.labels()).loss();
      if (better(loss, next_cost, members)) best = Best{loss, next_cost, members};
      visit(p + 1, depth + 1, next_cost);
      members.pop_back();
    }
  };
  visit(0, 0, 0.0);

  if (!best) throw Error(Errc::InfeasibleBudget, "no subset fits within budget " + text::format_double(budget));

  EnsembleSolution sol;
  Accumulator acc(lib);
  for (auto p : best->members) {
    sol.indices.push_back(order[p]);
    acc.add(*lib[order[p]].predictions);
  }
  finish_solution(lib, acc, metric, budget, sol);
  sol.score = sol.error.loss();
  return sol;
}

std::vector<SweepRow> budget_sweep(const ModelLibrary& lib, const std::vector<double>& budgets,
                                   const std::vector<double>& weights, const PenaltyParams& params,
                                   const SelectionOptions& options) {
  if (budgets.empty()) throw Error(Errc::BadArgument, "no budgets given");
  if (!std::is_sorted(budgets.begin(), budgets.end()))
    throw Error(Errc::BadArgument, "budgets must be sorted ascending");
  std::vector<SweepRow> rows;
  for (double b : budgets) {
    SweepRow row{b, std::nullopt};
    try {
      row.solution = smobf_multi_w(lib, BudgetSpec{b, weights}, params, options);
    } catch (const Error& e) {
      if (e.code() != Errc::InfeasibleBudget) throw;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "budget,error,cost,n_models,ids\n";
  for (const auto& row : rows) {
    out << text::format_double(row.budget) << ',';
    if (!row.solution) {
      out << "inf,0,0,\n";
      continue;
    }
    const auto& s = *row.solution;
    out << text::format_double(s.error.value) << ',' << text::format_double(s.cost) << ',' << s.ids.size() << ',';
    for (std::size_t i = 0; i < s.ids.size(); ++i) out << (i ? ";" : "") << s.ids[i];
    out << '\n';
  }
  return out.str();
}

}  // namespace forge
