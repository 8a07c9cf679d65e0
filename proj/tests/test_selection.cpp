#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "forge/error.hpp"
#include "forge/selection.hpp"
#include "support.hpp"

using namespace forge;
using forge::testing::make_model;
using forge::testing::members_of;
using forge::testing::random_library;
using forge::testing::reference_best_error;
using forge::testing::reference_ce;
using forge::testing::reference_cost;
using forge::testing::reference_score;

namespace {

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no forge::Error thrown";
  return Errc::BadArgument;
}

// Two-class library with a constant probability for the true class per model.
ModelLibrary constant_library(const std::vector<double>& p_true, const std::vector<double>& costs) {
  std::vector<ModelRecord> models;
  for (std::size_t m = 0; m < p_true.size(); ++m)
    models.push_back(make_model("m" + std::to_string(m + 1), costs[m],
                                {{p_true[m], 1 - p_true[m]}, {p_true[m], 1 - p_true[m]}}));
  return ModelLibrary(std::move(models), Labels{{0, 0}});
}

std::set<std::string> id_set(const EnsembleSolution& s) { return {s.ids.begin(), s.ids.end()}; }

ModelLibrary scale_costs(const ModelLibrary& lib, double factor) {
  auto models = lib.models();
  for (auto& m : models) m.cost *= factor;
  return ModelLibrary(std::move(models), lib.labels());
}

}  // namespace

TEST(NormalizedCost, Examples) {
  auto lib = constant_library({0.6, 0.7}, {3, 5});
  EXPECT_EQ(normalized_cost({}, lib, BudgetSpec{20}), 0.0);
  EXPECT_EQ(normalized_cost({"m1"}, lib, BudgetSpec{3}), 1.0);
  EXPECT_DOUBLE_EQ(normalized_cost({"m1", "m2"}, lib, BudgetSpec{20}), 0.4);
  EXPECT_EQ(code_of([&] { normalized_cost({"zz"}, lib, BudgetSpec{20}); }), Errc::UnknownModelId);
}

TEST(Penalty, Examples) {
  const PenaltyParams defaults;
  EXPECT_EQ(penalty(20.0, 20.0, defaults), 0.0);
  EXPECT_EQ(penalty(21.0, 20.0, defaults), 11.0);
  EXPECT_EQ(penalty(23.0, 20.0, defaults), 19.0);
  EXPECT_EQ(penalty(5.0, 20.0, defaults), 0.0);
}

TEST(Penalty, StrictlyIncreasingAboveBudget) {
  for (double rho3 : {1.0, 1.5, 2.0, 3.0}) {
    PenaltyParams p{10, 1, rho3};
    double prev = penalty(10.0, 10.0, p);
    for (double c = 10.001; c < 30; c += 0.37) {
      double cur = penalty(c, 10.0, p);
      EXPECT_GT(cur, prev);
      EXPECT_GE(cur, 10.0);
      prev = cur;
    }
  }
  EXPECT_THROW((PenaltyParams{0, 1, 2}.validate()), Error);
  EXPECT_THROW((PenaltyParams{10, -1, 2}.validate()), Error);
  EXPECT_THROW((PenaltyParams{10, 1, 0.5}.validate()), Error);
}

TEST(ScalarizedScore, Examples) {
  const double e = std::exp(-1.0);  // CE of exactly 1
  auto lib = constant_library({e, 0.5}, {5, 6});
  BudgetSpec b{10};
  EXPECT_TRUE(std::isinf(scalarized_score({}, lib, 0.1, b, {})));
  EXPECT_NEAR(scalarized_score({"m1"}, lib, 0.1, b, {}), 0.95, 1e-12);
  // raw cost 11 = B + 1
  const double over = scalarized_score({"m1", "m2"}, lib, 0.1, b, {});
  const double ce = -std::log((e + 0.5) / 2);
  EXPECT_NEAR(over, 0.9 * ce + 0.1 * 1.1 + 11.0, 1e-12);
}

TEST(SmobfGreedy, SingleFeasibleModel) {
  auto lib = constant_library({0.8}, {4});
  auto s = smobf_greedy(lib, BudgetSpec{5}, 0.1);
  EXPECT_EQ(s.ids, (std::vector<std::string>{"m1"}));
  EXPECT_TRUE(s.feasible);
}

TEST(SmobfGreedy, AllCostsAboveBudget) {
  auto lib = constant_library({0.8, 0.7, 0.6}, {6, 7, 8});
  EXPECT_EQ(code_of([&] { smobf_greedy(lib, BudgetSpec{5}, 0.1); }), Errc::InfeasibleBudget);
  EXPECT_EQ(code_of([&] { smobf_multi_w(lib, BudgetSpec{5}); }), Errc::InfeasibleBudget);
  EXPECT_EQ(code_of([] { smobf_greedy(ModelLibrary{}, BudgetSpec{5}, 0.1); }), Errc::EmptyLibrary);
}

TEST(SmobfGreedy, TiesGoToLowestId) {
  std::vector<ModelRecord> models{make_model("b", 1, {{0.7, 0.3}}), make_model("a", 1, {{0.7, 0.3}})};
  ModelLibrary lib(std::move(models), Labels{{0}});
  auto s = smobf_greedy(lib, BudgetSpec{5}, 0.1);
  ASSERT_FALSE(s.ids.empty());
  EXPECT_EQ(s.ids.front(), "a");
}

TEST(SmobfGreedy, MatchesExhaustiveBounds) {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> size(3, 10);
  std::uniform_real_distribution<double> frac(0.1, 0.8);
  for (int inst = 0; inst < 40; ++inst) {
    auto lib = random_library(rng, size(rng));
    const double total = reference_cost(lib, members_of((1u << lib.size()) - 1, lib.size()));
    const double B = total * frac(rng);
    for (double w : {0.1, 0.01, 0.001}) {
      EnsembleSolution s;
      try {
        s = smobf_greedy(lib, BudgetSpec{B}, w);
      } catch (const Error& e) {
        ASSERT_EQ(e.code(), Errc::InfeasibleBudget);
        continue;
      }
      ASSERT_TRUE(s.feasible);
      EXPECT_LE(s.cost, B + 1e-9);
      EXPECT_NEAR(s.cost, reference_cost(lib, s.indices), 1e-9);
      // step scores agree with the reference scalarization of each prefix
      for (std::size_t k = 0; k < s.step_scores.size(); ++k) {
        std::vector<std::size_t> prefix(s.indices.begin(), s.indices.begin() + static_cast<long>(k) + 1);
        EXPECT_NEAR(s.step_scores[k], reference_score(lib, prefix, w, B), 1e-9);
        if (k > 0) EXPECT_LT(s.step_scores[k], s.step_scores[k - 1]);
      }
      double best_single = std::numeric_limits<double>::infinity();
      double best_subset = std::numeric_limits<double>::infinity();
      for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << lib.size()); ++mask) {
        auto members = members_of(mask, lib.size());
        double sc = reference_score(lib, members, w, B);
        best_subset = std::min(best_subset, sc);
        if (members.size() == 1 && reference_cost(lib, members) <= B) best_single = std::min(best_single, sc);
      }
      EXPECT_NEAR(s.step_scores.front(), best_single, 1e-12);
      EXPECT_LE(s.score, best_single + 1e-12);
      EXPECT_GE(s.score, best_subset - 1e-12);
    }
  }
}

TEST(SmobfGreedy, ScaleInvariance) {
  std::mt19937_64 rng(202);
  for (int inst = 0; inst < 30; ++inst) {
    auto lib = random_library(rng, 8);
    const double B = 15.0 + inst;
    std::set<std::string> base;
    try {
      base = id_set(smobf_greedy(lib, BudgetSpec{B}, 0.01));
    } catch (const Error&) {
      continue;
    }
    for (double f : {0.25, 2.0, 8.0})
      EXPECT_EQ(id_set(smobf_greedy(scale_costs(lib, f), BudgetSpec{B * f}, 0.01)), base);
  }
}

TEST(SmobfGreedy, ThreadsDoNotChangeResult) {
  std::mt19937_64 rng(303);
  for (int inst = 0; inst < 10; ++inst) {
    auto lib = random_library(rng, 12, 80, 5);
    SelectionOptions serial, parallel;
    parallel.threads = 4;
    auto a = smobf_multi_w(lib, BudgetSpec{25}, {}, serial);
    auto b = smobf_multi_w(lib, BudgetSpec{25}, {}, parallel);
    EXPECT_EQ(a.ids, b.ids);
    EXPECT_EQ(a.step_scores, b.step_scores);
    EXPECT_EQ(a.error.value, b.error.value);
  }
}

TEST(SmobfMultiW, SameEnsembleForAllWeights) {
  auto lib = constant_library({0.9}, {1});
  auto s = smobf_multi_w(lib, BudgetSpec{2});
  EXPECT_EQ(s.ids, (std::vector<std::string>{"m1"}));
}

TEST(SmobfMultiW, PicksLowestCrossEntropyAcrossWeights) {
  // Find libraries where the weights disagree, then check the pick against the three separate runs.
  std::mt19937_64 rng(404);
  int disagreements = 0;
  for (int inst = 0; inst < 300 && disagreements < 10; ++inst) {
    auto lib = random_library(rng, 10, 50, 4, 1.0, 10.0);
    BudgetSpec b{30.0};
    std::vector<EnsembleSolution> runs;
    for (double w : b.weights) runs.push_back(smobf_greedy(lib, b, w));
    if (id_set(runs.front()) == id_set(runs.back())) continue;
    ++disagreements;
    std::size_t best = 0;
    for (std::size_t r = 1; r < runs.size(); ++r) {
      const double ce_r = reference_ce(lib, runs[r].indices);
      const double ce_b = reference_ce(lib, runs[best].indices);
      if (ce_r < ce_b - 1e-12 || (std::abs(ce_r - ce_b) <= 1e-12 && runs[r].cost < runs[best].cost)) best = r;
    }
    auto pick = smobf_multi_w(lib, b);
    EXPECT_EQ(id_set(pick), id_set(runs[best]));
    EXPECT_NEAR(pick.error.value, reference_ce(lib, runs[best].indices), 1e-12);
    // never worse than the run with the heaviest cost weight
    EXPECT_LE(pick.error.value, reference_ce(lib, runs.front().indices) + 1e-12);
  }
  EXPECT_GE(disagreements, 1);
}

TEST(FixedK, Examples) {
  auto lib = constant_library({0.6, 0.9, 0.7, 0.5}, {1, 2, 3, 4});
  auto one = forward_greedy_fixed_size(lib, 1);
  EXPECT_EQ(one.ids, (std::vector<std::string>{"m2"}));
  auto all = forward_greedy_fixed_size(lib, 4);
  EXPECT_EQ(all.ids.size(), 4u);
  EXPECT_DOUBLE_EQ(all.cost, 10.0);
  EXPECT_EQ(code_of([&] { forward_greedy_fixed_size(lib, 0); }), Errc::BadK);
  EXPECT_EQ(code_of([&] { forward_greedy_fixed_size(lib, 5); }), Errc::BadK);
}

TEST(FixedK, TwoStepTraceOnToyLibrary) {
  std::mt19937_64 rng(505);
  auto lib = random_library(rng, 4, 20, 3);
  auto s = forward_greedy_fixed_size(lib, 2);
  // hand trace: best single model, then the best partner for it
  std::size_t first = 0;
  for (std::size_t m = 1; m < 4; ++m)
    if (reference_ce(lib, {m}) < reference_ce(lib, {first})) first = m;
  std::size_t second = first == 0 ? 1 : 0;
  for (std::size_t m = 0; m < 4; ++m)
    if (m != first && reference_ce(lib, {first, m}) < reference_ce(lib, {first, second})) second = m;
  EXPECT_EQ(s.indices, (std::vector<std::size_t>{first, second}));
  EXPECT_NEAR(s.error.value, reference_ce(lib, {first, second}), 1e-12);
}

TEST(WithReplacement, Examples) {
  auto single = constant_library({0.7}, {1});
  auto r = forward_greedy_with_replacement(single, 3);
  EXPECT_EQ(r.multiplicities, (std::vector<std::size_t>{3}));
  EXPECT_EQ(r.weights, (std::vector<double>{1.0}));

  // m1 is confident and right, m2 barely better than chance: re-adding m1 wins
  auto lib = constant_library({0.95, 0.55}, {1, 1});
  auto two = forward_greedy_with_replacement(lib, 2);
  EXPECT_EQ(two.ids, (std::vector<std::string>{"m1"}));
  EXPECT_EQ(two.multiplicities, (std::vector<std::size_t>{2}));

  auto w = weights_from_multiplicities({2, 1});
  EXPECT_DOUBLE_EQ(w[0], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(w[1], 1.0 / 3.0);
  EXPECT_EQ(code_of([&] { forward_greedy_with_replacement(lib, 0); }), Errc::BadK);
}

TEST(WithReplacement, WeightedErrorMatchesReference) {
  std::mt19937_64 rng(606);
  auto lib = random_library(rng, 5, 40, 4);
  auto r = forward_greedy_with_replacement(lib, 6);
  std::size_t total = 0;
  for (auto m : r.multiplicities) total += m;
  EXPECT_EQ(total, 6u);
  // a multiset average is the plain average with repeated members
  std::vector<std::size_t> expanded;
  for (std::size_t i = 0; i < r.ids.size(); ++i)
    for (std::size_t c = 0; c < r.multiplicities[i]; ++c) expanded.push_back(lib.index_of(r.ids[i]));
  EXPECT_NEAR(r.error.value, reference_ce(lib, expanded), 1e-12);
}

TEST(BruteForce, Examples) {
  auto one = constant_library({0.8}, {1});
  EXPECT_EQ(brute_force_best(one, 1).ids, (std::vector<std::string>{"m1"}));

  // m1 is best but too expensive; candidates are {m2}, {m3}, {m2, m3}
  auto lib = constant_library({0.95, 0.6, 0.8}, {10, 2, 3});
  auto s = brute_force_best(lib, 5);
  double best = std::min({reference_ce(lib, {1}), reference_ce(lib, {2}), reference_ce(lib, {1, 2})});
  EXPECT_NEAR(s.error.value, best, 1e-15);
  EXPECT_EQ(s.ids, (std::vector<std::string>{"m3"}));
  EXPECT_EQ(code_of([&] { brute_force_best(lib, 1); }), Errc::InfeasibleBudget);

  std::mt19937_64 rng(707);
  auto big = random_library(rng, 21, 5, 2);
  EXPECT_EQ(code_of([&] { brute_force_best(big, 10); }), Errc::TooLarge);
}

TEST(BruteForce, AgreesWithReferenceEnumeration) {
  std::mt19937_64 rng(808);
  for (int inst = 0; inst < 30; ++inst) {
    auto lib = random_library(rng, 7);
    for (double B : {3.0, 8.0, 15.0, 60.0}) {
      const double ref = reference_best_error(lib, B);
      if (std::isinf(ref)) {
        EXPECT_THROW(brute_force_best(lib, B), Error);
        continue;
      }
      auto s = brute_force_best(lib, B);
      EXPECT_NEAR(s.error.value, ref, 1e-12);
      EXPECT_LE(s.cost, B + 1e-9);
    }
  }
}

TEST(BudgetSweep, RowsAndOracleTrend) {
  std::mt19937_64 rng(909);
  auto lib = random_library(rng, 8);
  auto single = budget_sweep(lib, {20}, {0.1, 0.01, 0.001});
  EXPECT_EQ(single.size(), 1u);

  std::vector<double> budgets{20, 40, 80};
  auto rows = budget_sweep(lib, budgets, {0.1, 0.01, 0.001});
  ASSERT_EQ(rows.size(), 3u);
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& row : rows) {
    const double oracle = reference_best_error(lib, row.budget);
    EXPECT_LE(oracle, prev + 1e-12);
    prev = oracle;
    ASSERT_TRUE(row.solution);
    EXPECT_GE(row.solution->error.value, oracle - 1e-12);
  }
  EXPECT_EQ(code_of([&] { budget_sweep(lib, {40, 20}, {0.1}); }), Errc::BadArgument);
}

TEST(BudgetSweep, LastRowBeatsEveryTighterOracle) {
  std::mt19937_64 rng(910);
  auto lib = random_library(rng, 6);
  const double total = reference_cost(lib, members_of(63, 6));
  auto rows = budget_sweep(lib, {total * 0.2, total * 0.5, total}, {0.1, 0.01, 0.001});
  ASSERT_TRUE(rows.back().solution);
  // at the full budget the oracle is unconstrained, so no smaller budget can do better
  EXPECT_LE(reference_best_error(lib, total), reference_best_error(lib, total * 0.2) + 1e-12);
  EXPECT_GE(rows.back().solution->error.value, reference_best_error(lib, total) - 1e-12);
}

TEST(BudgetSweep, CsvFormat) {
  auto lib = constant_library({0.9, 0.8}, {2, 3});
  auto csv = sweep_to_csv(budget_sweep(lib, {1, 2.5}, {0.1}));
  const std::string head = "budget,error,cost,n_models,ids\n1,inf,0,0,\n2.5,";
  ASSERT_EQ(csv.substr(0, head.size()), head);
  const auto rest = csv.substr(head.size());
  const auto comma = rest.find(',');
  EXPECT_EQ(std::stod(rest.substr(0, comma)), -std::log(0.9));
  EXPECT_EQ(rest.substr(comma), ",2,1,m1\n");
}

TEST(BudgetSpec, Validation) {
  EXPECT_THROW((BudgetSpec{0.0}.validate()), Error);
  EXPECT_THROW((BudgetSpec{1.0, {1.0}}.validate()), Error);
  EXPECT_NO_THROW((BudgetSpec{1.0}.validate()));
}
