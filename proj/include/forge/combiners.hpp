#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "forge/library.hpp"

namespace forge {

// Non-owning list of member predictions.
using PredictionRefs = std::vector<std::reference_wrapper<const PredictionMatrix>>;

// Elementwise mean of the member matrices.
PredictionMatrix average_combine(const PredictionRefs& preds);

// Sum of w_i * P_i. Weights must be non-negative and sum to one within 1e-6.
PredictionMatrix weighted_average_combine(const PredictionRefs& preds, std::span<const double> weights);

// Each member votes for the argmax class of its row; the output row is one-hot
// on the plurality class, ties going to the lowest class index.
PredictionMatrix majority_vote_combine(const PredictionRefs& preds);

enum class ErrorMetric { cross_entropy, error_rate, macro_f1 };

std::string_view to_string(ErrorMetric metric) noexcept;
ErrorMetric parse_error_metric(std::string_view name);

struct MetricValue {
  ErrorMetric name = ErrorMetric::cross_entropy;
  double value = 0.0;

  // Lower-is-better view used by the selection algorithms.
  double loss() const noexcept { return name == ErrorMetric::macro_f1 ? 1.0 - value : value; }
};

inline constexpr double kLogClamp = 1e-12;

double cross_entropy(const PredictionMatrix& preds, const Labels& labels);
double error_rate(const PredictionMatrix& preds, const Labels& labels);
double macro_f1(const PredictionMatrix& preds, const Labels& labels);

MetricValue evaluate_metric(ErrorMetric metric, const PredictionMatrix& preds, const Labels& labels);

}  // namespace forge
