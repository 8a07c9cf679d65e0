#include "forge/combiners.hpp"

#include <algorithm>
#include <cmath>

#include "forge/error.hpp"

namespace forge {

namespace {

void check_shapes(const PredictionRefs& preds) {
  if (preds.empty()) throw Error(Errc::EmptyList, "no predictions to combine");
  const PredictionMatrix& first = preds.front();
  for (const PredictionMatrix& p : preds)
    if (!p.same_shape(first)) throw Error(Errc::ShapeMismatch, "member predictions differ in shape");
}

void check_labels(const PredictionMatrix& preds, const Labels& labels) {
  if (preds.n_samples() != labels.size())
    throw Error(Errc::ShapeMismatch, "labels length does not match the prediction rows");
  for (auto c : labels.classes)
    if (c >= preds.n_classes()) throw Error(Errc::ShapeMismatch, "label outside the class range");
}

}  // namespace

PredictionMatrix average_combine(const PredictionRefs& preds) {
  check_shapes(preds);
  const PredictionMatrix& first = preds.front();
  PredictionMatrix out(first.n_samples(), first.n_classes());
  auto& acc = out.values();
  for (const PredictionMatrix& p : preds)
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += p.values()[k];
  const double inv = 1.0 / static_cast<double>(preds.size());
  for (double& v : acc) v *= inv;
  return out;
}

PredictionMatrix weighted_average_combine(const PredictionRefs& preds, std::span<const double> weights) {
  check_shapes(preds);
  if (weights.size() != preds.size())
    throw Error(Errc::ShapeMismatch, "weight count does not match the number of members");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw Error(Errc::BadWeights, "weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-6) throw Error(Errc::BadWeights, "weights must sum to 1");

  const PredictionMatrix& first = preds.front();
  PredictionMatrix out(first.n_samples(), first.n_classes());
  auto& acc = out.values();
  for (std::size_t m = 0; m < preds.size(); ++m) {
    if (weights[m] == 0.0) continue;
    const auto& src = preds[m].get().values();
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += weights[m] * src[k];
  }
  return out;
}

PredictionMatrix majority_vote_combine(const PredictionRefs& preds) {
  check_shapes(preds);
  const PredictionMatrix& first = preds.front();
  PredictionMatrix out(first.n_samples(), first.n_classes());
  std::vector<std::size_t> votes(first.n_classes());
  for (std::size_t i = 0; i < first.n_samples(); ++i) {
    std::fill(votes.begin(), votes.end(), 0);
    for (const PredictionMatrix& p : preds) ++votes[p.argmax(i)];
    auto winner = std::max_element(votes.begin(), votes.end()) - votes.begin();
    out(i, static_cast<std::size_t>(winner)) = 1.0;
  }
  return out;
}

std::string_view to_string(ErrorMetric metric) noexcept {
  switch (metric) {
    case ErrorMetric::cross_entropy: return "cross_entropy";
    case ErrorMetric::error_rate: return "error_rate";
    case ErrorMetric::macro_f1: return "macro_f1";
  }
  return "cross_entropy";
}

ErrorMetric parse_error_metric(std::string_view name) {
  if (name == "cross_entropy") return ErrorMetric::cross_entropy;
  if (name == "error_rate") return ErrorMetric::error_rate;
  if (name == "macro_f1") return ErrorMetric::macro_f1;
  throw Error(Errc::BadArgument, "unknown metric '" + std::string(name) + "'");
}

double cross_entropy(const PredictionMatrix& preds, const Labels& labels) {
  check_labels(preds, labels);
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.n_samples(); ++i) {
    double p = std::clamp(preds(i, labels[i]), kLogClamp, 1.0);
    sum -= std::log(p);
  }
  return sum / static_cast<double>(preds.n_samples());
}

double error_rate(const PredictionMatrix& preds, const Labels& labels) {
  check_labels(preds, labels);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < preds.n_samples(); ++i)
    if (preds.argmax(i) != labels[i]) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(preds.n_samples());
}

double macro_f1(const PredictionMatrix& preds, const Labels& labels) {
  check_labels(preds, labels);
  const std::size_t k = preds.n_classes();
  std::vector<std::size_t> tp(k), fp(k), fn(k);
  for (std::size_t i = 0; i < preds.n_samples(); ++i) {
    auto predicted = preds.argmax(i);
    auto truth = labels[i];
    if (predicted == truth) {
      ++tp[truth];
    } else {
      ++fp[predicted];
      ++fn[truth];
    }
  }
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < k; ++c) {
    // A class that is neither predicted nor present in the labels is skipped.
    if (tp[c] + fp[c] + fn[c] == 0) continue;
    total += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    ++counted;
  }
  return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

MetricValue evaluate_metric(ErrorMetric metric, const PredictionMatrix& preds, const Labels& labels) {
  switch (metric) {
    case ErrorMetric::cross_entropy: return {metric, cross_entropy(preds, labels)};
    case ErrorMetric::error_rate: return {metric, error_rate(preds, labels)};
    case ErrorMetric::macro_f1: return {metric, macro_f1(preds, labels)};
  }
  return {metric, cross_entropy(preds, labels)};
}

}  // namespace forge
