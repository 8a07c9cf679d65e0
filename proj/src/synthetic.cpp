#include <algorithm>
#include <cmath>

#include "forge/combiners.hpp"
#include "forge/error.hpp"
#include "forge/hpo.hpp"
#include "forge/library.hpp"

namespace forge {

namespace fs = std::filesystem;
using nlohmann::json;

SyntheticObjective::SyntheticObjective(std::uint64_t seed, double noise_amplitude)
    : seed_(seed), noise_(noise_amplitude) {
  if (!(noise_amplitude >= 0.0)) throw Error(Errc::BadConfig, "noise amplitude must be >= 0");
}

double SyntheticObjective::quality(const json& lambda) const { return hash_unit(seed_, "quality:" + lambda.dump()); }

double SyntheticObjective::tau(const json& lambda) const { return 10.0 - 8.0 * quality(lambda); }

double SyntheticObjective::evaluate(const json& lambda, int epochs) const {
  const double e = std::max(0, epochs);
  double score = quality(lambda) * (1.0 - std::exp(-e / tau(lambda)));
  if (noise_ > 0.0) {
    const double u = hash_unit(seed_, "noise:" + std::to_string(epochs) + ":" + lambda.dump());
    score += noise_ * (2.0 * u - 1.0);
  }
  return score;
}

namespace {

constexpr double kRandomShare = 0.3;  // share of the non-target mass drawn at random
constexpr double kMaxConfidence = 0.97;

PredictionMatrix generate_predictions(const Labels& labels, std::size_t n_classes, double score, Rng& rng) {
  const double s = std::clamp(score, 0.0, 1.0);
  const double k = static_cast<double>(n_classes);
  const double p_correct = 1.0 / k + (1.0 - 1.0 / k) * s;
  const double confidence = kMaxConfidence * s;

  PredictionMatrix m(labels.size(), n_classes);
  std::vector<double> noise(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t target = labels[i];
    if (rng.uniform() >= p_correct) {
      auto other = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n_classes) - 2));
      target = other >= labels[i] ? other + 1 : other;
    }
    double total = 0.0;
    for (auto& v : noise) total += (v = rng.uniform() + 1e-12);
    auto row = m.row(i);
    for (std::size_t c = 0; c < n_classes; ++c) {
      const double background = (1.0 - kRandomShare) / k + kRandomShare * noise[c] / total;
      row[c] = (1.0 - confidence) * background + (c == target ? confidence : 0.0);
    }
  }
  return m;
}

std::string trial_model_id(std::size_t id) {
  std::string digits = std::to_string(id);
  if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
  return "t" + digits;
}

}  // namespace

fs::path export_library(const std::vector<TrialRecord>& trials, const CostModel& cost_model,
                        const PredictionGenerator& generator, const fs::path& manifest_path) {
  if (generator.n_samples < 1 || generator.n_classes < 2)
    throw Error(Errc::BadConfig, "generator needs n_samples >= 1 and n_classes >= 2");
  if (!(cost_model.min_cost > 0.0) || cost_model.max_cost < cost_model.min_cost)
    throw Error(Errc::BadConfig, "cost model needs 0 < min_cost <= max_cost");

  const fs::path dir = manifest_path.parent_path().empty() ? fs::path(".") : manifest_path.parent_path();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw Error(Errc::IoError, "cannot create directory " + dir.string());

  Rng label_rng(generator.seed);
  Labels labels;
  for (std::size_t i = 0; i < generator.n_samples; ++i)
    labels.classes.push_back(
        static_cast<std::size_t>(label_rng.uniform_int(0, static_cast<std::int64_t>(generator.n_classes) - 1)));

  const std::string stem = manifest_path.stem().string();
  std::vector<ModelRecord> models;
  std::vector<std::string> paths;
  for (const auto& t : trials) {
    const std::string key = std::to_string(t.id) + ":" + t.lambda.dump();
    Rng rng(hash_mix(generator.seed, "predictions:" + key));
    auto preds = generate_predictions(labels, generator.n_classes, t.latest_score, rng);

    ModelRecord rec;
    rec.id = trial_model_id(t.id);
    const double u = hash_unit(cost_model.seed, "cost:" + t.lambda.dump());
    rec.cost = cost_model.min_cost + (cost_model.max_cost - cost_model.min_cost) * u;
    rec.weight_bytes = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(rec.cost * cost_model.weight_bytes_per_cost)));
    rec.activation_bytes_per_image =
        static_cast<std::uint64_t>(std::llround(static_cast<double>(rec.weight_bytes) * cost_model.activation_ratio));
    rec.validation_metric = 1.0 - error_rate(preds, labels);
    rec.hyperparameters = t.lambda.is_object() ? t.lambda : json{{"lambda", t.lambda}};
    rec.hyperparameters["epochs"] = t.resource_used;
    rec.hyperparameters["score"] = t.latest_score;

    const std::string file = stem + "_" + rec.id + ".csv";
    write_prediction_csv(preds, dir / file);
    rec.predictions = std::make_shared<const PredictionMatrix>(std::move(preds));
    models.push_back(std::move(rec));
    paths.push_back(file);
  }
  write_manifest(manifest_path, models, paths, labels);
  return manifest_path;
}

}  // namespace forge
