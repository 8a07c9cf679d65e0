#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace forge {

// Row-major n_samples x n_classes matrix of class probabilities.
class PredictionMatrix {
 public:
  PredictionMatrix() = default;
  PredictionMatrix(std::size_t n_samples, std::size_t n_classes);
  PredictionMatrix(std::size_t n_samples, std::size_t n_classes, std::vector<double> values);

  static PredictionMatrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t n_samples() const noexcept { return n_samples_; }
  std::size_t n_classes() const noexcept { return n_classes_; }

  std::span<const double> row(std::size_t i) const {
    return {values_.data() + i * n_classes_, n_classes_};
  }
  std::span<double> row(std::size_t i) { return {values_.data() + i * n_classes_, n_classes_}; }

  double operator()(std::size_t i, std::size_t c) const { return values_[i * n_classes_ + c]; }
  double& operator()(std::size_t i, std::size_t c) { return values_[i * n_classes_ + c]; }

  const std::vector<double>& values() const noexcept { return values_; }
  std::vector<double>& values() noexcept { return values_; }

  bool same_shape(const PredictionMatrix& other) const noexcept {
    return n_samples_ == other.n_samples_ && n_classes_ == other.n_classes_;
  }

  // Index of the largest entry in row i; ties resolve to the lowest class.
  std::size_t argmax(std::size_t i) const;

  friend bool operator==(const PredictionMatrix&, const PredictionMatrix&) = default;

 private:
  std::size_t n_samples_ = 0;
  std::size_t n_classes_ = 0;
  std::vector<double> values_;
};

// Tolerances applied when ingesting probability rows.
inline constexpr double kRowSumTolerance = 1e-4;
inline constexpr double kValueRangeTolerance = 1e-6;

// Checks the probability invariants and renormalizes rows whose sum is within
// kRowSumTolerance of one. Throws InvalidProbability or SchemaError.
void validate_and_normalize(PredictionMatrix& m);

struct Labels {
  std::vector<std::size_t> classes;

  std::size_t size() const noexcept { return classes.size(); }
  std::size_t operator[](std::size_t i) const { return classes[i]; }
  friend bool operator==(const Labels&, const Labels&) = default;
};

struct ModelRecord {
  std::string id;
  double cost = 0.0;  // seconds for the library's reference workload
  std::uint64_t weight_bytes = 0;
  std::uint64_t activation_bytes_per_image = 0;
  double validation_metric = 0.0;  // higher is better
  std::shared_ptr<const PredictionMatrix> predictions;
  nlohmann::json hyperparameters = nlohmann::json::object();
};

// Metadata equality plus probability agreement within `tolerance`.
bool equivalent(const ModelRecord& a, const ModelRecord& b, double tolerance);

class ModelLibrary {
 public:
  ModelLibrary() = default;
  // Validates every library invariant; throws SchemaError / EmptyLibrary.
  ModelLibrary(std::vector<ModelRecord> models, Labels labels);

  const std::vector<ModelRecord>& models() const noexcept { return models_; }
  const Labels& labels() const noexcept { return labels_; }
  std::size_t size() const noexcept { return models_.size(); }
  bool empty() const noexcept { return models_.empty(); }
  const ModelRecord& operator[](std::size_t i) const { return models_[i]; }

  std::size_t n_samples() const noexcept { return labels_.size(); }
  std::size_t n_classes() const;

  // Index of the model with the given id; throws UnknownModelId.
  std::size_t index_of(const std::string& id) const;

 private:
  std::vector<ModelRecord> models_;
  Labels labels_;
};

bool equivalent(const ModelLibrary& a, const ModelLibrary& b, double tolerance = 1e-9);

// Prediction CSV: header line "n_samples,n_classes" followed by one row per sample.
PredictionMatrix read_prediction_csv(const std::filesystem::path& path);
void write_prediction_csv(const PredictionMatrix& m, const std::filesystem::path& path);

ModelLibrary load_library(const std::filesystem::path& manifest_path);

// Keeps the ceil(keep_fraction * |L|) best models by validation_metric, in
// their original library order. Ties on the metric favour the earlier model.
ModelLibrary prune_library(const ModelLibrary& lib, double keep_fraction);

// Writes manifest.json plus one prediction CSV per model into `dir` and
// returns the manifest path.
std::filesystem::path save_library(const ModelLibrary& lib, const std::filesystem::path& dir);

// Lower-level manifest writer used by save_library and the trial exporter.
// `prediction_paths` are stored verbatim (relative to the manifest directory).
void write_manifest(const std::filesystem::path& manifest_path, const std::vector<ModelRecord>& models,
                    const std::vector<std::string>& prediction_paths, const Labels& labels);

}  // namespace forge
