#include "forge/library.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "forge/error.hpp"
#include "text.hpp"

namespace forge {

namespace fs = std::filesystem;
using nlohmann::json;

PredictionMatrix::PredictionMatrix(std::size_t n_samples, std::size_t n_classes)
    : n_samples_(n_samples), n_classes_(n_classes), values_(n_samples * n_classes, 0.0) {}

PredictionMatrix::PredictionMatrix(std::size_t n_samples, std::size_t n_classes, std::vector<double> values)
    : n_samples_(n_samples), n_classes_(n_classes), values_(std::move(values)) {
  if (values_.size() != n_samples_ * n_classes_)
    throw Error(Errc::ShapeMismatch, "value count does not match " + std::to_string(n_samples_) + "x" +
                                         std::to_string(n_classes_));
}

PredictionMatrix PredictionMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  PredictionMatrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != m.n_classes_) throw Error(Errc::ShapeMismatch, "ragged rows");
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  }
  return m;
}

std::size_t PredictionMatrix::argmax(std::size_t i) const {
  auto r = row(i);
  std::size_t best = 0;
  for (std::size_t c = 1; c < r.size(); ++c)
    if (r[c] > r[best]) best = c;
  return best;
}

void validate_and_normalize(PredictionMatrix& m) {
  if (m.n_samples() < 1 || m.n_classes() < 2)
    throw Error(Errc::SchemaError, "prediction matrix needs n_samples >= 1 and n_classes >= 2");
  for (std::size_t i = 0; i < m.n_samples(); ++i) {
    auto r = m.row(i);
    double sum = 0.0;
    for (double& v : r) {
      if (!std::isfinite(v) || v < -kValueRangeTolerance || v > 1.0 + kValueRangeTolerance)
        throw Error(Errc::InvalidProbability, "row " + std::to_string(i) + " has a value outside [0,1]");
      v = std::clamp(v, 0.0, 1.0);
      sum += v;
    }
    if (std::abs(sum - 1.0) > kRowSumTolerance)
      throw Error(Errc::InvalidProbability,
                  "row " + std::to_string(i) + " sums to " + text::format_double(sum));
    for (double& v : r) v /= sum;
  }
}

bool equivalent(const ModelRecord& a, const ModelRecord& b, double tolerance) {
  if (a.id != b.id || a.cost != b.cost || a.weight_bytes != b.weight_bytes ||
      a.activation_bytes_per_image != b.activation_bytes_per_image ||
      a.validation_metric != b.validation_metric || a.hyperparameters != b.hyperparameters)
    return false;
  if (!a.predictions || !b.predictions) return a.predictions == b.predictions;
  const auto& pa = *a.predictions;
  const auto& pb = *b.predictions;
  if (!pa.same_shape(pb)) return false;
  for (std::size_t k = 0; k < pa.values().size(); ++k)
    if (std::abs(pa.values()[k] - pb.values()[k]) > tolerance) return false;
  return true;
}

ModelLibrary::ModelLibrary(std::vector<ModelRecord> models, Labels labels)
    : models_(std::move(models)), labels_(std::move(labels)) {
  if (models_.empty()) throw Error(Errc::EmptyLibrary, "library has no models");
  std::set<std::string> seen;
  const std::size_t n_classes = this->n_classes();
  for (const auto& m : models_) {
    if (!seen.insert(m.id).second) throw Error(Errc::SchemaError, "duplicate model id '" + m.id + "'");
    if (!(m.cost > 0.0)) throw Error(Errc::SchemaError, "model '" + m.id + "' needs cost > 0");
    if (m.weight_bytes == 0) throw Error(Errc::SchemaError, "model '" + m.id + "' needs weight_bytes > 0");
    if (!m.predictions) throw Error(Errc::SchemaError, "model '" + m.id + "' has no predictions");
    if (m.predictions->n_samples() != labels_.size() || m.predictions->n_classes() != n_classes)
      throw Error(Errc::SchemaError, "model '" + m.id + "' prediction shape does not match the library");
  }
  if (n_classes < 2) throw Error(Errc::SchemaError, "need at least 2 classes");
  if (labels_.size() < 1) throw Error(Errc::SchemaError, "need at least 1 sample");
  for (auto c : labels_.classes)
    if (c >= n_classes) throw Error(Errc::SchemaError, "label " + std::to_string(c) + " out of range");
}

std::size_t ModelLibrary::n_classes() const {
  if (models_.empty() || !models_.front().predictions) return 0;
  return models_.front().predictions->n_classes();
}

std::size_t ModelLibrary::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < models_.size(); ++i)
    if (models_[i].id == id) return i;
  throw Error(Errc::UnknownModelId, "no model with id '" + id + "'");
}

bool equivalent(const ModelLibrary& a, const ModelLibrary& b, double tolerance) {
  if (a.size() != b.size() || !(a.labels() == b.labels())) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!equivalent(a[i], b[i], tolerance)) return false;
  return true;
}

PredictionMatrix read_prediction_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::MissingFile, "cannot open prediction file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::SchemaError, path.string() + ": missing header");
  auto header = text::split(line, ',');
  if (header.size() != 2) throw Error(Errc::SchemaError, path.string() + ": header must be n_samples,n_classes");
  auto n_samples = text::parse_int<std::size_t>(header[0]);
  auto n_classes = text::parse_int<std::size_t>(header[1]);
  if (!n_samples || !n_classes) throw Error(Errc::SchemaError, path.string() + ": bad header");

  std::vector<double> values;
  values.reserve(*n_samples * *n_classes);
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    auto cells = text::split(line, ',');
    if (cells.size() != *n_classes)
      throw Error(Errc::SchemaError, path.string() + ": row " + std::to_string(rows) + " has " +
                                         std::to_string(cells.size()) + " cells");
    for (auto cell : cells) {
      auto v = text::parse_double(cell);
      if (!v) throw Error(Errc::SchemaError, path.string() + ": unparsable value '" + std::string(cell) + "'");
      values.push_back(*v);
    }
    ++rows;
  }
  if (rows != *n_samples)
    throw Error(Errc::SchemaError, path.string() + ": expected " + std::to_string(*n_samples) + " rows, got " +
                                       std::to_string(rows));
  return PredictionMatrix(*n_samples, *n_classes, std::move(values));
}

void write_prediction_csv(const PredictionMatrix& m, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << m.n_samples() << ',' << m.n_classes() << '\n';
  for (std::size_t i = 0; i < m.n_samples(); ++i) {
    auto r = m.row(i);
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c) out << ',';
      out << text::format_double(r[c]);
    }
    out << '\n';
  }
  out.flush();
  if (!out) throw Error(Errc::IoError, "failed writing " + path.string());
}

namespace {

const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw Error(Errc::SchemaError, where + ": missing field '" + key + "'");
  return *it;
}

double require_number(const json& obj, const char* key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_number()) throw Error(Errc::SchemaError, where + ": field '" + key + "' must be a number");
  return v.get<double>();
}

std::uint64_t require_count(const json& obj, const char* key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  if (v.is_number_float()) {
    double d = v.get<double>();
    if (d >= 0.0 && std::floor(d) == d && d < 1.8e19) return static_cast<std::uint64_t>(d);
  }
  throw Error(Errc::SchemaError, where + ": field '" + key + "' must be a non-negative integer");
}

}  // namespace

ModelLibrary load_library(const fs::path& manifest_path) {
  if (!fs::exists(manifest_path)) throw Error(Errc::MissingFile, "manifest not found: " + manifest_path.string());
  std::ifstream in(manifest_path);
  if (!in) throw Error(Errc::MissingFile, "cannot open manifest " + manifest_path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(Errc::SchemaError, "manifest is not valid JSON: " + std::string(e.what()));
  }
  if (!doc.is_object()) throw Error(Errc::SchemaError, "manifest must be a JSON object");

  const auto& jlabels = require(doc, "labels", "manifest");
  if (!jlabels.is_array()) throw Error(Errc::SchemaError, "manifest: 'labels' must be an array");
  Labels labels;
  for (const auto& l : jlabels) {
    if (!l.is_number_integer() || l.get<std::int64_t>() < 0)
      throw Error(Errc::SchemaError, "manifest: labels must be non-negative integers");
    labels.classes.push_back(l.get<std::size_t>());
  }

  const auto& jmodels = require(doc, "models", "manifest");
  if (!jmodels.is_array()) throw Error(Errc::SchemaError, "manifest: 'models' must be an array");
  if (jmodels.empty()) throw Error(Errc::EmptyLibrary, "manifest lists no models");

  const fs::path base = manifest_path.parent_path();
  std::vector<ModelRecord> models;
  std::set<std::string> seen;
  for (std::size_t k = 0; k < jmodels.size(); ++k) {
    const auto& jm = jmodels[k];
    const std::string where = "models[" + std::to_string(k) + "]";
    if (!jm.is_object()) throw Error(Errc::SchemaError, where + " must be an object");
    ModelRecord rec;
    const auto& jid = require(jm, "id", where);
    if (!jid.is_string()) throw Error(Errc::SchemaError, where + ": 'id' must be a string");
    rec.id = jid.get<std::string>();
    if (!seen.insert(rec.id).second) throw Error(Errc::SchemaError, "duplicate model id '" + rec.id + "'");
    rec.cost = require_number(jm, "cost", where);
    rec.weight_bytes = require_count(jm, "weight_bytes", where);
    rec.activation_bytes_per_image = require_count(jm, "activation_bytes_per_image", where);
    rec.validation_metric = require_number(jm, "validation_metric", where);
    if (auto it = jm.find("hyperparameters"); it != jm.end()) {
      if (!it->is_object()) throw Error(Errc::SchemaError, where + ": 'hyperparameters' must be an object");
      rec.hyperparameters = *it;
    }
    const auto& jpath = require(jm, "predictions_path", where);
    if (!jpath.is_string()) throw Error(Errc::SchemaError, where + ": 'predictions_path' must be a string");
    fs::path pred_path = jpath.get<std::string>();
    if (pred_path.is_relative()) pred_path = base / pred_path;
    if (!fs::exists(pred_path)) throw Error(Errc::MissingFile, "prediction file not found: " + pred_path.string());
    auto matrix = read_prediction_csv(pred_path);
    validate_and_normalize(matrix);
    rec.predictions = std::make_shared<const PredictionMatrix>(std::move(matrix));
    models.push_back(std::move(rec));
  }
  return ModelLibrary(std::move(models), std::move(labels));
}

ModelLibrary prune_library(const ModelLibrary& lib, double keep_fraction) {
  if (lib.empty()) throw Error(Errc::EmptyLibrary, "cannot prune an empty library");
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
    throw Error(Errc::BadArgument, "keep_fraction must lie in (0, 1]");
  const std::size_t n = lib.size();
  // The small epsilon keeps products such as 0.2 * 10 from rounding up to 3.
  auto keep = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(n) - 1e-9));
  keep = std::clamp<std::size_t>(keep, 1, n);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return lib[a].validation_metric > lib[b].validation_metric;
  });
  order.resize(keep);
  std::sort(order.begin(), order.end());

  std::vector<ModelRecord> kept;
  kept.reserve(keep);
  for (auto i : order) kept.push_back(lib[i]);
  return ModelLibrary(std::move(kept), lib.labels());
}

void write_manifest(const fs::path& manifest_path, const std::vector<ModelRecord>& models,
                    const std::vector<std::string>& prediction_paths, const Labels& labels) {
  json doc;
  doc["labels"] = labels.classes;
  json jmodels = json::array();
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto& m = models[i];
    jmodels.push_back({{"id", m.id},
                       {"cost", m.cost},
                       {"weight_bytes", m.weight_bytes},
                       {"activation_bytes_per_image", m.activation_bytes_per_image},
                       {"validation_metric", m.validation_metric},
                       {"predictions_path", prediction_paths.at(i)},
                       {"hyperparameters", m.hyperparameters}});
  }
  doc["models"] = std::move(jmodels);
  std::ofstream out(manifest_path);
  if (!out) throw Error(Errc::IoError, "cannot write " + manifest_path.string());
  out << doc.dump(2) << '\n';
  out.flush();
  if (!out) throw Error(Errc::IoError, "failed writing " + manifest_path.string());
}

namespace {

std::string file_stem_for(std::size_t index, const std::string& id) {
  std::string safe;
  for (char ch : id) {
    bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') || ch == '-' ||
              ch == '_' || ch == '.';
    safe.push_back(ok ? ch : '_');
  }
  return std::to_string(index) + "_" + safe.substr(0, 64) + ".csv";
}

}  // namespace

fs::path save_library(const ModelLibrary& lib, const fs::path& dir) {
  if (lib.empty()) throw Error(Errc::EmptyLibrary, "refusing to save an empty library");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(Errc::IoError, "cannot create directory " + dir.string());

  std::vector<std::string> paths;
  for (std::size_t i = 0; i < lib.size(); ++i) {
    auto name = file_stem_for(i, lib[i].id);
    write_prediction_csv(*lib[i].predictions, dir / name);
    paths.push_back(name);
  }
  auto manifest = dir / "manifest.json";
  write_manifest(manifest, lib.models(), paths, lib.labels());
  return manifest;
}

}  // namespace forge
