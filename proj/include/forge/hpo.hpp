#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace forge {

// Seedable generator with portable uniform draws (std distributions are
// implementation-defined, which would break cross-platform reproducibility).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();                                // [0, 1)
  double uniform(double lo, double hi);            // [lo, hi)
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // [lo, hi]

 private:
  std::mt19937_64 engine_;
};

// Deterministic hashing helpers shared by the synthetic components.
std::uint64_t hash_mix(std::uint64_t seed, std::string_view data);
double hash_unit(std::uint64_t seed, std::string_view data);  // [0, 1)

enum class DimensionKind { continuous, discrete, categorical };

struct Dimension {
  std::string name;
  DimensionKind kind = DimensionKind::continuous;
  double low = 0.0;
  double high = 1.0;
  std::vector<nlohmann::json> values;  // categorical only
};

class HyperparameterSpace {
 public:
  HyperparameterSpace() = default;
  explicit HyperparameterSpace(std::vector<Dimension> dimensions);

  // Accepts either a list of dimensions or {"dimensions": [...]}. Each entry is
  // {"name", "type": continuous|discrete|categorical, "low", "high"} or
  // {"name", "type": "categorical", "values": [...]}.
  static HyperparameterSpace from_json(const nlohmann::json& doc);
  static HyperparameterSpace load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  const std::vector<Dimension>& dimensions() const noexcept { return dimensions_; }

 private:
  std::vector<Dimension> dimensions_;
};

// One uniform draw per dimension, returned as a JSON object name -> value.
nlohmann::json sample(const HyperparameterSpace& space, Rng& rng);

enum class TrialStatus { running, stopped, completed };

std::string_view to_string(TrialStatus status) noexcept;

struct TrialRecord {
  std::size_t id = 0;
  nlohmann::json lambda;
  int resource_used = 0;  // epochs trained so far
  double latest_score = 0.0;  // higher is better
  std::size_t rung = 0;
  TrialStatus status = TrialStatus::running;
  std::vector<double> rung_scores;  // score recorded at each completed rung
};

struct SchedulerConfig {
  int eta = 3;
  int min_resource = 1;
  int max_resource = 81;
  std::size_t max_trials = 64;
  std::uint64_t seed = 42;

  void validate() const;
  // max_resource rounded down so that max / min is a power of eta.
  int effective_max_resource() const;
  std::size_t top_rung() const;
  int rung_resource(std::size_t rung) const;
};

class Objective {
 public:
  virtual ~Objective() = default;
  // Score after training `lambda` for `epochs` epochs. Must be deterministic
  // and resumable: a later call with more epochs supersedes an earlier one.
  virtual double evaluate(const nlohmann::json& lambda, int epochs) const = 0;
};

// score(l, e) = q(l) * (1 - exp(-e / tau(l))) + noise(seed, l, e)
// q in [0, 1] from a hash of (seed, l); tau = 10 - 8 q lies in [2, 10], so
// better configurations also converge faster; |noise| <= noise_amplitude.
class SyntheticObjective final : public Objective {
 public:
  explicit SyntheticObjective(std::uint64_t seed, double noise_amplitude = 0.01);

  double evaluate(const nlohmann::json& lambda, int epochs) const override;
  double quality(const nlohmann::json& lambda) const;
  double tau(const nlohmann::json& lambda) const;
  double noise_amplitude() const noexcept { return noise_; }

 private:
  std::uint64_t seed_;
  double noise_;
};

// Work unit handed to a worker: train `lambda` until `epochs`.
struct Job {
  std::size_t trial = 0;
  std::size_t rung = 0;
  int epochs = 0;
  int start_epochs = 0;  // epochs already trained; the job resumes from here
  nlohmann::json lambda;
};

// Message a worker sends back. `ok == false` means the worker dropped the job.
struct JobResult {
  std::size_t trial = 0;
  std::size_t rung = 0;
  double score = 0.0;
  bool ok = true;
};

class TrialScheduler {
 public:
  virtual ~TrialScheduler() = default;
  // Next job to dispatch, or nothing when no work is available right now.
  virtual std::optional<Job> next_job() = 0;
  virtual void report(const JobResult& result) = 0;
  virtual std::size_t in_flight() const = 0;
  // Records of every trial that completed at least one job.
  virtual std::vector<TrialRecord> trials() const = 0;
};

// Asynchronous successive halving over a single bracket. New trials are
// started while the trial budget lasts; afterwards an idle worker promotes the
// best trial of the highest rung k whose rank among the m scores recorded at
// rung k is within ceil(m / eta). Nothing ever waits for a rung to fill up.
class AshaScheduler final : public TrialScheduler {
 public:
  AshaScheduler(HyperparameterSpace space, SchedulerConfig config);

  std::optional<Job> next_job() override;
  void report(const JobResult& result) override;
  std::size_t in_flight() const override { return in_flight_; }
  std::vector<TrialRecord> trials() const override;

 private:
  struct Slot {
    TrialRecord record;
    bool busy = false;
    bool failed = false;
  };

  std::optional<Job> promotion();

  HyperparameterSpace space_;
  SchedulerConfig config_;
  Rng rng_;
  std::vector<Slot> slots_;
  std::vector<std::vector<std::size_t>> rung_members_;  // trial ids with a score at each rung
  std::size_t in_flight_ = 0;
};

// Every trial trains for the full max_resource in one job.
class RandomSearchScheduler final : public TrialScheduler {
 public:
  RandomSearchScheduler(HyperparameterSpace space, SchedulerConfig config);

  std::optional<Job> next_job() override;
  void report(const JobResult& result) override;
  std::size_t in_flight() const override { return in_flight_; }
  std::vector<TrialRecord> trials() const override;

 private:
  HyperparameterSpace space_;
  SchedulerConfig config_;
  Rng rng_;
  std::vector<TrialRecord> records_;
  std::vector<bool> done_;
  std::size_t in_flight_ = 0;
};

// Drives a scheduler with `n_workers` worker threads. Workers only see Job
// messages and answer with JobResult messages; an objective that throws is
// treated as a worker disconnect.
std::vector<TrialRecord> run_trials(TrialScheduler& scheduler, const Objective& objective, std::size_t n_workers);

// Same message loop as run_trials, but workers are simulated on a virtual
// clock: a job occupies its worker for (epochs - start_epochs) * epoch_time,
// epoch_time in [0.5, 1.5) hashed from the configuration. Completions are
// delivered in (finish time, dispatch order) order, so any worker count is
// reproducible.
std::vector<TrialRecord> simulate_trials(TrialScheduler& scheduler, const Objective& objective,
                                         std::size_t n_workers, std::uint64_t clock_seed = 0);

enum class Executor { threads, virtual_clock };

std::vector<TrialRecord> run_asha(const HyperparameterSpace& space, const Objective& objective,
                                  const SchedulerConfig& config, std::size_t n_workers,
                                  Executor executor = Executor::threads);
std::vector<TrialRecord> run_random_search(const HyperparameterSpace& space, const Objective& objective,
                                           const SchedulerConfig& config, std::size_t n_workers,
                                           Executor executor = Executor::threads);

long long total_resource(const std::vector<TrialRecord>& trials);

nlohmann::json trials_to_json(const std::vector<TrialRecord>& trials);
std::vector<TrialRecord> trials_from_json(const nlohmann::json& doc);

// Maps a trial onto inference cost and memory footprint.
struct CostModel {
  double min_cost = 1.0;
  double max_cost = 20.0;
  double weight_bytes_per_cost = 5e7;
  double activation_ratio = 0.01;  // activation bytes per image relative to weights
  std::uint64_t seed = 7;
};

// Generates validation labels and per-trial class-probability matrices whose
// quality follows the trial score.
struct PredictionGenerator {
  std::size_t n_samples = 200;
  std::size_t n_classes = 10;
  std::uint64_t seed = 11;
};

// Writes the manifest and one prediction CSV per trial next to it.
std::filesystem::path export_library(const std::vector<TrialRecord>& trials, const CostModel& cost_model,
                                     const PredictionGenerator& generator,
                                     const std::filesystem::path& manifest_path);

}  // namespace forge
