#include "forge/hpo.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <mutex>
#include <thread>

#include "forge/error.hpp"

namespace forge {

using nlohmann::json;

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  const double span = static_cast<double>(hi - lo) + 1.0;
  auto offset = static_cast<std::int64_t>(std::floor(uniform() * span));
  return std::min(hi, lo + offset);
}

std::uint64_t hash_mix(std::uint64_t seed, std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  // splitmix64 finalizer over the seeded hash
  std::uint64_t z = h ^ (seed + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double hash_unit(std::uint64_t seed, std::string_view data) {
  return static_cast<double>(hash_mix(seed, data) >> 11) * 0x1.0p-53;
}

HyperparameterSpace::HyperparameterSpace(std::vector<Dimension> dimensions) : dimensions_(std::move(dimensions)) {
  for (const auto& d : dimensions_) {
    if (d.name.empty()) throw Error(Errc::BadConfig, "dimension names must be non-empty");
    if (d.kind == DimensionKind::categorical) {
      if (d.values.empty()) throw Error(Errc::BadConfig, "categorical dimension '" + d.name + "' has no values");
    } else if (!(d.low < d.high)) {
      throw Error(Errc::BadConfig, "dimension '" + d.name + "' needs low < high");
    }
    if (d.kind == DimensionKind::discrete && std::ceil(d.low) > std::floor(d.high))
      throw Error(Errc::BadConfig, "discrete dimension '" + d.name + "' holds no integer");
  }
}

HyperparameterSpace HyperparameterSpace::from_json(const json& doc) {
  const json* list = &doc;
  if (doc.is_object()) {
    if (!doc.contains("dimensions")) throw Error(Errc::BadConfig, "space object needs a 'dimensions' list");
    list = &doc["dimensions"];
  }
  if (!list->is_array()) throw Error(Errc::BadConfig, "space must be a list of dimensions");
  std::vector<Dimension> dims;
  for (const auto& jd : *list) {
    if (!jd.is_object()) throw Error(Errc::BadConfig, "each dimension must be an object");
    Dimension d;
    d.name = jd.value("name", "");
    const std::string type = jd.value("type", "");
    if (type == "continuous") {
      d.kind = DimensionKind::continuous;
    } else if (type == "discrete") {
      d.kind = DimensionKind::discrete;
    } else if (type == "categorical") {
      d.kind = DimensionKind::categorical;
    } else {
      throw Error(Errc::BadConfig, "dimension '" + d.name + "' has unknown type '" + type + "'");
    }
    if (d.kind == DimensionKind::categorical) {
      if (!jd.contains("values") || !jd["values"].is_array())
        throw Error(Errc::BadConfig, "categorical dimension '" + d.name + "' needs a 'values' list");
      for (const auto& v : jd["values"]) d.values.push_back(v);
    } else {
      if (jd.contains("range") && jd["range"].is_array() && jd["range"].size() == 2) {
        d.low = jd["range"][0].get<double>();
        d.high = jd["range"][1].get<double>();
      } else {
        if (!jd.contains("low") || !jd.contains("high") || !jd["low"].is_number() || !jd["high"].is_number())
          throw Error(Errc::BadConfig, "dimension '" + d.name + "' needs numeric 'low' and 'high'");
        d.low = jd["low"].get<double>();
        d.high = jd["high"].get<double>();
      }
    }
    dims.push_back(std::move(d));
  }
  return HyperparameterSpace(std::move(dims));
}

HyperparameterSpace HyperparameterSpace::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::MissingFile, "cannot open space file " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw Error(Errc::BadConfig, "space file " + path.string() + ": " + e.what());
  }
}

json HyperparameterSpace::to_json() const {
  json out = json::array();
  for (const auto& d : dimensions_) {
    switch (d.kind) {
      case DimensionKind::continuous:
        out.push_back({{"name", d.name}, {"type", "continuous"}, {"low", d.low}, {"high", d.high}});
        break;
      case DimensionKind::discrete:
        out.push_back({{"name", d.name}, {"type", "discrete"}, {"low", d.low}, {"high", d.high}});
        break;
      case DimensionKind::categorical:
        out.push_back({{"name", d.name}, {"type", "categorical"}, {"values", d.values}});
        break;
    }
  }
  return {{"dimensions", out}};
}

json sample(const HyperparameterSpace& space, Rng& rng) {
  json point = json::object();
  for (const auto& d : space.dimensions()) {
    switch (d.kind) {
      case DimensionKind::continuous:
        point[d.name] = rng.uniform(d.low, d.high);
        break;
      case DimensionKind::discrete:
        point[d.name] = rng.uniform_int(static_cast<std::int64_t>(std::ceil(d.low)),
                                        static_cast<std::int64_t>(std::floor(d.high)));
        break;
      case DimensionKind::categorical:
        point[d.name] = d.values[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(d.values.size()) - 1))];
        break;
    }
  }
  return point;
}

std::string_view to_string(TrialStatus status) noexcept {
  switch (status) {
    case TrialStatus::running: return "running";
    case TrialStatus::stopped: return "stopped";
    case TrialStatus::completed: return "completed";
  }
  return "running";
}

void SchedulerConfig::validate() const {
  if (eta < 2) throw Error(Errc::BadConfig, "eta must be >= 2");
  if (min_resource < 1) throw Error(Errc::BadConfig, "min resource must be >= 1");
  if (max_resource < min_resource) throw Error(Errc::BadConfig, "max resource must be >= min resource");
  if (max_trials < 1) throw Error(Errc::BadConfig, "need at least one trial");
}

std::size_t SchedulerConfig::top_rung() const {
  std::size_t k = 0;
  long long r = min_resource;
  while (r * eta <= max_resource) {
    r *= eta;
    ++k;
  }
  return k;
}

int SchedulerConfig::rung_resource(std::size_t rung) const {
  long long r = min_resource;
  for (std::size_t k = 0; k < rung; ++k) r *= eta;
  return static_cast<int>(r);
}

int SchedulerConfig::effective_max_resource() const { return rung_resource(top_rung()); }

AshaScheduler::AshaScheduler(HyperparameterSpace space, SchedulerConfig config)
    : space_(std::move(space)), config_(config), rng_(config.seed) {
  config_.validate();
  rung_members_.resize(config_.top_rung() + 1);
}

std::optional<Job> AshaScheduler::next_job() {
  if (slots_.size() < config_.max_trials) {
    Slot slot;
    slot.record.id = slots_.size();
    slot.record.lambda = sample(space_, rng_);
    slot.busy = true;
    slots_.push_back(slot);
    ++in_flight_;
    return Job{slot.record.id, 0, config_.rung_resource(0), 0, slot.record.lambda};
  }
  return promotion();
}

std::optional<Job> AshaScheduler::promotion() {
  const std::size_t top = config_.top_rung();
  for (std::size_t k = top; k-- > 0;) {
    const auto& members = rung_members_[k];
    if (members.empty()) continue;
    const auto quota = (members.size() + static_cast<std::size_t>(config_.eta) - 1) / static_cast<std::size_t>(config_.eta);
    std::vector<std::size_t> ranked = members;
    std::sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
      double sa = slots_[a].record.rung_scores[k];
      double sb = slots_[b].record.rung_scores[k];
      return sa != sb ? sa > sb : a < b;
    });
    for (std::size_t r = 0; r < quota; ++r) {
      Slot& slot = slots_[ranked[r]];
      if (slot.busy || slot.failed || slot.record.rung != k) continue;
      slot.busy = true;
      ++in_flight_;
      return Job{slot.record.id, k + 1, config_.rung_resource(k + 1), slot.record.resource_used, slot.record.lambda};
    }
  }
  return std::nullopt;
}

void AshaScheduler::report(const JobResult& result) {
  Slot& slot = slots_.at(result.trial);
  if (!slot.busy) throw Error(Errc::BadArgument, "result for a trial that is not running");
  slot.busy = false;
  --in_flight_;
  if (!result.ok) {
    // The in-flight rung is lost; the trial keeps whatever it had completed.
    slot.failed = true;
    slot.record.status = TrialStatus::stopped;
    return;
  }
  auto& rec = slot.record;
  rec.rung = result.rung;
  rec.resource_used = config_.rung_resource(result.rung);
  rec.latest_score = result.score;
  rec.rung_scores.resize(result.rung + 1);
  rec.rung_scores[result.rung] = result.score;
  rung_members_[result.rung].push_back(rec.id);
  rec.status = result.rung == config_.top_rung() ? TrialStatus::completed : TrialStatus::running;
}

std::vector<TrialRecord> AshaScheduler::trials() const {
  std::vector<TrialRecord> out;
  for (const auto& slot : slots_) {
    if (slot.record.rung_scores.empty()) continue;
    TrialRecord rec = slot.record;
    if (rec.status == TrialStatus::running && !slot.busy) rec.status = TrialStatus::stopped;
    out.push_back(std::move(rec));
  }
  return out;
}

RandomSearchScheduler::RandomSearchScheduler(HyperparameterSpace space, SchedulerConfig config)
    : space_(std::move(space)), config_(config), rng_(config.seed) {
  config_.validate();
}

std::optional<Job> RandomSearchScheduler::next_job() {
  if (records_.size() >= config_.max_trials) return std::nullopt;
  TrialRecord rec;
  rec.id = records_.size();
  rec.lambda = sample(space_, rng_);
  records_.push_back(rec);
  done_.push_back(false);
  ++in_flight_;
  return Job{rec.id, 0, config_.max_resource, 0, rec.lambda};
}

void RandomSearchScheduler::report(const JobResult& result) {
  auto& rec = records_.at(result.trial);
  --in_flight_;
  if (!result.ok) {
    rec.status = TrialStatus::stopped;
    return;
  }
  rec.rung = 0;
  rec.resource_used = config_.max_resource;
  rec.latest_score = result.score;
  rec.rung_scores = {result.score};
  rec.status = TrialStatus::completed;
  done_[result.trial] = true;
}

std::vector<TrialRecord> RandomSearchScheduler::trials() const {
  std::vector<TrialRecord> out;
  for (std::size_t i = 0; i < records_.size(); ++i)
    if (done_[i]) out.push_back(records_[i]);
  return out;
}

namespace {

template <typename T>
class Channel {
 public:
  void push(T value) {
    {
      std::lock_guard lock(mutex_);
      queue_.push_back(std::move(value));
    }
    cv_.notify_one();
  }

  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return closed_ || !queue_.empty(); });
    if (queue_.empty()) return std::nullopt;
    T value = std::move(queue_.front());
    queue_.pop_front();
    return value;
  }

  void close() {
    {
      std::lock_guard lock(mutex_);
      closed_ = true;
    }
    cv_.notify_all();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<T> queue_;
  bool closed_ = false;
};

}  // namespace

std::vector<TrialRecord> run_trials(TrialScheduler& scheduler, const Objective& objective, std::size_t n_workers) {
  if (n_workers < 1) throw Error(Errc::BadConfig, "need at least one worker");
  Channel<Job> jobs;
  Channel<JobResult> results;
  std::vector<std::jthread> workers;
  workers.reserve(n_workers);
  for (std::size_t w = 0; w < n_workers; ++w) {
    workers.emplace_back([&] {
      while (auto job = jobs.pop()) {
        JobResult r{job->trial, job->rung, 0.0, true};
        try {
          r.score = objective.evaluate(job->lambda, job->epochs);
        } catch (...) {
          r.ok = false;
        }
        results.push(r);
      }
    });
  }

  std::size_t idle = n_workers;
  while (true) {
    while (idle > 0) {
      auto job = scheduler.next_job();
      if (!job) break;
      jobs.push(std::move(*job));
      --idle;
    }
    if (scheduler.in_flight() == 0) break;
    auto r = results.pop();
    scheduler.report(*r);
    ++idle;
  }
  jobs.close();
  workers.clear();
  return scheduler.trials();
}

std::vector<TrialRecord> simulate_trials(TrialScheduler& scheduler, const Objective& objective,
                                         std::size_t n_workers, std::uint64_t clock_seed) {
  if (n_workers < 1) throw Error(Errc::BadConfig, "need at least one worker");
  struct Pending {
    double finish;
    std::size_t order;
    JobResult result;
  };
  auto later = [](const Pending& a, const Pending& b) {
    return a.finish != b.finish ? a.finish > b.finish : a.order > b.order;
  };
  std::vector<Pending> running;  // min-heap on (finish, order)
  double now = 0.0;
  std::size_t dispatched = 0;
  std::size_t idle = n_workers;
  while (true) {
    while (idle > 0) {
      auto job = scheduler.next_job();
      if (!job) break;
      JobResult r{job->trial, job->rung, 0.0, true};
      try {
        r.score = objective.evaluate(job->lambda, job->epochs);
      } catch (...) {
        r.ok = false;
      }
      const double epoch_time = 0.5 + hash_unit(clock_seed, "epoch-time:" + job->lambda.dump());
      const double duration = std::max(1, job->epochs - job->start_epochs) * epoch_time;
      running.push_back(Pending{now + duration, dispatched++, r});
      std::push_heap(running.begin(), running.end(), later);
      --idle;
    }
    if (scheduler.in_flight() == 0) break;
    std::pop_heap(running.begin(), running.end(), later);
    Pending done = running.back();
    running.pop_back();
    now = done.finish;
    scheduler.report(done.result);
    ++idle;
  }
  return scheduler.trials();
}

std::vector<TrialRecord> run_asha(const HyperparameterSpace& space, const Objective& objective,
                                  const SchedulerConfig& config, std::size_t n_workers, Executor executor) {
  AshaScheduler scheduler(space, config);
  if (executor == Executor::virtual_clock) return simulate_trials(scheduler, objective, n_workers, config.seed);
  return run_trials(scheduler, objective, n_workers);
}

std::vector<TrialRecord> run_random_search(const HyperparameterSpace& space, const Objective& objective,
                                           const SchedulerConfig& config, std::size_t n_workers,
                                           Executor executor) {
  RandomSearchScheduler scheduler(space, config);
  if (executor == Executor::virtual_clock) return simulate_trials(scheduler, objective, n_workers, config.seed);
  return run_trials(scheduler, objective, n_workers);
}

long long total_resource(const std::vector<TrialRecord>& trials) {
  long long total = 0;
  for (const auto& t : trials) total += t.resource_used;
  return total;
}

json trials_to_json(const std::vector<TrialRecord>& trials) {
  json out = json::array();
  for (const auto& t : trials)
    out.push_back({{"id", t.id},
                   {"lambda", t.lambda},
                   {"resource_used", t.resource_used},
                   {"latest_score", t.latest_score},
                   {"rung", t.rung},
                   {"status", to_string(t.status)},
                   {"rung_scores", t.rung_scores}});
  return out;
}

std::vector<TrialRecord> trials_from_json(const json& doc) {
  const json* list = &doc;
  if (doc.is_object() && doc.contains("trials")) list = &doc["trials"];
  if (!list->is_array()) throw Error(Errc::SchemaError, "trials document must hold a list of trials");
  std::vector<TrialRecord> out;
  try {
    for (const auto& jt : *list) {
      TrialRecord t;
      t.id = jt.at("id").get<std::size_t>();
      t.lambda = jt.at("lambda");
      t.resource_used = jt.at("resource_used").get<int>();
      t.latest_score = jt.at("latest_score").get<double>();
      t.rung = jt.at("rung").get<std::size_t>();
      const auto status = jt.at("status").get<std::string>();
      if (status == "completed") {
        t.status = TrialStatus::completed;
      } else if (status == "stopped") {
        t.status = TrialStatus::stopped;
      } else if (status == "running") {
        t.status = TrialStatus::running;
      } else {
        throw Error(Errc::SchemaError, "unknown trial status '" + status + "'");
      }
      if (jt.contains("rung_scores")) t.rung_scores = jt["rung_scores"].get<std::vector<double>>();
      out.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaError, std::string("malformed trial record: ") + e.what());
  }
  return out;
}

}  // namespace forge
