#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "timeleak/dataset.hpp"
#include "timeleak/error.hpp"
#include "timeleak/network.hpp"
#include "timeleak/random.hpp"
#include "timeleak/train.hpp"

namespace timeleak {

struct SweepRecord {
  std::size_t k = 0;
  double test_sse = 0.0;
  double test_r2 = 0.0;
  double max_residual = 0.0;
  std::uint64_t seed = 0;
  std::string model;  // artifact path, filled in by the caller that saves it
};

enum class Verdict { kNoLeakDetected, kLeakDetected };

inline std::string to_string(Verdict v) { return v == Verdict::kLeakDetected ? "LeakDetected" : "NoLeakDetected"; }

struct SweepResult {
  std::vector<SweepRecord> records;  // contiguous k = 0..k_max
  std::size_t k_star = 0;
  double tau = 0.05;
  Verdict verdict = Verdict::kNoLeakDetected;
};

inline constexpr double kDefaultTau = 0.05;
inline constexpr double kSseFloor = 1e-12;

/// Smallest k such that no larger width improves SSE by a relative margin of
/// tau or more: (SSE(k) - SSE(k')) / max(SSE(k), floor) < tau for all k' > k.
inline std::size_t select_k(const std::vector<double>& sse_by_k, double tau = kDefaultTau) {
  if (sse_by_k.empty()) throw Error(ErrorCode::kInvalidArgument, "empty SSE curve");
  if (!(tau > 0.0 && tau < 1.0)) throw Error(ErrorCode::kInvalidArgument, "tau must lie in (0, 1)");
  for (std::size_t k = 0; k < sse_by_k.size(); ++k) {
    const double base = std::max(sse_by_k[k], kSseFloor);
    bool flat = true;
    for (std::size_t later = k + 1; later < sse_by_k.size() && flat; ++later)
      flat = (sse_by_k[k] - sse_by_k[later]) / base < tau;
    if (flat) return k;
  }
  return sse_by_k.size() - 1;
}

inline std::size_t select_k(const std::vector<SweepRecord>& records, double tau = kDefaultTau) {
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].k != i) throw Error(ErrorCode::kInvalidArgument, "sweep records must cover k = 0..k_max in order");
  std::vector<double> curve;
  for (const auto& r : records) curve.push_back(r.test_sse);
  return select_k(curve, tau);
}

/// Leak decision from the SSE elbow and, when `epsilon` is given, from the
/// infinity-norm residual of the k = 0 model.
struct Detection {
  Verdict verdict = Verdict::kNoLeakDetected;
  std::size_t k_star = 0;
  bool elbow_leak = false;
  std::optional<bool> residual_leak;

  bool signals_disagree() const { return residual_leak && *residual_leak != elbow_leak; }

  std::string describe() const {
    std::string text = verdict == Verdict::kLeakDetected ? "LeakDetected(" + std::to_string(k_star) + ")" : "NoLeakDetected";
    if (signals_disagree())
      text += elbow_leak ? " [elbow reports a leak; k=0 residual is within epsilon]"
                         : " [k=0 residual exceeds epsilon; elbow reports no leak]";
    return text;
  }
};

inline Detection detect(const SweepResult& sweep, std::optional<double> epsilon = std::nullopt) {
  Detection d;
  d.k_star = sweep.k_star;
  d.elbow_leak = sweep.k_star >= 1;
  bool leak = d.elbow_leak;
  if (epsilon) {
    if (sweep.records.empty()) throw Error(ErrorCode::kInvalidArgument, "sweep has no k = 0 record");
    d.residual_leak = sweep.records.front().max_residual > *epsilon;
    leak = *d.residual_leak;
  }
  d.verdict = leak ? Verdict::kLeakDetected : Verdict::kNoLeakDetected;
  return d;
}

struct SweepOptions {
  std::size_t k_max = 4;
  std::size_t seeds_per_k = 3;
  double tau = kDefaultTau;
  double test_fraction = 0.1;
  /// Share of the training portion held out for early stopping.
  double validation_fraction = 0.1;
  std::size_t threads = 1;
};

struct SweepOutcome {
  SweepResult result;
  std::vector<TriBranchNetwork> models;  // best model per k
  TraceDataset train_set;
  TraceDataset test_set;
};

inline std::uint64_t sweep_model_seed(std::uint64_t base_seed, std::size_t k, std::size_t replica) {
  return mix_seed(base_seed, 1 + 1000 * k + replica);
}

/// Trains seeds_per_k networks for each k in 0..k_max on one deterministic
/// train/validation/test split, keeps the best by test SSE, and applies the
/// elbow rule. Jobs run on
/// `threads` workers; results do not depend on the thread count.
inline SweepOutcome sweep_k(const TraceDataset& ds, const Architecture& arch_template, const TrainConfig& config,
                            const SweepOptions& options) {
  if (options.k_max < 1) throw Error(ErrorCode::kInvalidArgument, "k_max must be at least 1");
  if (options.seeds_per_k < 1) throw Error(ErrorCode::kInvalidArgument, "seeds_per_k must be at least 1");
  if (ds.schema.n_secret() == 0) throw Error(ErrorCode::kInvalidArgument, "sweep needs secret features");
  config.validate();

  SweepOutcome outcome;
  std::tie(outcome.train_set, outcome.test_set) = split(ds, options.test_fraction, config.seed);
  const auto fit_valid = split(outcome.train_set, options.validation_fraction, mix_seed(config.seed, 0));

  struct Job {
    std::size_t k, replica;
    std::uint64_t seed;
    std::optional<TriBranchNetwork> net;
    Evaluation eval;
    std::exception_ptr error;
  };
  std::vector<Job> jobs;
  for (std::size_t k = 0; k <= options.k_max; ++k)
    for (std::size_t r = 0; r < options.seeds_per_k; ++r) jobs.push_back({k, r, sweep_model_seed(config.seed, k, r), {}, {}, {}});

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      auto& job = jobs[i];
      try {
        Architecture arch = arch_template;
        arch.k = job.k;
        TrainConfig cfg = config;
        cfg.seed = job.seed;
        auto trained = train(fit_valid.first, fit_valid.second, arch, cfg);
        job.eval = evaluate(trained.network, outcome.test_set);
        job.net = std::move(trained.network);
      } catch (...) {
        job.error = std::current_exception();
      }
    }
  };
  const auto n_threads = std::max<std::size_t>(1, std::min(options.threads, jobs.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  for (const auto& job : jobs) {
    if (!job.error) continue;
    try {
      std::rethrow_exception(job.error);
    } catch (const Error& e) {
      throw Error(e.code(), "k=" + std::to_string(job.k) + ": " + e.what());
    }
  }

  for (std::size_t k = 0; k <= options.k_max; ++k) {
    const Job* best = nullptr;
    for (const auto& job : jobs)
      if (job.k == k && (!best || job.eval.sse < best->eval.sse)) best = &job;
    SweepRecord record{k, best->eval.sse, best->eval.r2, best->eval.max_residual, best->seed, {}};
    auto net = *best->net;
    net.metrics = {{"test_sse", record.test_sse}, {"test_r2", record.test_r2}, {"max_residual", record.max_residual}};
    outcome.result.records.push_back(record);
    outcome.models.push_back(std::move(net));
  }
  outcome.result.tau = options.tau;
  outcome.result.k_star = select_k(outcome.result.records, options.tau);
  outcome.result.verdict = outcome.result.k_star >= 1 ? Verdict::kLeakDetected : Verdict::kNoLeakDetected;
  return outcome;
}

inline constexpr int kSweepFormatVersion = 1;

inline nlohmann::json to_json(const SweepResult& sweep) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : sweep.records)
    records.push_back({{"k", r.k},
                       {"test_sse", r.test_sse},
                       {"test_r2", r.test_r2},
                       {"max_residual", r.max_residual},
                       {"seed", r.seed},
                       {"model", r.model}});
  return {{"format", "timeleak-sweep"}, {"version", kSweepFormatVersion}, {"tau", sweep.tau},
          {"k_star", sweep.k_star},     {"verdict", to_string(sweep.verdict)}, {"records", records}};
}

inline SweepResult sweep_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.value("format", "") != "timeleak-sweep" || doc.value("version", -1) != kSweepFormatVersion)
    throw Error(ErrorCode::kSchemaVersionMismatch, "not a version-1 timeleak sweep document");
  try {
    SweepResult sweep;
    sweep.tau = doc.at("tau").get<double>();
    sweep.k_star = doc.at("k_star").get<std::size_t>();
    const auto verdict = doc.at("verdict").get<std::string>();
    if (verdict != "LeakDetected" && verdict != "NoLeakDetected")
      throw Error(ErrorCode::kParseError, "unknown verdict " + verdict);
    sweep.verdict = verdict == "LeakDetected" ? Verdict::kLeakDetected : Verdict::kNoLeakDetected;
    for (const auto& r : doc.at("records"))
      sweep.records.push_back({r.at("k").get<std::size_t>(), r.at("test_sse").get<double>(), r.at("test_r2").get<double>(),
                               r.at("max_residual").get<double>(), r.at("seed").get<std::uint64_t>(),
                               r.value("model", "")});
    if (sweep.records.empty() || sweep.k_star >= sweep.records.size())
      throw Error(ErrorCode::kParseError, "k_star outside the recorded range");
    if ((sweep.verdict == Verdict::kLeakDetected) != (sweep.k_star >= 1))
      throw Error(ErrorCode::kParseError, "verdict inconsistent with k_star");
    return sweep;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }
}

}  // namespace timeleak
