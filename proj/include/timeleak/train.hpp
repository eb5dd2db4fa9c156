#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "timeleak/dataset.hpp"
#include "timeleak/error.hpp"
#include "timeleak/network.hpp"
#include "timeleak/random.hpp"

namespace timeleak {

struct TrainConfig {
  double learning_rate = 1e-2;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 2000;
  std::size_t patience = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  double ste_clip = 3.0;
  /// Learning rate is multiplied by `lr_decay` after every `decay_patience`
  /// epochs without validation improvement; 1.0 disables the schedule.
  double lr_decay = 0.5;
  std::size_t decay_patience = 20;
  /// Relative validation-SSE decrease that counts as an improvement.
  double min_improvement = 1e-4;

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning_rate must be positive");
    if (batch_size == 0) throw Error(ErrorCode::kInvalidArgument, "batch_size must be positive");
    if (patience < 1) throw Error(ErrorCode::kInvalidArgument, "patience must be at least 1");
    if (!(ste_clip > 0.0)) throw Error(ErrorCode::kInvalidArgument, "ste_clip must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
      throw Error(ErrorCode::kInvalidArgument, "Adam betas must lie in [0, 1)");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "lr_decay must lie in (0, 1]");
    if (decay_patience < 1) throw Error(ErrorCode::kInvalidArgument, "decay_patience must be at least 1");
    if (!(min_improvement >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "min_improvement must be non-negative");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
          {"patience", c.patience},           {"beta1", c.beta1},           {"beta2", c.beta2},
          {"adam_epsilon", c.adam_epsilon},   {"seed", c.seed},             {"ste_clip", c.ste_clip},
          {"lr_decay", c.lr_decay},           {"decay_patience", c.decay_patience},
          {"min_improvement", c.min_improvement}};
}

struct AdamState {
  Gradients first;
  Gradients second;
  std::uint64_t step = 0;

  static AdamState for_network(const TriBranchNetwork& net) { return {zero_like(net), zero_like(net), 0}; }
};

/// Bias-corrected Adam update applied in place.
inline void adam_step(TriBranchNetwork& net, AdamState& state, const Gradients& grads, const TrainConfig& config) {
  auto layers = net.layers();
  if (grads.size() != layers.size() || state.first.size() != layers.size())
    throw Error(ErrorCode::kDimensionMismatch, "gradient layout does not match network");
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
    param.array() -= config.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + config.adam_epsilon);
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l]->weight, state.first[l].weight, state.second[l].weight, grads[l].weight);
    update(layers[l]->bias, state.first[l].bias, state.second[l].bias, grads[l].bias);
  }
}

struct Evaluation {
  double sse = 0.0;           // normalized time scale
  double r2 = 0.0;            // raw time scale
  double max_residual = 0.0;  // raw time units, infinity norm
};

/// R^2 = 1 - SS_res / SS_tot; a constant target yields 1 on a perfect fit and 0 otherwise.
inline double r_squared(std::span<const double> predicted, std::span<const double> actual) {
  double mean = 0.0;
  for (double a : actual) mean += a;
  mean /= static_cast<double>(actual.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    ss_res += (predicted[i] - actual[i]) * (predicted[i] - actual[i]);
    ss_tot += (actual[i] - mean) * (actual[i] - mean);
  }
  if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
  return 1.0 - ss_res / ss_tot;
}

/// Metrics of `net` on raw (unnormalized) rows.
inline Evaluation evaluate(const TriBranchNetwork& net, const TraceDataset& raw) {
  if (raw.empty()) throw Error(ErrorCode::kDatasetTooSmall, "cannot evaluate on zero rows");
  const auto normalized = apply(net.normalizer, raw);
  const auto batch = make_batch(normalized);
  const Eigen::RowVectorXd pred = predict(net, batch);

  Evaluation eval;
  std::vector<double> pred_raw(raw.size()), actual_raw(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    eval.sse += (pred(c) - batch.time(c)) * (pred(c) - batch.time(c));
    pred_raw[i] = net.normalizer.time.unapply(pred(c));
    actual_raw[i] = raw.rows[i].time;
    eval.max_residual = std::max(eval.max_residual, std::abs(pred_raw[i] - actual_raw[i]));
  }
  eval.r2 = r_squared(pred_raw, actual_raw);
  return eval;
}

inline double sse(const TriBranchNetwork& net, const TraceDataset& raw) { return evaluate(net, raw).sse; }
inline double r2(const TriBranchNetwork& net, const TraceDataset& raw) { return evaluate(net, raw).r2; }

struct EpochRecord {
  double train_sse = 0.0;
  double valid_sse = 0.0;
};

struct TrainResult {
  TriBranchNetwork network;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

/// Mini-batch Adam with early stopping on validation SSE. The normalizer is
/// fitted on `train_raw` only; the best-validation snapshot is returned.
inline TrainResult train(const TraceDataset& train_raw, const TraceDataset& valid_raw, Architecture arch,
                         const TrainConfig& config) {
  config.validate();
  if (!(train_raw.schema == valid_raw.schema))
    throw Error(ErrorCode::kInconsistentInputs, "train and validation schemas differ");
  if (train_raw.empty() || valid_raw.empty())
    throw Error(ErrorCode::kDatasetTooSmall, "training needs non-empty train and validation sets");
  arch.n_secret = train_raw.schema.n_secret();
  arch.n_public = train_raw.schema.n_public();

  TrainResult result{init_network(arch, config.seed), {}, 0};
  auto& net = result.network;
  net.normalizer = fit_normalizer(train_raw);
  net.schema = train_raw.schema;

  const auto train_norm = apply(net.normalizer, train_raw);
  const auto valid_batch = make_batch(apply(net.normalizer, valid_raw));
  const auto train_batch = make_batch(train_norm);

  auto state = AdamState::for_network(net);
  TrainConfig step_config = config;
  TriBranchNetwork best = net;
  double best_valid = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  std::vector<std::size_t> order(train_norm.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(mix_seed(config.seed, epoch));
    rng.shuffle(std::span<std::size_t>(order));
    try {
      for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        const auto count = std::min(config.batch_size, order.size() - start);
        const auto batch = make_batch(train_norm, std::span<const std::size_t>(order).subspan(start, count));
        const auto lg = loss_and_gradients(net, batch, config.ste_clip);
        adam_step(net, state, lg.grads, step_config);
      }
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kNonFiniteLoss)
        throw Error(ErrorCode::kNonFiniteLoss, "epoch " + std::to_string(epoch) + ": weights diverged");
      throw;
    }
    EpochRecord record;
    record.train_sse = (predict(net, train_batch) - train_batch.time).squaredNorm();
    record.valid_sse = (predict(net, valid_batch) - valid_batch.time).squaredNorm();
    if (!std::isfinite(record.train_sse) || !std::isfinite(record.valid_sse))
      throw Error(ErrorCode::kNonFiniteLoss, "epoch " + std::to_string(epoch) + ": weights diverged");
    result.history.push_back(record);
    if (record.valid_sse < best_valid * (1.0 - config.min_improvement) || epoch == 0) {
      best_valid = record.valid_sse;
      best = net;
      result.best_epoch = epoch;
      since_best = 0;
    } else {
      if (record.valid_sse < best_valid) {
        best_valid = record.valid_sse;
        best = net;
        result.best_epoch = epoch;
      }
      if (++since_best >= config.patience) break;
      if (since_best % config.decay_patience == 0) step_config.learning_rate *= config.lr_decay;
    }
  }
  result.network = std::move(best);
  return result;
}

}  // namespace timeleak
