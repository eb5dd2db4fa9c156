#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "timeleak/dataset.hpp"
#include "timeleak/error.hpp"
#include "timeleak/random.hpp"

namespace timeleak {

/// Observational classes of a generated benchmark, tallied by enumerating the
/// whole secret domain. Sizes are ordered by class key.
struct GroundTruth {
  std::vector<std::uint64_t> class_sizes;

  /// (1/B) * sum_i B_i log2 B_i with B = sum_i B_i.
  double conditional_entropy() const {
    double total = 0.0, weighted = 0.0;
    for (auto size : class_sizes) {
      total += static_cast<double>(size);
      if (size > 1) weighted += static_cast<double>(size) * std::log2(static_cast<double>(size));
    }
    return total > 0.0 ? weighted / total : 0.0;
  }
};

inline nlohmann::json to_json(const GroundTruth& truth) { return truth.class_sizes; }

inline GroundTruth ground_truth_from_json(const nlohmann::json& doc) {
  return GroundTruth{doc.get<std::vector<std::uint64_t>>()};
}

struct GeneratedTraces {
  TraceDataset dataset;
  GroundTruth truth;
};

namespace detail {

inline double multiplicative_noise(Rng& rng, double value, double noise_std) {
  if (noise_std <= 0.0) return value;
  return std::max(0.0, value * (1.0 + noise_std * rng.normal()));
}

inline std::vector<SecretFeature> binary_secrets(std::size_t n) {
  std::vector<SecretFeature> features;
  for (std::size_t j = 0; j < n; ++j) features.push_back({std::to_string(j), FeatureDomain::binary()});
  return features;
}

inline void push_bits(std::vector<double>& out, std::uint64_t value, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) out.push_back(static_cast<double>((value >> j) & 1U));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// R_n family: boolean formulas over the secret bits gate linear loops over
// the public input N.

/// `holds` reads secret bit j as (bits >> j) & 1.
struct Clause {
  std::string formula;
  std::function<bool(std::uint64_t)> holds;
  double coefficient = 1.0;
};

struct RnParams {
  std::size_t n_secret_bits = 2;
  std::vector<Clause> clauses;
  std::size_t n_public_bits = 7;
  std::size_t rows = 400;
  double noise_std = 0.02;
  std::uint64_t seed = 0;
  double base_time = 10.0;
};

inline double rn_time(const std::vector<Clause>& clauses, double base, std::uint64_t secret, std::uint64_t n) {
  double t = base;
  for (const auto& clause : clauses)
    if (clause.holds(secret)) t += clause.coefficient * static_cast<double>(n);
  return t;
}

/// Brute-force tally of secrets by the loop coefficient they switch on.
inline GroundTruth rn_ground_truth(std::size_t n_secret_bits, const std::vector<Clause>& clauses) {
  std::map<double, std::uint64_t> tally;
  for (std::uint64_t s = 0; s < (std::uint64_t{1} << n_secret_bits); ++s) {
    double key = 0.0;
    for (const auto& clause : clauses)
      if (clause.holds(s)) key += clause.coefficient;
    ++tally[key];
  }
  GroundTruth truth;
  for (const auto& [key, size] : tally) truth.class_sizes.push_back(size);
  return truth;
}

inline GeneratedTraces gen_rn(const RnParams& p) {
  if (p.clauses.empty()) throw Error(ErrorCode::kEmptyClauseList, "R_n generator needs at least one clause");
  if (p.n_secret_bits < 1 || p.n_secret_bits > 30)
    throw Error(ErrorCode::kInvalidArgument, "n_secret_bits must lie in [1, 30]");
  if (p.n_public_bits > 30) throw Error(ErrorCode::kInvalidArgument, "n_public_bits must be at most 30");
  std::set<double> seen;
  for (const auto& clause : p.clauses)
    if (!(clause.coefficient > 0.0) || !seen.insert(clause.coefficient).second)
      throw Error(ErrorCode::kInvalidArgument, "clause coefficients must be distinct and positive");

  GeneratedTraces out;
  auto& schema = out.dataset.schema;
  schema.secret_features = detail::binary_secrets(p.n_secret_bits);
  for (std::size_t j = 0; j < p.n_public_bits; ++j) schema.public_features.push_back(std::to_string(j));
  schema.time_unit = "cost-units";

  Rng rng(p.seed);
  out.dataset.rows.reserve(p.rows);
  for (std::size_t r = 0; r < p.rows; ++r) {
    const auto secret = rng.below(std::uint64_t{1} << p.n_secret_bits);
    const auto n = rng.below(std::uint64_t{1} << p.n_public_bits);
    TraceRow row;
    detail::push_bits(row.secret, secret, p.n_secret_bits);
    detail::push_bits(row.pub, n, p.n_public_bits);
    row.time = detail::multiplicative_noise(rng, rn_time(p.clauses, p.base_time, secret, n), p.noise_std);
    out.dataset.rows.push_back(std::move(row));
  }
  out.truth = rn_ground_truth(p.n_secret_bits, p.clauses);
  return out;
}

namespace detail {

inline bool bit(std::uint64_t s, int j) { return ((s >> j) & 1U) != 0; }

}  // namespace detail

inline const std::vector<std::string>& rn_preset_names() {
  static const std::vector<std::string> names = {"R_2", "R_3", "R_4", "R_5", "R_6", "R_7"};
  return names;
}

/// Named R_n presets. Formulas are chosen so the brute-force partitions are
/// R_2 {3,1}, R_3 {2,3,3}, R_4 {6,5,5}, R_5 {10,11,11}, R_6 4x16, R_7 4x32.
inline RnParams rn_preset(std::string_view name) {
  using detail::bit;
  RnParams p;
  if (name == "R_2") {
    p.n_secret_bits = 2;
    p.rows = 400;
    p.clauses = {{"s0 & s1", [](std::uint64_t s) { return bit(s, 0) && bit(s, 1); }, 1.0}};
  } else if (name == "R_3") {
    p.n_secret_bits = 3;
    p.rows = 800;
    p.clauses = {{"s0 & (s1 | s2)", [](std::uint64_t s) { return bit(s, 0) && (bit(s, 1) || bit(s, 2)); }, 1.0},
                 {"!s0 & (s1 | s2)", [](std::uint64_t s) { return !bit(s, 0) && (bit(s, 1) || bit(s, 2)); }, 2.0}};
  } else if (name == "R_4") {
    p.n_secret_bits = 4;
    p.rows = 1600;
    auto gate = [](std::uint64_t s) { return bit(s, 1) || (bit(s, 2) && bit(s, 3)); };
    p.clauses = {{"s0 & (s1 | (s2 & s3))", [gate](std::uint64_t s) { return bit(s, 0) && gate(s); }, 1.0},
                 {"!s0 & (s1 | (s2 & s3))", [gate](std::uint64_t s) { return !bit(s, 0) && gate(s); }, 2.0}};
  } else if (name == "R_5") {
    p.n_secret_bits = 5;
    p.rows = 3200;
    auto gate = [](std::uint64_t s) { return bit(s, 1) || (bit(s, 2) && (bit(s, 3) || bit(s, 4))); };
    p.clauses = {{"s0 & (s1 | (s2 & (s3 | s4)))", [gate](std::uint64_t s) { return bit(s, 0) && gate(s); }, 1.0},
                 {"!s0 & (s1 | (s2 & (s3 | s4)))", [gate](std::uint64_t s) { return !bit(s, 0) && gate(s); }, 2.0}};
  } else if (name == "R_6") {
    p.n_secret_bits = 6;
    p.rows = 6400;
    p.clauses = {{"s0 ^ s3", [](std::uint64_t s) { return bit(s, 0) != bit(s, 3); }, 1.0},
                 {"s1 ^ (s4 & s5)", [](std::uint64_t s) { return bit(s, 1) != (bit(s, 4) && bit(s, 5)); }, 2.0}};
  } else if (name == "R_7") {
    p.n_secret_bits = 7;
    p.rows = 12800;
    p.clauses = {{"s0 ^ (s2 & s3)", [](std::uint64_t s) { return bit(s, 0) != (bit(s, 2) && bit(s, 3)); }, 1.0},
                 {"s1 ^ (s4 | s5)", [](std::uint64_t s) { return bit(s, 1) != (bit(s, 4) || bit(s, 5)); }, 2.0}};
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown R_n preset '" + std::string(name) + "'");
  }
  return p;
}

// ---------------------------------------------------------------------------
// B_L_i family: the secret selects one of 4*i loops, i constant factors for
// each of log N, N, N log N and N^2.

enum class LoopComplexity { kLog = 0, kLinear = 1, kLinearithmic = 2, kQuadratic = 3 };

inline double loop_cost(LoopComplexity c, double n) {
  switch (c) {
    case LoopComplexity::kLog: return std::log2(n);
    case LoopComplexity::kLinear: return n;
    case LoopComplexity::kLinearithmic: return n * std::log2(n);
    case LoopComplexity::kQuadratic: return n * n;
  }
  return 0.0;
}

struct BlParams {
  std::size_t variants = 1;  // i
  std::size_t n_secret_bits = 9;
  std::int64_t public_lo = 1;
  std::int64_t public_hi = 127;
  std::size_t rows = 756;
  double noise_std = 0.02;
  std::uint64_t seed = 0;
};

/// Behaviour b = s mod 4i runs complexity b % 4 with constant factor b / 4 + 1.
inline double bl_time(std::size_t variants, std::uint64_t secret, double n) {
  const auto behaviour = secret % (4 * variants);
  const auto factor = static_cast<double>(behaviour / 4 + 1);
  return factor * loop_cost(static_cast<LoopComplexity>(behaviour % 4), n);
}

inline GroundTruth bl_ground_truth(std::size_t variants, std::size_t n_secret_bits) {
  GroundTruth truth;
  truth.class_sizes.assign(4 * variants, 0);
  for (std::uint64_t s = 0; s < (std::uint64_t{1} << n_secret_bits); ++s) ++truth.class_sizes[s % (4 * variants)];
  return truth;
}

inline GeneratedTraces gen_bl(const BlParams& p) {
  if (p.variants < 1) throw Error(ErrorCode::kInvalidArgument, "B_L needs at least one variant per complexity");
  if (p.n_secret_bits > 30) throw Error(ErrorCode::kInvalidArgument, "n_secret_bits must be at most 30");
  if (p.n_secret_bits < 2 || 4 * p.variants > (std::uint64_t{1} << p.n_secret_bits))
    throw Error(ErrorCode::kTooFewSecretBits,
                std::to_string(p.n_secret_bits) + " bits cannot select " + std::to_string(4 * p.variants) + " behaviours");
  if (p.public_lo < 1 || p.public_hi < p.public_lo)
    throw Error(ErrorCode::kInvalidArgument, "public range must satisfy 1 <= lo <= hi");

  GeneratedTraces out;
  auto& schema = out.dataset.schema;
  schema.secret_features = detail::binary_secrets(p.n_secret_bits);
  schema.public_features = {"N"};
  schema.time_unit = "cost-units";

  Rng rng(p.seed);
  out.dataset.rows.reserve(p.rows);
  for (std::size_t r = 0; r < p.rows; ++r) {
    const auto secret = rng.below(std::uint64_t{1} << p.n_secret_bits);
    const auto n = static_cast<double>(rng.between(p.public_lo, p.public_hi));
    TraceRow row;
    detail::push_bits(row.secret, secret, p.n_secret_bits);
    row.pub.push_back(n);
    row.time = detail::multiplicative_noise(rng, bl_time(p.variants, secret, n), p.noise_std);
    out.dataset.rows.push_back(std::move(row));
  }
  out.truth = bl_ground_truth(p.variants, p.n_secret_bits);
  return out;
}

/// B_L_1 ... B_L_5 with 8 + i secret bits and 756 * 2^(i-1) rows.
inline BlParams bl_preset(std::size_t variants) {
  if (variants < 1 || variants > 5) throw Error(ErrorCode::kInvalidArgument, "B_L presets exist for i = 1..5");
  BlParams p;
  p.variants = variants;
  p.n_secret_bits = 8 + variants;
  p.rows = std::size_t{756} << (variants - 1);
  return p;
}

// ---------------------------------------------------------------------------
// Sorting demo: pure regression, no secret features.

enum class SortAlgorithm { kBubble, kSelection, kInsertion, kMerge, kQuick, kHeap };

inline constexpr std::array<std::string_view, 6> kSortAlgorithmNames = {"bubble", "selection", "insertion",
                                                                        "merge",  "quick",     "heap"};

/// Average-case comparison counts.
inline double sort_cost(SortAlgorithm algorithm, double len) {
  const double nlogn = len * std::log2(len);
  switch (algorithm) {
    case SortAlgorithm::kBubble: return len * len;
    case SortAlgorithm::kSelection: return len * len / 2.0;
    case SortAlgorithm::kInsertion: return len * len / 4.0;
    case SortAlgorithm::kMerge: return nlogn;
    case SortAlgorithm::kQuick: return 1.39 * nlogn;
    case SortAlgorithm::kHeap: return 2.0 * nlogn;
  }
  return 0.0;
}

struct SortDemoParams {
  std::size_t max_len = 1000;
  std::size_t rows = 500;
  double noise_std = 0.02;
  std::uint64_t seed = 0;
};

inline TraceDataset gen_sort_demo(const SortDemoParams& p) {
  if (p.max_len < 2) throw Error(ErrorCode::kInvalidArgument, "max_len must be at least 2");
  TraceDataset ds;
  for (auto name : kSortAlgorithmNames) ds.schema.public_features.push_back("alg_" + std::string(name));
  ds.schema.public_features.push_back("len");
  ds.schema.time_unit = "comparisons";

  Rng rng(p.seed);
  for (std::size_t r = 0; r < p.rows; ++r) {
    const auto algorithm = rng.below(kSortAlgorithmNames.size());
    const auto len = static_cast<double>(rng.between(2, static_cast<std::int64_t>(p.max_len)));
    TraceRow row;
    row.pub.assign(kSortAlgorithmNames.size(), 0.0);
    row.pub[algorithm] = 1.0;
    row.pub.push_back(len);
    row.time = detail::multiplicative_noise(rng, sort_cost(static_cast<SortAlgorithm>(algorithm), len), p.noise_std);
    ds.rows.push_back(std::move(row));
  }
  return ds;
}

/// Timing that depends on the public input only: t = base + slope * N.
/// Secrets are present but inert, the negative control for detection.
inline GeneratedTraces gen_public_only(std::size_t n_secret_bits, std::size_t n_public_bits, std::size_t rows,
                                       double noise_std, std::uint64_t seed) {
  RnParams p;
  p.n_secret_bits = n_secret_bits;
  p.n_public_bits = n_public_bits;
  p.rows = rows;
  p.noise_std = noise_std;
  p.seed = seed;
  p.clauses = {{"true", [](std::uint64_t) { return true; }, 1.0}};
  return gen_rn(p);
}

}  // namespace timeleak
