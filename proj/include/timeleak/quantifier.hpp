#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "timeleak/counter.hpp"
#include "timeleak/error.hpp"
#include "timeleak/hash.hpp"
#include "timeleak/sweep.hpp"

namespace timeleak {

namespace detail {

inline double total_size(std::span<const std::uint64_t> sizes) {
  double total = 0.0;
  for (auto b : sizes) total += static_cast<double>(b);
  if (total <= 0.0) throw Error(ErrorCode::kEmptyCensus, "no feasible class; entropy is undefined");
  return total;
}

}  // namespace detail

/// log2 of the number of counted secrets.
inline double initial_entropy(std::span<const std::uint64_t> sizes) { return std::log2(detail::total_size(sizes)); }

/// Expected remaining uncertainty, sum over classes of (B_i / B) log2 B_i.
inline double remaining_entropy(std::span<const std::uint64_t> sizes) {
  const double total = detail::total_size(sizes);
  double acc = 0.0;
  for (auto b : sizes)
    if (b > 0) acc += static_cast<double>(b) * std::log2(static_cast<double>(b));
  return acc / total;
}

inline double shannon_leak(std::span<const std::uint64_t> sizes) {
  return std::max(0.0, initial_entropy(sizes) - remaining_entropy(sizes));
}

inline std::vector<std::uint64_t> class_sizes(const ClassCensus& census) {
  std::vector<std::uint64_t> sizes;
  for (const auto& c : feasible_classes(census)) sizes.push_back(c.count);
  return sizes;
}

struct LeakReport {
  std::size_t k = 0;
  std::size_t feasible_classes = 0;
  std::optional<std::uint64_t> cap;
  std::vector<std::uint64_t> class_sizes;
  double initial = 0.0;
  double remaining = 0.0;
  double leak = 0.0;
  std::string census_hash;
  std::string model_hash;
  std::optional<std::string> sweep_hash;
  std::optional<Verdict> verdict;

  std::string summary() const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "k=%zu, K=%zu, SE_I=%.2f, SE_O=%.2f, leak=%.2f bits", k, feasible_classes, initial,
                  remaining, leak);
    return buf;
  }
};

/// Throws kIncompleteCensus, kEmptyCensus, or kInconsistentInputs when the
/// sweep chose a different interface width than the census was taken at.
inline LeakReport build_report(const ClassCensus& census, const std::optional<SweepResult>& sweep = std::nullopt) {
  if (sweep && sweep->k_star != census.k)
    throw Error(ErrorCode::kInconsistentInputs, "census has k=" + std::to_string(census.k) + " but the sweep selected k*=" +
                                                    std::to_string(sweep->k_star));
  LeakReport report;
  report.k = census.k;
  report.cap = census.cap;
  report.class_sizes = class_sizes(census);
  report.feasible_classes = report.class_sizes.size();
  report.initial = initial_entropy(report.class_sizes);
  report.remaining = remaining_entropy(report.class_sizes);
  report.leak = std::max(0.0, report.initial - report.remaining);
  report.census_hash = hash_json(to_json(census));
  report.model_hash = census.model_hash;
  if (sweep) {
    report.sweep_hash = hash_json(to_json(*sweep));
    report.verdict = sweep->verdict;
  }
  return report;
}

inline constexpr int kReportFormatVersion = 1;

inline nlohmann::json to_json(const LeakReport& r) {
  nlohmann::json doc = {{"format", "timeleak-report"},
                        {"version", kReportFormatVersion},
                        {"k", r.k},
                        {"feasible_classes", r.feasible_classes},
                        {"cap", r.cap ? nlohmann::json(*r.cap) : nlohmann::json(nullptr)},
                        {"class_sizes", r.class_sizes},
                        {"initial_entropy", r.initial},
                        {"remaining_entropy", r.remaining},
                        {"leak_bits", r.leak},
                        {"summary", r.summary()},
                        {"provenance", {{"census", r.census_hash}, {"model", r.model_hash}}}};
  if (r.sweep_hash) doc["provenance"]["sweep"] = *r.sweep_hash;
  if (r.verdict) doc["verdict"] = to_string(*r.verdict);
  return doc;
}

}  // namespace timeleak
