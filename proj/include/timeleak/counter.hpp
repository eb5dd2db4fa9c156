#pragma once

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "timeleak/dataset.hpp"
#include "timeleak/error.hpp"
#include "timeleak/network.hpp"
#include "timeleak/random.hpp"
#include "timeleak/schema.hpp"

namespace timeleak {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double v) const { return lo <= v && v <= hi; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Finite secret domain in schema order; enumerated lexicographically with
/// the last feature varying fastest.
struct SecretDomain {
  std::vector<FeatureDomain> features;

  static SecretDomain from_schema(const FeatureSchema& schema) {
    SecretDomain dom;
    for (const auto& f : schema.secret_features) dom.features.push_back(f.domain);
    return dom;
  }

  DomainSize size() const {
    FeatureSchema tmp;
    for (const auto& f : features) tmp.secret_features.push_back({"", f});
    return tmp.secret_domain_size();
  }
};

/// The secret branch of a trained network up to the interface threshold,
/// together with the exact raw-to-normalized secret maps.
struct ReducerNet {
  std::vector<DenseLayer> hidden;
  DenseLayer interface;
  std::vector<Affine> secret_maps;
  SecretDomain domain;

  std::size_t k() const { return interface.out_dim(); }
  std::size_t n_inputs() const { return secret_maps.size(); }

  std::vector<double> preacts(std::span<const double> raw) const {
    std::vector<double> x(raw.size());
    for (std::size_t j = 0; j < raw.size(); ++j) x[j] = secret_maps[j].apply(raw[j]);
    return interface_preacts(hidden, interface, x);
  }

  Bits evaluate(std::span<const double> raw) const { return binarize(preacts(raw)); }
};

inline std::uint32_t valuation_index(const Bits& bits) {
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < bits.size(); ++i) v |= static_cast<std::uint32_t>(bits[i] != 0) << i;
  return v;
}

inline std::string valuation_string(std::uint32_t v, std::size_t k) {
  std::string s(k, '0');
  for (std::size_t i = 0; i < k; ++i) s[i] = ((v >> i) & 1U) ? '1' : '0';
  return s;
}

/// Throws kZeroInterfaceWidth for k = 0. Verifies agreement with the full
/// network on 1000 random in-domain secrets before returning.
inline ReducerNet extract_reducer(const TriBranchNetwork& net) {
  if (net.arch.k == 0)
    throw Error(ErrorCode::kZeroInterfaceWidth, "k=0 model has no reducer; nothing leaks through it");
  ReducerNet r{net.secret_hidden, net.interface, net.normalizer.secret, SecretDomain::from_schema(net.schema)};

  Rng rng(0x5eed);
  std::vector<double> raw(r.n_inputs()), normalized(r.n_inputs()), zeros(net.arch.n_public, 0.0);
  for (int trial = 0; trial < 1000; ++trial) {
    for (std::size_t j = 0; j < raw.size(); ++j) {
      const auto& d = r.domain.features[j];
      raw[j] = static_cast<double>(rng.between(d.lo, d.hi));
      normalized[j] = net.normalizer.secret[j].apply(raw[j]);
    }
    if (r.evaluate(raw) != forward(net, normalized, zeros).bits)
      throw Error(ErrorCode::kInconsistentInputs, "extracted reducer disagrees with the network");
  }
  return r;
}

namespace detail {

inline constexpr double kUnitRoundoff = std::numeric_limits<double>::epsilon();

/// Sound interval image of an affine layer, padded outward by a bound on
/// the floating-point error of both this computation and a point evaluation.
inline std::vector<Interval> affine_bounds(const DenseLayer& layer, std::span<const Interval> in) {
  std::vector<Interval> out(layer.out_dim());
  const double gamma = 4.0 * static_cast<double>(in.size() + 2) * kUnitRoundoff;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    double lo = layer.bias(row), hi = layer.bias(row), magnitude = std::abs(layer.bias(row));
    for (std::size_t j = 0; j < in.size(); ++j) {
      const double w = layer.weight(row, static_cast<Eigen::Index>(j));
      if (w >= 0.0) {
        lo += w * in[j].lo;
        hi += w * in[j].hi;
      } else {
        lo += w * in[j].hi;
        hi += w * in[j].lo;
      }
      magnitude += std::abs(w) * std::max(std::abs(in[j].lo), std::abs(in[j].hi));
    }
    const double pad = gamma * magnitude + std::numeric_limits<double>::denorm_min();
    out[i] = {lo - pad, hi + pad};
  }
  return out;
}

}  // namespace detail

/// Interface pre-activation bounds over a box of raw secret values.
inline std::vector<Interval> propagate_bounds(const ReducerNet& r, std::span<const Interval> box) {
  if (box.size() != r.n_inputs()) throw Error(ErrorCode::kDimensionMismatch, "box arity differs from reducer inputs");
  std::vector<Interval> act(box.size());
  for (std::size_t j = 0; j < box.size(); ++j) act[j] = {r.secret_maps[j].apply(box[j].lo), r.secret_maps[j].apply(box[j].hi)};
  for (const auto& layer : r.hidden) {
    act = detail::affine_bounds(layer, act);
    for (auto& iv : act) iv = {std::max(iv.lo, 0.0), std::max(iv.hi, 0.0)};
  }
  return detail::affine_bounds(r.interface, act);
}

/// Per-valuation census. Valuation v sets interface bit i to (v >> i) & 1.
struct ClassCensus {
  enum class Status { kInfeasible, kCounted, kCapHit };

  struct Entry {
    Status status = Status::kInfeasible;
    std::uint64_t count = 0;  // exact count, or the cap for kCapHit

    friend bool operator==(const Entry&, const Entry&) = default;
  };

  std::size_t k = 0;
  std::optional<std::uint64_t> cap;
  std::vector<Entry> classes;
  bool complete = true;
  std::uint64_t nodes = 0;
  std::string model_hash;
  /// Uncapped tallies; populated by brute_force_census only.
  std::optional<std::vector<std::uint64_t>> exact_counts;

  /// Statuses from raw counts: 0 is infeasible, reaching the cap is CapHit.
  static ClassCensus from_counts(std::size_t k, std::optional<std::uint64_t> cap, std::span<const std::uint64_t> counts) {
    if (counts.size() != (std::size_t{1} << k)) throw Error(ErrorCode::kDimensionMismatch, "need one count per valuation");
    ClassCensus c;
    c.k = k;
    c.cap = cap;
    for (auto count : counts) {
      if (count == 0)
        c.classes.push_back({Status::kInfeasible, 0});
      else if (cap && count >= *cap)
        c.classes.push_back({Status::kCapHit, *cap});
      else
        c.classes.push_back({Status::kCounted, count});
    }
    return c;
  }

  /// Same classification, applied to a list of class sizes placed on the
  /// first valuations; the smallest k that fits is used.
  static ClassCensus from_class_sizes(std::span<const std::uint64_t> sizes, std::optional<std::uint64_t> cap) {
    std::size_t k = 0;
    while ((std::size_t{1} << k) < sizes.size()) ++k;
    std::vector<std::uint64_t> counts(std::size_t{1} << k, 0);
    std::copy(sizes.begin(), sizes.end(), counts.begin());
    return from_counts(k, cap, counts);
  }

  friend bool operator==(const ClassCensus& a, const ClassCensus& b) {
    return a.k == b.k && a.cap == b.cap && a.classes == b.classes && a.complete == b.complete;
  }
};

inline std::string to_string(ClassCensus::Status s) {
  switch (s) {
    case ClassCensus::Status::kInfeasible: return "infeasible";
    case ClassCensus::Status::kCounted: return "counted";
    case ClassCensus::Status::kCapHit: return "cap_hit";
  }
  return "unknown";
}

inline constexpr std::uint64_t kBruteForceLimit = std::uint64_t{1} << 20;

/// Evaluates the reducer on every domain element.
inline ClassCensus brute_force_census(const ReducerNet& r, const SecretDomain& dom, std::optional<std::uint64_t> cap) {
  const auto size = dom.size();
  if (size.unbounded || size.exact > kBruteForceLimit)
    throw Error(ErrorCode::kDomainTooLarge, "domain of " + size.to_string() + " secrets exceeds the 2^20 enumeration guard");
  if (cap && *cap == 0) throw Error(ErrorCode::kInvalidArgument, "cap must be at least 1");
  std::vector<std::uint64_t> counts(std::size_t{1} << r.k(), 0);
  std::vector<double> x(dom.features.size());
  for (std::size_t j = 0; j < x.size(); ++j) x[j] = static_cast<double>(dom.features[j].lo);
  std::uint64_t visited = 0;
  bool more = true;
  while (more) {
    ++counts[valuation_index(r.evaluate(x))];
    ++visited;
    more = false;
    for (std::size_t j = x.size(); j-- > 0;) {
      if (x[j] < static_cast<double>(dom.features[j].hi)) {
        x[j] += 1.0;
        more = true;
        break;
      }
      x[j] = static_cast<double>(dom.features[j].lo);
    }
  }
  auto census = ClassCensus::from_counts(r.k(), cap, counts);
  census.nodes = visited;
  census.exact_counts = std::move(counts);
  return census;
}

struct BnbOptions {
  std::uint64_t cap = 100;
  std::uint64_t budget = 100'000'000;  // search nodes
  std::size_t threads = 1;
  /// Called with the running node count roughly every 2^20 nodes.
  std::function<void(std::uint64_t)> progress;
};

namespace detail {

struct IntBox {
  std::vector<std::int64_t> lo, hi;

  bool is_point() const {
    for (std::size_t j = 0; j < lo.size(); ++j)
      if (lo[j] != hi[j]) return false;
    return true;
  }

  std::uint64_t size() const {
    std::uint64_t total = 1;
    for (std::size_t j = 0; j < lo.size(); ++j) {
      const auto width = static_cast<std::uint64_t>(hi[j] - lo[j]) + 1;
      if (total > std::numeric_limits<std::uint64_t>::max() / width) return std::numeric_limits<std::uint64_t>::max();
      total *= width;
    }
    return total;
  }
};

/// Binary features first (lowest index), then bisect the widest integer range.
inline std::optional<std::size_t> branch_feature(const IntBox& box, const SecretDomain& dom) {
  for (std::size_t j = 0; j < box.lo.size(); ++j)
    if (dom.features[j].is_binary() && box.lo[j] != box.hi[j]) return j;
  std::optional<std::size_t> widest;
  for (std::size_t j = 0; j < box.lo.size(); ++j)
    if (box.lo[j] != box.hi[j] && (!widest || box.hi[j] - box.lo[j] > box.hi[*widest] - box.lo[*widest])) widest = j;
  return widest;
}

inline std::pair<IntBox, IntBox> split_box(const IntBox& box, std::size_t j) {
  IntBox low = box, high = box;
  const auto mid = box.lo[j] + (box.hi[j] - box.lo[j]) / 2;
  low.hi[j] = mid;
  high.lo[j] = mid + 1;
  return {std::move(low), std::move(high)};
}

inline constexpr std::uint64_t kTickMask = 0xFFF;

/// Depth-first search over one root box with its own capped counters.
class CensusSearch {
 public:
  CensusSearch(const ReducerNet& r, const SecretDomain& dom, std::uint64_t cap, std::uint64_t budget,
               std::function<void()> tick = {})
      : r_(r),
        dom_(dom),
        cap_(cap),
        budget_(budget),
        tick_(std::move(tick)),
        counts_(std::size_t{1} << r.k(), 0),
        open_(counts_.size()) {}

  void run(IntBox root) {
    std::vector<IntBox> stack{std::move(root)};
    std::vector<Interval> box(dom_.features.size());
    std::vector<double> point(dom_.features.size());
    while (!stack.empty() && open_ > 0) {
      if (nodes_ >= budget_) {
        exhausted_ = true;
        return;
      }
      if ((++nodes_ & kTickMask) == 0 && tick_) tick_();
      IntBox node = std::move(stack.back());
      stack.pop_back();

      if (node.is_point()) {
        for (std::size_t j = 0; j < point.size(); ++j) point[j] = static_cast<double>(node.lo[j]);
        add(valuation_index(r_.evaluate(point)), 1);
        continue;
      }
      for (std::size_t j = 0; j < box.size(); ++j)
        box[j] = {static_cast<double>(node.lo[j]), static_cast<double>(node.hi[j])};
      const auto bounds = propagate_bounds(r_, box);
      std::uint32_t fixed_mask = 0, fixed_value = 0;
      for (std::size_t i = 0; i < bounds.size(); ++i) {
        if (bounds[i].lo >= 0.0) {
          fixed_mask |= 1U << i;
          fixed_value |= 1U << i;
        } else if (bounds[i].hi < 0.0) {
          fixed_mask |= 1U << i;
        }
      }
      const auto all = static_cast<std::uint32_t>(counts_.size() - 1);
      if (fixed_mask == all) {
        add(fixed_value, node.size());
        continue;
      }
      if (!any_open(fixed_mask, fixed_value)) continue;

      const auto j = branch_feature(node, dom_);
      auto [low, high] = split_box(node, *j);
      stack.push_back(std::move(high));
      stack.push_back(std::move(low));
    }
  }

  const std::vector<std::uint64_t>& counts() const { return counts_; }
  std::uint64_t nodes() const { return nodes_; }
  bool exhausted() const { return exhausted_; }

 private:
  void add(std::uint32_t v, std::uint64_t amount) {
    auto& c = counts_[v];
    if (c >= cap_) return;
    c = amount >= cap_ - c ? cap_ : c + amount;
    if (c >= cap_) --open_;
  }

  /// True if some valuation consistent with the fixed bits is below the cap.
  bool any_open(std::uint32_t mask, std::uint32_t value) const {
    const std::uint32_t free = static_cast<std::uint32_t>(counts_.size() - 1) & ~mask;
    if (std::popcount(free) > 12) return true;
    for (std::uint32_t sub = free;; sub = (sub - 1) & free) {
      if (counts_[value | sub] < cap_) return true;
      if (sub == 0) break;
    }
    return false;
  }

  const ReducerNet& r_;
  const SecretDomain& dom_;
  std::uint64_t cap_;
  std::uint64_t budget_;
  std::function<void()> tick_;
  std::vector<std::uint64_t> counts_;
  std::size_t open_;
  std::uint64_t nodes_ = 0;
  bool exhausted_ = false;
};

}  // namespace detail

/// Exact capped census by branch-and-bound with interval bound propagation.
/// The domain is cut into a fixed set of subtrees (six branching levels) that
/// are searched independently with their own caps and an equal share of the
/// node budget, so the result is identical for every thread count. When a
/// share runs out the census is returned with complete = false.
inline ClassCensus bnb_census(const ReducerNet& r, const SecretDomain& dom, const BnbOptions& options) {
  if (options.cap < 1) throw Error(ErrorCode::kInvalidArgument, "cap must be at least 1");
  if (dom.features.size() != r.n_inputs()) throw Error(ErrorCode::kDimensionMismatch, "domain arity differs from reducer");
  if (r.k() > 20) throw Error(ErrorCode::kInvalidArgument, "census supports at most 20 interface bits");

  detail::IntBox root;
  for (const auto& f : dom.features) {
    root.lo.push_back(f.lo);
    root.hi.push_back(f.hi);
  }
  std::vector<detail::IntBox> roots{std::move(root)};
  for (int depth = 0; depth < 6; ++depth) {
    std::vector<detail::IntBox> next;
    for (auto& box : roots) {
      if (const auto j = detail::branch_feature(box, dom)) {
        auto [low, high] = detail::split_box(box, *j);
        next.push_back(std::move(low));
        next.push_back(std::move(high));
      } else {
        next.push_back(std::move(box));
      }
    }
    roots = std::move(next);
  }

  std::atomic<std::uint64_t> visited{0};
  std::mutex progress_mutex;
  auto tick = [&] {
    const auto before = visited.fetch_add(detail::kTickMask + 1);
    const auto after = before + detail::kTickMask + 1;
    if (options.progress && (before >> 20) != (after >> 20)) {
      std::lock_guard lock(progress_mutex);
      options.progress(after);
    }
  };

  const auto share = std::max<std::uint64_t>(1, options.budget / roots.size());
  std::vector<std::optional<detail::CensusSearch>> searches(roots.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < roots.size(); i = next++) {
      searches[i].emplace(r, dom, options.cap, share, tick);
      searches[i]->run(roots[i]);
    }
  };
  const auto n_threads = std::clamp<std::size_t>(options.threads, 1, roots.size());
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::vector<std::uint64_t> counts(std::size_t{1} << r.k(), 0);
  std::uint64_t nodes = 0;
  bool exhausted = false;
  for (const auto& s : searches) {
    for (std::size_t v = 0; v < counts.size(); ++v) counts[v] = std::min(options.cap, counts[v] + s->counts()[v]);
    nodes += s->nodes();
    exhausted = exhausted || s->exhausted();
  }
  auto census = ClassCensus::from_counts(r.k(), options.cap, counts);
  census.nodes = nodes;
  census.complete = !exhausted;
  return census;
}

struct FeasibleClass {
  std::uint32_t valuation = 0;
  std::uint64_t count = 0;  // min(true count, cap)

  friend bool operator==(const FeasibleClass&, const FeasibleClass&) = default;
};

inline std::vector<FeasibleClass> feasible_classes(const ClassCensus& census) {
  if (!census.complete) throw Error(ErrorCode::kIncompleteCensus, "census search did not finish");
  std::vector<FeasibleClass> out;
  for (std::size_t v = 0; v < census.classes.size(); ++v)
    if (census.classes[v].status != ClassCensus::Status::kInfeasible)
      out.push_back({static_cast<std::uint32_t>(v), census.classes[v].count});
  return out;
}

inline constexpr int kCensusFormatVersion = 1;

inline nlohmann::json to_json(const ClassCensus& census) {
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t v = 0; v < census.classes.size(); ++v)
    classes.push_back({{"valuation", valuation_string(static_cast<std::uint32_t>(v), census.k)},
                       {"status", to_string(census.classes[v].status)},
                       {"count", census.classes[v].count}});
  return {{"format", "timeleak-census"},
          {"version", kCensusFormatVersion},
          {"k", census.k},
          {"cap", census.cap ? nlohmann::json(*census.cap) : nlohmann::json(nullptr)},
          {"complete", census.complete},
          {"nodes", census.nodes},
          {"model_hash", census.model_hash},
          {"classes", classes}};
}

inline ClassCensus census_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.value("format", "") != "timeleak-census" || doc.value("version", -1) != kCensusFormatVersion)
    throw Error(ErrorCode::kSchemaVersionMismatch, "not a version-1 timeleak census document");
  try {
    ClassCensus census;
    census.k = doc.at("k").get<std::size_t>();
    if (census.k > 20) throw Error(ErrorCode::kParseError, "k too large");
    if (!doc.at("cap").is_null()) census.cap = doc.at("cap").get<std::uint64_t>();
    census.complete = doc.at("complete").get<bool>();
    census.nodes = doc.value("nodes", std::uint64_t{0});
    census.model_hash = doc.value("model_hash", "");
    const auto& classes = doc.at("classes");
    if (classes.size() != (std::size_t{1} << census.k)) throw Error(ErrorCode::kParseError, "need one entry per valuation");
    census.classes.resize(classes.size());
    for (const auto& entry : classes) {
      const auto bits = entry.at("valuation").get<std::string>();
      if (bits.size() != census.k || bits.find_first_not_of("01") != std::string::npos)
        throw Error(ErrorCode::kParseError, "bad valuation '" + bits + "'");
      std::uint32_t v = 0;
      for (std::size_t i = 0; i < bits.size(); ++i) v |= static_cast<std::uint32_t>(bits[i] == '1') << i;
      const auto status = entry.at("status").get<std::string>();
      const auto count = entry.at("count").get<std::uint64_t>();
      ClassCensus::Entry e{ClassCensus::Status::kInfeasible, count};
      if (status == "counted")
        e.status = ClassCensus::Status::kCounted;
      else if (status == "cap_hit")
        e.status = ClassCensus::Status::kCapHit;
      else if (status != "infeasible")
        throw Error(ErrorCode::kParseError, "unknown status " + status);
      if ((e.status == ClassCensus::Status::kInfeasible) != (count == 0))
        throw Error(ErrorCode::kParseError, "infeasible classes must have count 0");
      if (census.cap && count > *census.cap) throw Error(ErrorCode::kParseError, "count exceeds cap");
      census.classes[v] = e;
    }
    return census;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }
}

}  // namespace timeleak
