#include <gtest/gtest.h>

#include <numeric>

#include "support.hpp"
#include "timeleak/counter.hpp"

using namespace timeleak;
using testing_support::binary_domain;
using testing_support::random_reducer;

namespace {

using Status = ClassCensus::Status;

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no timeleak::Error thrown";
  return ErrorCode::kInvalidArgument;
}

// One interface unit computing x0 + x1 - 1.5 over two binary secrets.
ReducerNet and_gate() {
  ReducerNet r;
  r.domain = binary_domain(2);
  r.interface = DenseLayer::zeros(2, 1);
  r.interface.weight(0, 0) = 1.0;
  r.interface.weight(0, 1) = 1.0;
  r.interface.bias(0) = -1.5;
  r.secret_maps.assign(2, Affine{});
  return r;
}

BnbOptions with_cap(std::uint64_t cap) {
  BnbOptions o;
  o.cap = cap;
  return o;
}

SecretDomain random_domain(Rng& rng) {
  SecretDomain dom;
  const auto n = static_cast<std::size_t>(rng.between(1, 6));
  for (std::size_t j = 0; j < n; ++j) {
    if (rng.uniform() < 0.5) {
      dom.features.push_back(FeatureDomain::binary());
    } else {
      const auto lo = rng.between(-5, 5);
      dom.features.push_back(FeatureDomain::int_range(lo, lo + rng.between(1, 7)));
    }
  }
  return dom;
}

std::vector<std::size_t> random_widths(Rng& rng) {
  std::vector<std::size_t> widths(static_cast<std::size_t>(rng.between(0, 2)));
  for (auto& w : widths) w = static_cast<std::size_t>(rng.between(1, 8));
  return widths;
}

}  // namespace

TEST(Reducer, AndGateCensus) {
  const auto r = and_gate();
  const auto brute = brute_force_census(r, r.domain, 10);
  ASSERT_EQ(brute.classes.size(), 2u);
  EXPECT_EQ(brute.classes[0], (ClassCensus::Entry{Status::kCounted, 3}));
  EXPECT_EQ(brute.classes[1], (ClassCensus::Entry{Status::kCounted, 1}));
  EXPECT_EQ(*brute.exact_counts, (std::vector<std::uint64_t>{3, 1}));
  EXPECT_EQ(bnb_census(r, r.domain, with_cap(10)), brute);
}

TEST(Reducer, ConstantInterfaceHasOneClass) {
  auto r = and_gate();
  r.interface.weight.setZero();
  r.interface.bias(0) = 0.25;
  const auto census = bnb_census(r, r.domain, with_cap(10));
  EXPECT_EQ(census.classes[0].status, Status::kInfeasible);
  EXPECT_EQ(census.classes[1], (ClassCensus::Entry{Status::kCounted, 4}));
  // preact exactly 0 binarizes to 1
  r.interface.bias(0) = 0.0;
  EXPECT_EQ(bnb_census(r, r.domain, with_cap(10)).classes[1].count, 4u);
  EXPECT_EQ(brute_force_census(r, r.domain, 10).classes[1].count, 4u);
}

TEST(Reducer, ValuationEncoding) {
  EXPECT_EQ(valuation_index({1, 0, 1}), 5u);
  EXPECT_EQ(valuation_string(5, 3), "101");
  EXPECT_EQ(valuation_string(2, 4), "0100");
}

TEST(Bounds, AffineImageOfBinaryBox) {
  const auto r = and_gate();
  const std::vector<Interval> box{{0, 1}, {0, 1}};
  const auto b = propagate_bounds(r, box);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_LE(b[0].lo, -1.5);
  EXPECT_NEAR(b[0].lo, -1.5, 1e-12);
  EXPECT_GE(b[0].hi, 0.5);
  EXPECT_NEAR(b[0].hi, 0.5, 1e-12);

  const std::vector<Interval> point{{1, 1}, {1, 1}};
  const auto p = propagate_bounds(r, point);
  EXPECT_TRUE(p[0].contains(0.5));
  EXPECT_NEAR(p[0].hi - p[0].lo, 0.0, 1e-12);
  EXPECT_EQ(code_of([&] { propagate_bounds(r, std::vector<Interval>{{0, 1}}); }), ErrorCode::kDimensionMismatch);
}

TEST(Bounds, HiddenReluClampsAtZero) {
  ReducerNet r;
  r.domain = binary_domain(1);
  r.hidden.push_back(DenseLayer::zeros(1, 1));
  r.hidden[0].weight(0, 0) = 5.0;
  r.hidden[0].bias(0) = -2.0;  // pre-ReLU image [-2, 3]
  r.interface = DenseLayer::zeros(1, 1);
  r.interface.weight(0, 0) = 1.0;
  r.secret_maps.assign(1, Affine{});
  const auto b = propagate_bounds(r, std::vector<Interval>{{0, 1}});
  EXPECT_LE(b[0].lo, 0.0);
  EXPECT_NEAR(b[0].lo, 0.0, 1e-12);
  EXPECT_GE(b[0].hi, 3.0);
  EXPECT_NEAR(b[0].hi, 3.0, 1e-12);
}

TEST(Bounds, ContainEveryPointOfTheBox) {
  Rng rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    const auto dom = random_domain(rng);
    const auto r = random_reducer(rng, dom, random_widths(rng), static_cast<std::size_t>(rng.between(1, 4)));
    std::vector<Interval> box;
    for (const auto& f : dom.features) {
      const auto a = rng.between(f.lo, f.hi), c = rng.between(f.lo, f.hi);
      box.push_back({static_cast<double>(std::min(a, c)), static_cast<double>(std::max(a, c))});
    }
    const auto bounds = propagate_bounds(r, box);
    std::vector<double> x(box.size());
    for (int s = 0; s < 20; ++s) {
      for (std::size_t j = 0; j < x.size(); ++j)
        x[j] = static_cast<double>(rng.between(static_cast<std::int64_t>(box[j].lo), static_cast<std::int64_t>(box[j].hi)));
      const auto pre = r.preacts(x);
      for (std::size_t i = 0; i < pre.size(); ++i) EXPECT_TRUE(bounds[i].contains(pre[i])) << "trial " << trial;
    }
  }
}

TEST(Bnb, MatchesBruteForceOnRandomReducers) {
  Rng rng(22);
  for (int trial = 0; trial < 150; ++trial) {
    const auto dom = random_domain(rng);
    const auto r = random_reducer(rng, dom, random_widths(rng), static_cast<std::size_t>(rng.between(1, 4)));
    const auto b_dom = static_cast<std::uint64_t>(dom.size().exact);
    for (const std::uint64_t cap : std::vector<std::uint64_t>{1, 5, b_dom}) {
      const auto bnb = bnb_census(r, dom, with_cap(cap));
      EXPECT_EQ(bnb, brute_force_census(r, dom, cap)) << "trial " << trial << " cap " << cap;
      EXPECT_TRUE(bnb.complete);
    }
  }
}

TEST(Bnb, UncappedCountsPartitionTheDomain) {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const auto dom = random_domain(rng);
    const auto r = random_reducer(rng, dom, random_widths(rng), static_cast<std::size_t>(rng.between(1, 3)));
    const auto b_dom = static_cast<std::uint64_t>(dom.size().exact);
    const auto census = bnb_census(r, dom, with_cap(b_dom));
    std::uint64_t total = 0;
    for (const auto& c : census.classes) total += c.count;
    EXPECT_EQ(total, b_dom);
  }
}

TEST(Bnb, CapOneMarksEveryFeasibleClass) {
  Rng rng(24);
  const auto dom = binary_domain(10);
  const auto r = random_reducer(rng, dom, {8}, 3);
  const auto census = bnb_census(r, dom, with_cap(1));
  const auto exact = *brute_force_census(r, dom, std::nullopt).exact_counts;
  for (std::size_t v = 0; v < exact.size(); ++v) {
    if (exact[v] == 0)
      EXPECT_EQ(census.classes[v].status, Status::kInfeasible);
    else
      EXPECT_EQ(census.classes[v], (ClassCensus::Entry{Status::kCapHit, 1}));
  }
}

TEST(Bnb, ThreadCountDoesNotChangeTheCensus) {
  Rng rng(25);
  SecretDomain dom;
  dom.features = {FeatureDomain::int_range(-40, 40), FeatureDomain::binary(), FeatureDomain::int_range(0, 30),
                  FeatureDomain::binary(), FeatureDomain::binary()};
  const auto r = random_reducer(rng, dom, {12, 6}, 4);
  for (std::uint64_t cap : {3, 100}) {
    auto options = with_cap(cap);
    const auto one = bnb_census(r, dom, options);
    options.threads = 4;
    const auto four = bnb_census(r, dom, options);
    EXPECT_EQ(one, four);
    EXPECT_EQ(one.nodes, four.nodes);
    EXPECT_EQ(one, brute_force_census(r, dom, cap));
  }
}

TEST(Bnb, BudgetExhaustionGivesIncompleteCensus) {
  Rng rng(26);
  const auto dom = binary_domain(12);
  const auto r = random_reducer(rng, dom, {16}, 4);
  auto options = with_cap(4096);
  options.budget = 200;
  const auto census = bnb_census(r, dom, options);
  EXPECT_FALSE(census.complete);
  EXPECT_EQ(code_of([&] { feasible_classes(census); }), ErrorCode::kIncompleteCensus);
}

TEST(Bnb, ProgressIsReported) {
  // two identical hidden units that cancel exactly; interval bounds cannot
  // see the cancellation, so the search has to reach every leaf
  const std::size_t n = 20;
  ReducerNet r;
  r.domain = binary_domain(n);
  r.secret_maps.assign(n, Affine{});
  r.hidden.push_back(DenseLayer::zeros(n, 2));
  for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(n); ++j)
    r.hidden[0].weight(0, j) = r.hidden[0].weight(1, j) = 1.0 + 0.1 * static_cast<double>(j);
  r.interface = DenseLayer::zeros(2, 1);
  r.interface.weight(0, 0) = 1.0;
  r.interface.weight(0, 1) = -1.0;
  r.interface.bias(0) = 0.5;
  std::vector<std::uint64_t> seen;
  auto options = with_cap(std::uint64_t{1} << n);
  options.progress = [&](std::uint64_t nodes) { seen.push_back(nodes); };
  const auto census = bnb_census(r, r.domain, options);
  EXPECT_EQ(census.classes[1], (ClassCensus::Entry{Status::kCapHit, std::uint64_t{1} << n}));
  EXPECT_EQ(census.classes[0].status, Status::kInfeasible);
  EXPECT_GE(census.nodes, std::uint64_t{1} << n);
  ASSERT_GE(seen.size(), 1u);
  for (std::size_t i = 1; i < seen.size(); ++i) EXPECT_GT(seen[i], seen[i - 1]);
}

TEST(Bnb, RejectsBadArguments) {
  const auto r = and_gate();
  EXPECT_EQ(code_of([&] { bnb_census(r, r.domain, with_cap(0)); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([&] { bnb_census(r, binary_domain(3), with_cap(5)); }), ErrorCode::kDimensionMismatch);
  EXPECT_EQ(code_of([&] { brute_force_census(r, r.domain, 0); }), ErrorCode::kInvalidArgument);
}

TEST(BruteForce, DomainGuard) {
  Rng rng(28);
  const auto dom = binary_domain(21);
  const auto r = random_reducer(rng, dom, {}, 1);
  EXPECT_EQ(code_of([&] { brute_force_census(r, dom, 5); }), ErrorCode::kDomainTooLarge);
  const auto ok = binary_domain(20);
  EXPECT_NO_THROW(brute_force_census(random_reducer(rng, ok, {}, 1), ok, 5));
}

TEST(Extract, AgreesWithNetworkOnWholeDomain) {
  const Architecture arch{5, 2, 3, {6, 4}, {3}, {4}};
  const auto net = testing_support::random_net(arch, 31);
  const auto r = extract_reducer(net);
  EXPECT_EQ(r.k(), 3u);
  EXPECT_EQ(r.n_inputs(), 5u);
  const std::vector<double> pub{0.3, -1.2};
  for (std::uint32_t s = 0; s < 32; ++s) {
    std::vector<double> x(5);
    for (std::size_t j = 0; j < 5; ++j) x[j] = static_cast<double>((s >> j) & 1U);
    EXPECT_EQ(r.evaluate(x), forward(net, x, pub).bits);
  }
  EXPECT_EQ(bnb_census(r, r.domain, with_cap(32)), brute_force_census(r, r.domain, 32));
}

TEST(Extract, ZeroWidthInterfaceIsRejected) {
  const auto net = testing_support::random_net(Architecture{3, 1, 0, {4}, {}, {3}}, 2);
  try {
    extract_reducer(net);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kZeroInterfaceWidth);
    EXPECT_NE(std::string(e.what()).find("k=0"), std::string::npos);
  }
}

TEST(CensusJson, RoundTripAndValidation) {
  Rng rng(29);
  const auto dom = binary_domain(6);
  auto census = bnb_census(random_reducer(rng, dom, {5}, 3), dom, with_cap(5));
  census.model_hash = "abc";
  const auto doc = to_json(census);
  const auto back = census_from_json(doc);
  EXPECT_EQ(back, census);
  EXPECT_EQ(back.nodes, census.nodes);
  EXPECT_EQ(to_json(back).dump(), doc.dump());

  auto bad = doc;
  bad["version"] = 2;
  EXPECT_EQ(code_of([&] { census_from_json(bad); }), ErrorCode::kSchemaVersionMismatch);
  bad = doc;
  bad["classes"][0]["status"] = "maybe";
  EXPECT_EQ(code_of([&] { census_from_json(bad); }), ErrorCode::kParseError);
  bad = doc;
  bad["classes"][0]["count"] = 99;
  EXPECT_EQ(code_of([&] { census_from_json(bad); }), ErrorCode::kParseError);
  bad = doc;
  bad["classes"].erase(0);
  EXPECT_EQ(code_of([&] { census_from_json(bad); }), ErrorCode::kParseError);
}

TEST(CensusJson, UncappedCensusHasNullCap) {
  const auto r = and_gate();
  const auto census = brute_force_census(r, r.domain, std::nullopt);
  const auto doc = to_json(census);
  EXPECT_TRUE(doc["cap"].is_null());
  EXPECT_EQ(doc["classes"][1]["valuation"], "1");
  EXPECT_EQ(census_from_json(doc), census);
}
