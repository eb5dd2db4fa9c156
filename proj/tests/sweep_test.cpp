#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "timeleak/generators.hpp"
#include "timeleak/random.hpp"
#include "timeleak/svg.hpp"
#include "timeleak/sweep.hpp"

using namespace timeleak;

namespace {

SweepResult curve_result(const std::vector<double>& sse, double tau = kDefaultTau) {
  SweepResult r;
  for (std::size_t k = 0; k < sse.size(); ++k) r.records.push_back({k, sse[k], 0.9, 1.0 + sse[k], 100 + k, ""});
  r.tau = tau;
  r.k_star = select_k(r.records, tau);
  r.verdict = r.k_star >= 1 ? Verdict::kLeakDetected : Verdict::kNoLeakDetected;
  return r;
}

std::vector<double> random_curve(Rng& rng) {
  std::vector<double> c(static_cast<std::size_t>(rng.between(2, 9)));
  double level = rng.uniform(1.0, 1000.0);
  for (auto& v : c) {
    v = level;
    level *= rng.uniform(0.3, 1.1);
  }
  return c;
}

}  // namespace

TEST(SelectK, Examples) {
  EXPECT_EQ(select_k({100, 40, 10, 9.8, 9.7, 9.7}, 0.05), 2u);
  EXPECT_EQ(select_k({5, 5, 5}, 0.05), 0u);
  EXPECT_EQ(select_k({900, 700, 520, 300, 160, 80, 21, 20.8, 20.7, 20.9}, 0.05), 6u);
  EXPECT_EQ(select_k(std::vector<double>{7}, 0.05), 0u);
}

TEST(SelectK, LooksAtAllLaterWidths) {
  // k=1 -> k=2 is flat but k=3 still improves by more than tau
  EXPECT_EQ(select_k({100, 50, 49, 10, 10}, 0.05), 3u);
}

TEST(SelectK, ZeroSseUsesFloor) {
  EXPECT_EQ(select_k({1.0, 0.0, 0.0}, 0.05), 1u);
  EXPECT_EQ(select_k({0.0, 0.0}, 0.05), 0u);
}

TEST(SelectK, RejectsBadArguments) {
  EXPECT_THROW(select_k(std::vector<double>{}, 0.05), Error);
  EXPECT_THROW(select_k({1, 2}, 0.0), Error);
  EXPECT_THROW(select_k({1, 2}, 1.0), Error);
}

TEST(SelectK, MonotoneInTau) {
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const auto c = random_curve(rng);
    const double lo = rng.uniform(0.001, 0.5), hi = rng.uniform(lo, 0.99);
    EXPECT_LE(select_k(c, hi), select_k(c, lo));
  }
}

TEST(SelectK, ScaleInvariant) {
  Rng rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    const auto c = random_curve(rng);
    auto scaled = c;
    const double factor = std::exp2(static_cast<double>(rng.between(-20, 20)));
    for (auto& v : scaled) v *= factor;
    EXPECT_EQ(select_k(c, 0.05), select_k(scaled, 0.05));
  }
}

TEST(SelectK, ChosenWidthSatisfiesRuleAndIsSmallest) {
  Rng rng(9);
  for (int trial = 0; trial < 500; ++trial) {
    const auto c = random_curve(rng);
    const auto k = select_k(c, 0.05);
    for (std::size_t later = k + 1; later < c.size(); ++later) EXPECT_LT((c[k] - c[later]) / c[k], 0.05);
    for (std::size_t earlier = 0; earlier < k; ++earlier) {
      bool violated = false;
      for (std::size_t later = earlier + 1; later < c.size(); ++later)
        violated = violated || (c[earlier] - c[later]) / c[earlier] >= 0.05;
      EXPECT_TRUE(violated);
    }
  }
}

TEST(Detect, ElbowAndResidualSignals) {
  const auto leak = curve_result({10, 1, 1});
  auto d = detect(leak);
  EXPECT_EQ(d.verdict, Verdict::kLeakDetected);
  EXPECT_EQ(d.describe(), "LeakDetected(1)");
  EXPECT_FALSE(d.signals_disagree());

  d = detect(leak, std::numeric_limits<double>::infinity());
  EXPECT_EQ(d.verdict, Verdict::kNoLeakDetected);
  EXPECT_TRUE(d.signals_disagree());

  const auto flat = curve_result({1, 1, 1});
  EXPECT_EQ(detect(flat).verdict, Verdict::kNoLeakDetected);
  d = detect(flat, 0.5);  // k=0 residual is 2.0
  EXPECT_EQ(d.verdict, Verdict::kLeakDetected);
  EXPECT_TRUE(d.signals_disagree());
}

TEST(SweepJson, RoundTrip) {
  const auto r = curve_result({100, 40, 10, 9.8});
  const auto back = sweep_from_json(to_json(r));
  EXPECT_EQ(to_json(back).dump(), to_json(r).dump());
  auto doc = to_json(r);
  doc["version"] = 7;
  EXPECT_THROW(sweep_from_json(doc), Error);
  doc = to_json(r);
  doc["k_star"] = 9;
  EXPECT_THROW(sweep_from_json(doc), Error);
  doc = to_json(r);
  doc["verdict"] = "NoLeakDetected";
  EXPECT_THROW(sweep_from_json(doc), Error);
}

TEST(SweepSvg, MarksChosenWidth) {
  const auto svg = sse_plot_svg(curve_result({100, 40, 10, 9.8}));
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("<polyline"), std::string::npos);
  EXPECT_NE(svg.find("k*=2"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(SweepK, PublicOnlyDataHasNoLeak) {
  const auto g = gen_public_only(3, 4, 600, 0.02, 5);
  TrainConfig config;
  config.seed = 2;
  config.max_epochs = 200;
  SweepOptions options;
  options.k_max = 2;
  options.seeds_per_k = 2;
  const auto outcome = sweep_k(g.dataset, Architecture{0, 0, 0, {4}, {6}, {8}}, config, options);
  ASSERT_EQ(outcome.result.records.size(), 3u);
  ASSERT_EQ(outcome.models.size(), 3u);
  EXPECT_EQ(outcome.result.k_star, 0u);
  EXPECT_EQ(outcome.result.verdict, Verdict::kNoLeakDetected);
  EXPECT_EQ(outcome.test_set.size(), 60u);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(outcome.models[k].arch.k, k);
}

TEST(SweepK, ThreadCountDoesNotChangeResults) {
  auto p = rn_preset("R_2");
  p.seed = 3;
  const auto g = gen_rn(p);
  TrainConfig config;
  config.seed = 4;
  config.max_epochs = 40;
  SweepOptions options;
  options.k_max = 2;
  options.seeds_per_k = 2;
  const Architecture arch{0, 0, 0, {5}, {5}, {10}};
  const auto one = sweep_k(g.dataset, arch, config, options);
  options.threads = 3;
  const auto three = sweep_k(g.dataset, arch, config, options);
  EXPECT_EQ(to_json(one.result).dump(), to_json(three.result).dump());
  for (std::size_t k = 0; k < one.models.size(); ++k)
    EXPECT_EQ(to_json(one.models[k]).dump(), to_json(three.models[k]).dump());
}

TEST(SweepK, RejectsBadOptions) {
  const auto g = gen_rn(rn_preset("R_2"));
  SweepOptions options;
  options.k_max = 0;
  EXPECT_THROW(sweep_k(g.dataset, Architecture{}, TrainConfig{}, options), Error);
  options.k_max = 2;
  options.seeds_per_k = 0;
  EXPECT_THROW(sweep_k(g.dataset, Architecture{}, TrainConfig{}, options), Error);
  SortDemoParams sp;
  options.seeds_per_k = 1;
  EXPECT_THROW(sweep_k(gen_sort_demo(sp), Architecture{}, TrainConfig{}, options), Error);
}
