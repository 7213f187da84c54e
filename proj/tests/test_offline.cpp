#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "support.hpp"

using namespace coach;
using testsupport::Rng;

namespace {

PartitionStrategy place(const ModelGraph& g, const std::vector<std::string>& device, std::map<std::string, int> bits) {
  std::vector<char> on(g.size(), 0);
  for (const auto& id : device) on[g.index_of(id)] = 1;
  return make_strategy(g, on, [&](LayerIndex p) { return p == kRawInput ? g.input_bits() : bits.at(g.layer(p).id); });
}

ModelGraph example_chain() {
  return testsupport::chain({1, 2, 3}, {0.5, 1, 1.5}, {5000, 10000, 10}, {{2, 0.9}, {4, 0.95}, {8, 0.951}});
}

}  // namespace

TEST(StageTimes, FullDevice) {
  auto g = example_chain();
  auto s = place(g, {"l1", "l2", "l3"}, {});
  auto st = stage_times(g, s, 10.0);
  EXPECT_DOUBLE_EQ(st.t_e, 6.0);
  EXPECT_EQ(st.t_t, 0.0);
  EXPECT_EQ(st.t_c, 0.0);
}

TEST(StageTimes, ChainCutAfterSecondLayer) {
  auto g = example_chain();
  auto s = place(g, {"l1", "l2"}, {{"l2", 4}});
  auto st = stage_times(g, s, 10.0);
  EXPECT_DOUBLE_EQ(st.t_e, 3.0);
  EXPECT_DOUBLE_EQ(st.t_t, 4.0);  // 4e4 bits at 1e7 bit/s
  EXPECT_DOUBLE_EQ(st.t_c, 1.5);
}

TEST(StageTimes, NestedCutAfterEntry) {
  auto g = load_model_file(testsupport::data_path("fig4.model"));
  auto s = place(g, {"v1"}, {{"v1", 8}});
  EXPECT_DOUBLE_EQ(stage_times(g, s, 10.0).t_e, g.layer(g.index_of("v1")).device_time_ms);
  ASSERT_EQ(s.cuts.size(), 1u);
  EXPECT_EQ(s.cuts[0].severed.size(), 2u);  // v1 feeds both branches, sent once
}

TEST(Overlaps, SingleCutChainIsZero) {
  auto g = example_chain();
  auto o = parallel_overlaps(g, place(g, {"l1"}, {{"l1", 8}}), 10.0);
  EXPECT_EQ(o.t_t_parallel, 0.0);
  EXPECT_EQ(o.t_c_parallel, 0.0);
}

TEST(Overlaps, ParallelBranchesOnDeviceAreZero) {
  auto g = load_model_file(testsupport::data_path("fig4.model"));
  auto o = parallel_overlaps(g, place(g, {"v1", "v2", "v3", "v4", "v5", "v6", "v7", "v8", "v9"}, {}), 10.0);
  EXPECT_EQ(o.t_t_parallel, 0.0);
  EXPECT_EQ(o.t_c_parallel, 0.0);
}

TEST(Overlaps, NestedCuts) {
  // Hand-traced earliest-start schedule at 10 Mbps:
  //   device v1 0-2, v2 2-3.5, v3 3.5-5, v5 5-6, v6 6-7
  //   link   v3 5-6.2, v5 6.2-10.2, v6 10.2-12
  //   cloud  v4 6.2-8.2, v7 10.2-12.2, v8 12.2-13.7, v9 13.7-15.2
  auto g = load_model_file(testsupport::data_path("fig4.model"));
  auto s = place(g, {"v1", "v2", "v3", "v5", "v6"}, {{"v3", 3}, {"v5", 8}, {"v6", 6}});
  auto sch = earliest_start_schedule(g, s, 10.0);
  auto v4 = sch.layer[g.index_of("v4")];
  EXPECT_NEAR(v4.start, 6.2, 1e-12);
  EXPECT_NEAR(v4.finish, 8.2, 1e-12);
  auto o = parallel_overlaps(g, s, 10.0);
  EXPECT_NEAR(o.t_t_parallel, 2.0, 1e-12);
  EXPECT_NEAR(o.t_c_parallel, 3.8, 1e-12);
  EXPECT_GE(o.t_c_parallel, g.layer(g.index_of("v4")).cloud_time_ms);
  auto m = evaluate_strategy(g, s, 10.0, {});
  EXPECT_TRUE(m.feasible());
  EXPECT_NEAR(m.t_t_ms, 7.0, 1e-12);
  EXPECT_NEAR(m.objective, 7.0, 1e-12);
  EXPECT_NEAR(m.task_latency_ms, 15.2, 1e-12);
}

TEST(Bubbles, Examples) {
  auto b = bubble_functions({3, 1, 3, 0, 0});
  EXPECT_EQ(b.b_c, 0.0);
  b = bubble_functions({2, 4, 2, 1, 0});
  EXPECT_DOUBLE_EQ(b.b_t, 1.0);
  b = bubble_functions({3, 2, 3, 0, 0});
  EXPECT_EQ(b.b_c, 0.0);
  EXPECT_DOUBLE_EQ(b.b_t, 1.0);
}

TEST(Evaluate, Infeasibilities) {
  auto g = example_chain();
  OptimizerConfig cfg;
  auto m = evaluate_strategy(g, place(g, {"l1", "l2"}, {{"l2", 2}}), 10.0, cfg);
  EXPECT_EQ(m.infeasible, Infeasibility::accuracy);

  cfg.t_max_ms = 5.0;
  m = evaluate_strategy(g, place(g, {"l1", "l2"}, {{"l2", 4}}), 10.0, cfg);
  EXPECT_EQ(m.infeasible, Infeasibility::latency_budget);  // 3 + 4 + 1.5 = 8.5
}

TEST(Evaluate, FullDeviceIsTwiceDeviceTime) {
  auto g = example_chain();
  auto m = evaluate_strategy(g, place(g, {"l1", "l2", "l3"}, {}), 10.0, {});
  EXPECT_DOUBLE_EQ(m.objective, 2 * 6.0);
  EXPECT_EQ(m.b_t, 0.0);
}

TEST(Evaluate, InvariantsHoldOnRandomPlans) {
  Rng rng(31);
  OptimizerConfig cfg;
  for (int i = 0; i < 300; ++i) {
    auto g = testsupport::random_sp_graph(rng, static_cast<std::size_t>(rng.integer(1, 12)));
    std::vector<std::vector<char>> all;
    detail::for_each_placement(g, [&](const std::vector<char>& p) { all.push_back(p); });
    const auto& p = all[static_cast<std::size_t>(rng.integer(0, static_cast<long long>(all.size()) - 1))];
    auto s = make_strategy(g, p, [&](LayerIndex) { return static_cast<int>(rng.integer(2, 16)); });
    validate_strategy(g, s);
    auto m = evaluate_strategy(g, s, rng.uniform(1, 50), cfg);
    EXPECT_NEAR(m.objective, m.b_c + m.b_t + m.max_stage_ms, 1e-12);
    EXPECT_GE(m.b_c, 0.0);
    EXPECT_GE(m.b_t, 0.0);
    EXPECT_GE(m.t_t_parallel_ms, 0.0);
    EXPECT_GE(m.t_c_parallel_ms, 0.0);
    if (m.feasible()) {
      EXPECT_LE(m.t_t_parallel_ms + m.t_c_parallel_ms, m.max_stage_ms * (1 + 1e-12));
    }
  }
}

TEST(Strategy, ValidationRejectsCloudToDevice) {
  auto g = example_chain();
  PartitionStrategy s = place(g, {"l1"}, {{"l1", 8}});
  s.on_device = {0, 1, 0};
  EXPECT_THROW(validate_strategy(g, s), Error);
}

TEST(Strategy, JsonRoundTrip) {
  auto g = load_model_file(testsupport::data_path("fig4.model"));
  auto s = place(g, {"v1", "v2", "v3", "v5", "v6"}, {{"v3", 3}, {"v5", 8}, {"v6", 6}});
  EXPECT_EQ(strategy_from_json(g, to_json(g, s)), s);
  auto cloud = place(g, {}, {});
  ASSERT_EQ(cloud.cuts.size(), 1u);
  EXPECT_EQ(cloud.cuts[0].producer, kRawInput);
  EXPECT_EQ(strategy_from_json(g, to_json(g, cloud)), cloud);
}

TEST(Strategy, JsonMissingPrecisionIsInputError) {
  auto g = example_chain();
  nlohmann::json doc = {{"device_layers", {"l1"}}, {"cuts", nlohmann::json::array()}};
  EXPECT_THROW(strategy_from_json(g, doc), Error);
}

TEST(Optimize, SingleLayerPicksBetterEnd) {
  ModelGraph g("one", {testsupport::make_layer("x", 5.0, 1.0, 10)}, {});
  g.set_input(1000, 8);
  auto r = optimize(g, 10.0, {});
  // full device: 2*5 = 10; full cloud: T_t = 0.8, T_c = 1 -> 1 + 0.2 + 1 = 2.2
  EXPECT_FALSE(r.strategy.full_device());
  EXPECT_NEAR(r.metrics.objective, 2.2, 1e-12);
  g.set_input(10000000, 8);
  r = optimize(g, 10.0, {});
  EXPECT_TRUE(r.strategy.full_device());
}

TEST(Optimize, Chain4MatchesBruteForce) {
  auto g = load_model_file(testsupport::data_path("chain4.model"));
  for (double bw : {1.0, 5.0, 10.0, 50.0, 200.0}) {
    auto a = optimize(g, bw, {});
    auto b = brute_force_optimize(g, bw, {});
    EXPECT_EQ(a.metrics.objective, b.metrics.objective) << bw;
    EXPECT_EQ(a.strategy, b.strategy) << bw;
  }
}

TEST(Optimize, NestedCompositeStrategy) {
  auto g = load_model_file(testsupport::data_path("fig4.model"));
  auto a = optimize(g, 10.0, {});
  auto b = brute_force_optimize(g, 10.0, {});
  EXPECT_EQ(a.metrics.objective, b.metrics.objective);
  // One cut inside the upper branch of b1 and one in each flow of b2.
  std::vector<std::string> producers;
  for (const auto& c : a.strategy.cuts) producers.push_back(g.layer(c.producer).id);
  EXPECT_EQ(producers, (std::vector<std::string>{"v3", "v5", "v6"}));
}

TEST(Optimize, NoFeasiblePlan) {
  auto g = load_model_file(testsupport::data_path("chain4.model"));
  OptimizerConfig cfg;
  cfg.t_max_ms = 1.0;
  try {
    optimize(g, 10.0, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::infeasible);
    EXPECT_NE(std::string(e.what()).find("latency-budget"), std::string::npos);
  }
}

TEST(BruteForce, ChainOfThreeTwoPrecisions) {
  auto g = example_chain();
  OptimizerConfig cfg;
  cfg.precision_domain = {4, 8};
  auto r = brute_force_optimize(g, 10.0, cfg);
  // placements: none, {l1}, {l1,l2}, all -> 1 + 2 + 2 + 1 plans
  EXPECT_EQ(r.stats.enumerated, 6u);
}

TEST(BruteForce, DiamondIncludesBothBranchCut) {
  using testsupport::make_layer;
  ModelGraph g("diamond",
               {make_layer("v1", 1, 1, 10), make_layer("v2", 1, 1, 10), make_layer("v3", 1, 1, 10),
                make_layer("v4", 1, 1, 10)},
               {{0, 1}, {0, 2}, {1, 3}, {2, 3}});
  std::size_t placements = 0;
  bool both_branches = false;
  detail::for_each_placement(g, [&](const std::vector<char>& p) {
    ++placements;
    if (p == std::vector<char>{1, 1, 1, 0}) both_branches = true;
  });
  // Downsets of the diamond order correspond to its antichains:
  // {}, {v1}, {v2}, {v3}, {v2,v3}, {v4}.
  EXPECT_EQ(placements, 6u);
  EXPECT_TRUE(both_branches);
  OptimizerConfig cfg;
  cfg.precision_domain = {4, 8};
  const std::size_t d = 2;
  EXPECT_EQ(brute_force_optimize(g, 10.0, cfg).stats.enumerated, 2 + d + 3 * d * d);
  EXPECT_DOUBLE_EQ(brute_force_plan_count(g, cfg), static_cast<double>(2 + d + 3 * d * d));
}

TEST(BruteForce, SizeGuard) {
  Rng rng(32);
  auto g = testsupport::random_sp_graph(rng, 17);
  EXPECT_THROW(brute_force_optimize(g, 10.0, {}), Error);
}

TEST(BruteForce, ResultIsMinimumOfEnumeration) {
  Rng rng(33);
  OptimizerConfig cfg;
  cfg.precision_domain = {2, 4, 8};
  for (int i = 0; i < 30; ++i) {
    auto g = testsupport::random_sp_graph(rng, static_cast<std::size_t>(rng.integer(1, 8)));
    const double bw = rng.uniform(1, 50);
    std::optional<OptimizeResult> r;
    try {
      r = brute_force_optimize(g, bw, cfg);
    } catch (const Error&) {
    }
    // Independent enumeration, shuffled, reduced with the same total order.
    std::vector<std::pair<PlanMetrics, PartitionStrategy>> feasible;
    detail::for_each_placement(g, [&](const std::vector<char>& p) {
      auto producers = producers_of(g, p);
      std::vector<LayerIndex> free;
      for (auto q : producers)
        if (q != kRawInput) free.push_back(q);
      std::size_t combos = 1;
      for (std::size_t k = 0; k < free.size(); ++k) combos *= 3;
      for (std::size_t c = 0; c < combos; ++c) {
        std::map<LayerIndex, int> bits;
        std::size_t x = c;
        for (auto q : free) bits[q] = cfg.precision_domain[x % 3], x /= 3;
        auto s = make_strategy(g, p, [&](LayerIndex q) { return q == kRawInput ? g.input_bits() : bits.at(q); });
        auto m = evaluate_strategy(g, s, bw, cfg);
        if (m.feasible()) feasible.push_back({m, s});
      }
    });
    ASSERT_EQ(r.has_value(), !feasible.empty());
    if (!r) continue;
    std::shuffle(feasible.begin(), feasible.end(), rng.engine());
    auto best = feasible.front();
    for (const auto& f : feasible) {
      EXPECT_LE(r->metrics.objective, f.first.objective);
      if (plan_less(f.first, f.second, best.first, best.second)) best = f;
    }
    EXPECT_EQ(best.second, r->strategy);
  }
}

TEST(Optimize, MatchesBruteForceOnRandomSeriesParallel) {
  Rng rng(34);
  for (int i = 0; i < 60; ++i) {
    auto g = testsupport::random_sp_graph(rng, static_cast<std::size_t>(rng.integer(1, 10)));
    const double bw = rng.uniform(1, 100);
    std::optional<double> a, b;
    try {
      a = optimize(g, bw, {}).metrics.objective;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::infeasible);
    }
    try {
      b = brute_force_optimize(g, bw, {}).metrics.objective;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::infeasible);
    }
    EXPECT_EQ(a, b) << describe(g, cluster_virtual_blocks(g));
  }
}

TEST(Optimize, ReturnedPlansSatisfyConstraints) {
  Rng rng(35);
  for (int i = 0; i < 60; ++i) {
    auto g = testsupport::random_sp_graph(rng, static_cast<std::size_t>(rng.integer(1, 14)));
    OptimizerConfig cfg;
    cfg.t_max_ms = rng.coin() ? rng.uniform(5, 80) : cfg.t_max_ms;
    try {
      auto r = optimize(g, rng.uniform(1, 100), cfg);
      validate_strategy(g, r.strategy);
      EXPECT_TRUE(r.metrics.feasible());
      EXPECT_LE(r.metrics.t_e_ms + r.metrics.t_t_ms + r.metrics.t_c_ms, cfg.t_max_ms);
      EXPECT_LE(r.metrics.t_t_parallel_ms + r.metrics.t_c_parallel_ms, r.metrics.max_stage_ms * (1 + 1e-12));
      for (const auto& c : r.strategy.cuts) {
        if (c.producer == kRawInput) continue;
        const auto& l = g.layer(c.producer);
        EXPECT_LE(*l.full_accuracy() - *l.accuracy_at(c.bits), cfg.epsilon);
      }
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::infeasible);
    }
  }
}

TEST(Optimize, RaisingBandwidthCanRaiseTheObjective) {
  // Full cloud: B_c = C, B_t = C - T_t once T_t < C, so the objective is
  // 3C - T_t and grows as the link gets faster. Full device costs 20.
  auto g = testsupport::chain({10.0}, {1.0}, {100});
  g.set_input(1000, 8);
  auto slow = optimize(g, 10.0, {}), fast = optimize(g, 100.0, {});
  EXPECT_TRUE(slow.strategy.cuts.front().producer == kRawInput);
  EXPECT_TRUE(fast.strategy.cuts.front().producer == kRawInput);
  EXPECT_NEAR(slow.metrics.objective, 2.2, 1e-12);
  EXPECT_NEAR(fast.metrics.objective, 2.92, 1e-12);
  EXPECT_LT(fast.metrics.max_stage_ms, slow.metrics.max_stage_ms + 1e-12);
}

TEST(Optimize, Deterministic) {
  Rng rng(37);
  for (int i = 0; i < 20; ++i) {
    auto g = testsupport::random_sp_graph(rng, static_cast<std::size_t>(rng.integer(1, 30)));
    try {
      auto a = optimize(g, 10.0, {});
      auto b = optimize(g, 10.0, {});
      EXPECT_EQ(a.strategy, b.strategy);
      EXPECT_EQ(a.stats.evaluations, b.stats.evaluations);
    } catch (const Error&) {
    }
  }
}

TEST(Optimize, RejectsBadInputs) {
  auto g = example_chain();
  EXPECT_THROW(optimize(g, 0.0, {}), Error);
  OptimizerConfig cfg;
  cfg.epsilon = 2.0;
  EXPECT_THROW(optimize(g, 10.0, cfg), Error);
}
