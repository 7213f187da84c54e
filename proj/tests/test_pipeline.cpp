#include <gtest/gtest.h>

#include "support.hpp"

using namespace coach;
using testsupport::Rng;

namespace {

Scenario scheme(int i) { return load_scenario_file(testsupport::data_path("scheme" + std::to_string(i) + ".scenario")); }

}  // namespace

TEST(Trace, TransmissionDurationExamples) {
  auto c10 = BandwidthTrace::constant(10.0);
  EXPECT_EQ(transmission_duration(0.0, 3.0, c10), 0.0);
  EXPECT_DOUBLE_EQ(transmission_duration(1e5, 0.0, c10), 10.0);
  BandwidthTrace step({{0.0, 10.0}, {5.0, 5.0}});
  EXPECT_DOUBLE_EQ(transmission_duration(1e5, 0.0, step), 15.0);
  EXPECT_DOUBLE_EQ(transmission_duration(1e5, 7.0, step), 20.0);
}

TEST(Trace, IntegralMatchesPayload) {
  Rng rng(41);
  for (int i = 0; i < 200; ++i) {
    std::vector<BandwidthSegment> segs{{0.0, rng.uniform(0.5, 50)}};
    for (int k = 0; k < 5; ++k) segs.push_back({segs.back().start_ms + rng.uniform(0.1, 20), rng.uniform(0.5, 50)});
    BandwidthTrace t(segs);
    double start = rng.uniform(0, 80), bits = rng.uniform(0, 1e6);
    double d = transmission_duration(bits, start, t);
    // numeric integral of the trace over [start, start + d]
    double sum = 0.0;
    const int steps = 200000;
    for (int s = 0; s < steps; ++s) {
      double t0 = start + d * (s + 0.5) / steps;
      sum += t.mbps_at(t0) * 1e3 * d / steps;
    }
    EXPECT_NEAR(sum, bits, bits * 1e-3 + 1e-6);
  }
}

TEST(Trace, ParseAndValidate) {
  auto t = parse_trace("# comment\n0 20\n10000 10\n\n20000 5\n");
  ASSERT_EQ(t.segments().size(), 3u);
  EXPECT_EQ(t.mbps_at(15000), 10.0);
  EXPECT_EQ(t.mbps_at(1e9), 5.0);
  EXPECT_EQ(parse_trace(format_trace(t)), t);
  EXPECT_THROW(parse_trace("5 10\n"), Error);
  EXPECT_THROW(parse_trace("0 10\n0 5\n"), Error);
  EXPECT_THROW(parse_trace("0 -1\n"), Error);
  EXPECT_THROW(parse_trace("0 abc\n"), Error);
  EXPECT_THROW(parse_trace(""), Error);
}

TEST(Simulate, Scheme1) {
  auto sc = scheme(1);
  auto r = simulate(sc.model, sc.strategy, sc.stream, sc.trace);
  EXPECT_EQ(r.tasks[0].latency_ms, 6.0);
  EXPECT_EQ(r.max_stage_ms, 4.0);
  for (const auto& t : r.tasks) EXPECT_EQ(t.service_ms(), 6.0);
  auto b = bubble_report(r);
  EXPECT_EQ(b[kTransmission].total_ms, 0.0);
  EXPECT_GT(b[kDevice].total_ms, 0.0);
}

TEST(Simulate, Schemes2And3) {
  auto s2 = scheme(2);
  auto r2 = simulate(s2.model, s2.strategy, s2.stream, s2.trace);
  EXPECT_EQ(r2.tasks[0].latency_ms, 7.0);
  EXPECT_EQ(r2.max_stage_ms, 3.0);
  auto s3 = scheme(3);
  auto r3 = simulate(s3.model, s3.strategy, s3.stream, s3.trace);
  EXPECT_EQ(r3.max_stage_ms, 2.0);
}

TEST(Simulate, FifoRecurrence) {
  Rng rng(42);
  auto g = load_model_file(testsupport::data_path("fig4.model"));
  for (int i = 0; i < 50; ++i) {
    std::vector<std::vector<char>> all;
    detail::for_each_placement(g, [&](const std::vector<char>& p) { all.push_back(p); });
    auto s = make_strategy(g, all[static_cast<std::size_t>(rng.integer(0, static_cast<long long>(all.size()) - 1))],
                           [&](LayerIndex) { return static_cast<int>(rng.integer(2, 16)); });
    TaskStream stream;
    double t = 0.0;
    for (int k = 0; k < 40; ++k) stream.tasks.push_back({t += rng.uniform(0, 10), {}, {}});
    BandwidthTrace trace({{0.0, rng.uniform(1, 50)}, {100.0, rng.uniform(1, 50)}});
    auto r = simulate(g, s, stream, trace);
    std::array<double, 3> free{0, 0, 0};
    for (const auto& rec : r.tasks) {
      double ready = rec.arrival_ms;
      for (std::size_t k = 0; k < 3; ++k) {
        if (!rec.stages[k].used) continue;
        EXPECT_DOUBLE_EQ(rec.stages[k].start_ms, std::max(ready, free[k]));
        ready = rec.stages[k].finish_ms;
        free[k] = ready;
      }
      EXPECT_EQ(rec.completion_ms, ready);
      EXPECT_GE(rec.latency_ms, 0.0);
    }
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(r.stage_busy_ms[k] + r.stage_idle_ms[k], r.makespan_ms, 1e-9);
    EXPECT_NEAR(r.throughput_it_per_s, 40.0 / r.makespan_ms * 1e3, 1e-9);
  }
}

TEST(Simulate, SteadyStateMatchesMaxStage) {
  Rng rng(43);
  auto g = load_model_file(testsupport::data_path("fig4.model"));
  std::vector<std::vector<char>> all;
  detail::for_each_placement(g, [&](const std::vector<char>& p) { all.push_back(p); });
  for (int i = 0; i < 20; ++i) {
    auto s = make_strategy(g, all[static_cast<std::size_t>(rng.integer(0, static_cast<long long>(all.size()) - 1))],
                           [&](LayerIndex) { return static_cast<int>(rng.integer(2, 16)); });
    const double bw = rng.uniform(1, 50);
    auto st = stage_times(g, s, bw);
    auto r = simulate(g, s, TaskStream::fixed_interval(0.0, 500), BandwidthTrace::constant(bw));
    double period = 1e3 / r.steady_throughput_it_per_s;
    EXPECT_NEAR(period, std::max({st.t_e, st.t_t, st.t_c}), 1e-6 * period);
  }
}

TEST(Simulate, LittlesLaw) {
  // For a stable constant-rate stream, time-averaged occupancy equals
  // arrival rate times mean latency over the same window.
  auto sc = scheme(3);
  auto stream = TaskStream::fixed_interval(2.5, 400);
  auto r = simulate(sc.model, sc.strategy, stream, sc.trace);
  const double span = r.makespan_ms;
  std::vector<std::pair<double, int>> events;
  for (const auto& t : r.tasks) events.push_back({t.arrival_ms, +1}), events.push_back({t.completion_ms, -1});
  std::sort(events.begin(), events.end());
  double area = 0.0, last = events.front().first;
  int inflight = 0;
  for (auto [time, d] : events) {
    area += inflight * (time - last);
    last = time;
    inflight += d;
  }
  const double occupancy = area / span;
  const double rate = static_cast<double>(r.tasks.size()) / span;
  EXPECT_NEAR(occupancy, rate * r.mean_latency_ms, 0.05 * occupancy);
}

TEST(Simulate, EarlyExitSkipsLaterStages) {
  auto sc = load_scenario_file(testsupport::data_path("scheme4.scenario"));
  auto run = run_scenario(sc);
  EXPECT_GT(run.report.exited, 0u);
  for (const auto& t : run.report.tasks) {
    if (!t.exited_early) continue;
    EXPECT_FALSE(t.stages[kTransmission].used);
    EXPECT_FALSE(t.stages[kCloud].used);
    EXPECT_EQ(t.payload_bits, 0.0);
  }
}

TEST(Simulate, DecisionCostExtendsDeviceStage) {
  auto sc = load_scenario_file(testsupport::data_path("scheme4.scenario"));
  sc.online_cfg.decision_cost_ms = 0.25;
  auto run = run_scenario(sc);
  for (const auto& t : run.report.tasks) EXPECT_DOUBLE_EQ(t.stages[kDevice].duration(), 1.25);
}

TEST(Simulate, DeterministicOutput) {
  auto sc = scheme(1);
  auto a = simulate(sc.model, sc.strategy, sc.stream, sc.trace);
  auto b = simulate(sc.model, sc.strategy, sc.stream, sc.trace);
  EXPECT_EQ(format_task_table(a), format_task_table(b));
  EXPECT_EQ(format_summary(a), format_summary(b));
}

TEST(BubbleReport, SaturatedAndSingleTask) {
  auto sc = scheme(1);
  auto sat = simulate(sc.model, sc.strategy, TaskStream::fixed_interval(0.0, 10), sc.trace);
  EXPECT_EQ(bubble_report(sat)[kTransmission].total_ms, 0.0);
  auto one = simulate(sc.model, sc.strategy, TaskStream::fixed_interval(2.0, 1), sc.trace);
  for (const auto& b : bubble_report(one)) EXPECT_EQ(b.total_ms, 0.0);
}

TEST(Simulate, RejectsBadStreams) {
  auto sc = scheme(1);
  TaskStream empty;
  EXPECT_THROW(simulate(sc.model, sc.strategy, empty, sc.trace), Error);
  TaskStream backwards;
  backwards.tasks = {{5.0, {}, {}}, {1.0, {}, {}}};
  EXPECT_THROW(simulate(sc.model, sc.strategy, backwards, sc.trace), Error);
}
