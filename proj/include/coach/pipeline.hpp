#ifndef COACH_PIPELINE_HPP
#define COACH_PIPELINE_HPP

// Three-stage pipeline simulator: device compute, transmission over a
// piecewise-constant bandwidth trace, cloud compute. Each stage is a FIFO
// resource serving one task at a time.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "coach/error.hpp"
#include "coach/graph.hpp"
#include "coach/offline.hpp"
#include "coach/quant.hpp"

namespace coach {

// ---------------------------------------------------------------------------
// Bandwidth traces

struct BandwidthSegment {
  double start_ms = 0.0;
  double mbps = 0.0;

  bool operator==(const BandwidthSegment&) const = default;
};

class BandwidthTrace {
 public:
  BandwidthTrace() : BandwidthTrace(std::vector<BandwidthSegment>{{0.0, 1.0}}) {}

  explicit BandwidthTrace(std::vector<BandwidthSegment> segments) : segments_(std::move(segments)) {
    if (segments_.empty()) input_error("bandwidth trace is empty");
    if (segments_.front().start_ms != 0.0) input_error("bandwidth trace must start at time 0");
    for (std::size_t i = 0; i < segments_.size(); ++i) {
      if (!(segments_[i].mbps > 0.0) || !std::isfinite(segments_[i].mbps))
        input_error("bandwidth trace rates must be positive");
      if (i && !(segments_[i].start_ms > segments_[i - 1].start_ms))
        input_error("bandwidth trace times must be strictly increasing");
    }
  }

  static BandwidthTrace constant(double mbps) { return BandwidthTrace({{0.0, mbps}}); }

  const std::vector<BandwidthSegment>& segments() const noexcept { return segments_; }

  std::size_t segment_at(double t_ms) const {
    auto it = std::upper_bound(segments_.begin(), segments_.end(), t_ms,
                               [](double t, const BandwidthSegment& s) { return t < s.start_ms; });
    return it == segments_.begin() ? 0 : static_cast<std::size_t>(it - segments_.begin()) - 1;
  }

  double mbps_at(double t_ms) const { return segments_[segment_at(t_ms)].mbps; }

  bool operator==(const BandwidthTrace&) const = default;

 private:
  std::vector<BandwidthSegment> segments_;
};

/// Parses `time_ms mbps` lines; blank lines and `#` comments are ignored.
inline BandwidthTrace parse_trace(std::string_view text) {
  std::vector<BandwidthSegment> segs;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    BandwidthSegment s;
    if (!(ls >> s.start_ms)) {
      std::string rest;
      if (std::istringstream(line) >> rest) input_error("trace line " + std::to_string(lineno) + ": expected time_ms mbps");
      continue;
    }
    std::string extra;
    if (!(ls >> s.mbps) || (ls >> extra)) input_error("trace line " + std::to_string(lineno) + ": expected time_ms mbps");
    segs.push_back(s);
  }
  return BandwidthTrace(std::move(segs));
}

inline BandwidthTrace load_trace_file(const std::string& path) { return parse_trace(read_text_file(path)); }

inline std::string format_trace(const BandwidthTrace& trace) {
  std::string out;
  char buf[96];
  for (const auto& s : trace.segments()) {
    std::snprintf(buf, sizeof buf, "%.6f %.6f\n", s.start_ms, s.mbps);
    out += buf;
  }
  return out;
}

/// Smallest d with the integral of bandwidth over [start, start + d] equal to
/// `payload_bits`, solved segment by segment.
inline double transmission_duration(double payload_bits, double start_ms, const BandwidthTrace& trace) {
  if (payload_bits < 0.0) input_error("payload must be nonnegative");
  if (payload_bits == 0.0) return 0.0;
  const auto& segs = trace.segments();
  double remaining = payload_bits;
  double t = start_ms;
  for (std::size_t i = trace.segment_at(start_ms);; ++i) {
    const double rate = segs[i].mbps * 1e3;  // bits per ms
    const double end = i + 1 < segs.size() ? segs[i + 1].start_ms : std::numeric_limits<double>::infinity();
    const double capacity = (end - t) * rate;
    if (remaining <= capacity) return t + remaining / rate - start_ms;
    remaining -= capacity;
    t = end;
  }
}

// ---------------------------------------------------------------------------
// Task streams

struct StreamTask {
  double arrival_ms = 0.0;
  std::optional<std::size_t> feature;  ///< index into the scenario's feature set
  std::optional<int> true_label;
};

struct TaskStream {
  std::vector<StreamTask> tasks;

  static TaskStream fixed_interval(double interval_ms, std::size_t count) {
    if (!(interval_ms >= 0.0)) input_error("arrival interval must be nonnegative");
    TaskStream s;
    for (std::size_t i = 0; i < count; ++i) s.tasks.push_back({interval_ms * static_cast<double>(i), {}, {}});
    return s;
  }

  void validate() const {
    if (tasks.empty()) input_error("task stream is empty");
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (!(tasks[i].arrival_ms >= 0.0)) input_error("arrival times must be nonnegative");
      if (i && tasks[i].arrival_ms < tasks[i - 1].arrival_ms) input_error("arrival times must be nondecreasing");
    }
  }
};

/// Per-task online choice, made when the device stage finishes computing.
struct TaskPlan {
  bool exited = false;
  std::optional<int> bits;  ///< uniform precision for every cut; strategy precisions when empty
  std::optional<int> result_label;
  double decision_cost_ms = 0.0;
};

/// Receives tasks in arrival order; may keep state across calls.
class TaskDecider {
 public:
  virtual ~TaskDecider() = default;
  virtual TaskPlan plan_task(std::size_t task_index, const StreamTask& task, double now_ms, double bandwidth_mbps) = 0;
};

// ---------------------------------------------------------------------------
// Simulation

enum Stage : std::size_t { kDevice = 0, kTransmission = 1, kCloud = 2 };
inline constexpr std::array<const char*, 3> kStageNames{"device", "transmission", "cloud"};

struct StageSpan {
  bool used = false;
  double start_ms = 0.0;
  double finish_ms = 0.0;

  double duration() const noexcept { return used ? finish_ms - start_ms : 0.0; }
};

struct TaskRecord {
  std::size_t index = 0;
  double arrival_ms = 0.0;
  std::array<StageSpan, 3> stages{};
  double completion_ms = 0.0;
  double latency_ms = 0.0;
  bool exited_early = false;
  int bits = 0;  ///< precision used on the link; 0 when nothing was sent
  double payload_bits = 0.0;
  std::optional<int> result_label;
  std::optional<int> true_label;

  /// Time the task spends inside stages, excluding queueing.
  double service_ms() const noexcept {
    return stages[0].duration() + stages[1].duration() + stages[2].duration();
  }
};

struct SimReport {
  std::vector<TaskRecord> tasks;
  double makespan_ms = 0.0;
  double throughput_it_per_s = 0.0;         ///< completed / makespan
  double steady_throughput_it_per_s = 0.0;  ///< excluding the first 10% of completions
  double mean_latency_ms = 0.0;
  double max_stage_ms = 0.0;  ///< longest single stage occupancy
  std::array<double, 3> stage_busy_ms{};
  std::array<double, 3> stage_idle_ms{};
  std::size_t exited = 0;
  double mean_payload_bits = 0.0;
};

/// Throughput from the completions inside [from_ms, to_ms), measured between
/// the first and last of them. Zero when fewer than two complete there.
inline double window_throughput(const SimReport& r, double from_ms, double to_ms) {
  std::vector<double> c;
  for (const auto& t : r.tasks)
    if (t.completion_ms >= from_ms && t.completion_ms < to_ms) c.push_back(t.completion_ms);
  std::sort(c.begin(), c.end());
  if (c.size() < 2 || c.back() <= c.front()) return 0.0;
  return static_cast<double>(c.size() - 1) / (c.back() - c.front()) * 1e3;
}

namespace detail {

inline double steady_throughput(std::vector<double> completions, double fallback) {
  std::sort(completions.begin(), completions.end());
  const std::size_t n = completions.size();
  const std::size_t warm = n / 10;
  if (n < 2 || warm + 1 >= n) return fallback;
  const double span = completions.back() - completions[warm];
  if (!(span > 0.0)) return fallback;
  return static_cast<double>(n - 1 - warm) / span * 1e3;
}

}  // namespace detail

/// Runs the stream through the pipeline. Stage k of task n starts at
/// max(finish of its stage k-1, finish of stage k for the previous task).
/// Empty stages (no payload, no cloud layers, early exit) are skipped.
inline SimReport simulate(const ModelGraph& g, const PartitionStrategy& s, const TaskStream& stream,
                          const BandwidthTrace& trace, TaskDecider* online = nullptr) {
  validate_strategy(g, s);
  stream.validate();
  const StageTimes st = stage_times(g, s, 1.0);  // only the compute terms are used here
  std::uint64_t cut_elements_total = 0;
  double strategy_payload = 0.0;
  int strategy_bits = 0;
  for (const auto& c : s.cuts) {
    cut_elements_total += cut_elements(g, c);
    strategy_payload += payload_bits(cut_elements(g, c), c.bits);
    strategy_bits = std::max(strategy_bits, c.bits);
  }

  SimReport r;
  r.tasks.reserve(stream.tasks.size());
  std::array<double, 3> free_at{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < stream.tasks.size(); ++i) {
    const auto& task = stream.tasks[i];
    TaskRecord rec;
    rec.index = i;
    rec.arrival_ms = task.arrival_ms;
    rec.true_label = task.true_label;
    double ready = task.arrival_ms;

    double device_start = std::max(ready, free_at[kDevice]);
    double device_done = device_start + st.t_e;
    TaskPlan plan;
    if (online) plan = online->plan_task(i, task, device_done, trace.mbps_at(device_done));
    device_done += plan.decision_cost_ms;
    if (device_done > device_start) {
      rec.stages[kDevice] = {true, device_start, device_done};
      free_at[kDevice] = device_done;
      ready = device_done;
    }
    rec.exited_early = plan.exited;
    rec.result_label = plan.result_label;

    if (!plan.exited) {
      double payload = strategy_payload;
      rec.bits = strategy_bits;
      if (plan.bits) {
        payload = payload_bits(cut_elements_total, *plan.bits);
        rec.bits = *plan.bits;
      }
      if (payload > 0.0) {
        double start = std::max(ready, free_at[kTransmission]);
        double finish = start + transmission_duration(payload, start, trace);
        rec.stages[kTransmission] = {true, start, finish};
        free_at[kTransmission] = finish;
        ready = finish;
        rec.payload_bits = payload;
      } else {
        rec.bits = 0;
      }
      if (st.t_c > 0.0) {
        double start = std::max(ready, free_at[kCloud]);
        rec.stages[kCloud] = {true, start, start + st.t_c};
        free_at[kCloud] = start + st.t_c;
        ready = start + st.t_c;
      }
    }
    rec.completion_ms = ready;
    rec.latency_ms = rec.completion_ms - rec.arrival_ms;
    ensure(rec.latency_ms >= 0.0, "negative task latency");
    r.tasks.push_back(rec);
  }

  double first_arrival = std::numeric_limits<double>::infinity(), last_completion = 0.0, latency_sum = 0.0,
         payload_sum = 0.0;
  std::vector<double> completions;
  for (const auto& t : r.tasks) {
    first_arrival = std::min(first_arrival, t.arrival_ms);
    last_completion = std::max(last_completion, t.completion_ms);
    latency_sum += t.latency_ms;
    payload_sum += t.payload_bits;
    completions.push_back(t.completion_ms);
    if (t.exited_early) ++r.exited;
    for (std::size_t k = 0; k < 3; ++k) {
      r.stage_busy_ms[k] += t.stages[k].duration();
      r.max_stage_ms = std::max(r.max_stage_ms, t.stages[k].duration());
    }
  }
  const double n = static_cast<double>(r.tasks.size());
  r.makespan_ms = last_completion - first_arrival;
  for (std::size_t k = 0; k < 3; ++k) r.stage_idle_ms[k] = std::max(0.0, r.makespan_ms - r.stage_busy_ms[k]);
  r.throughput_it_per_s = r.makespan_ms > 0.0 ? n / r.makespan_ms * 1e3 : 0.0;
  r.steady_throughput_it_per_s = detail::steady_throughput(std::move(completions), r.throughput_it_per_s);
  r.mean_latency_ms = latency_sum / n;
  r.mean_payload_bits = payload_sum / n;
  return r;
}

// ---------------------------------------------------------------------------
// Bubble report

struct StageBubbles {
  std::vector<double> gaps;  ///< idle gaps between consecutive occupancies
  double total_ms = 0.0;
  std::map<int, std::size_t> histogram;  ///< k -> gaps in [2^k, 2^(k+1)) ms
};

/// Idle gaps between consecutive occupancies of each stage.
inline std::array<StageBubbles, 3> bubble_report(const SimReport& r) {
  std::array<StageBubbles, 3> out;
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<StageSpan> spans;
    for (const auto& t : r.tasks)
      if (t.stages[k].used) spans.push_back(t.stages[k]);
    std::sort(spans.begin(), spans.end(), [](const StageSpan& a, const StageSpan& b) { return a.start_ms < b.start_ms; });
    for (std::size_t i = 1; i < spans.size(); ++i) {
      double gap = spans[i].start_ms - spans[i - 1].finish_ms;
      if (gap <= 0.0) continue;
      out[k].gaps.push_back(gap);
      out[k].total_ms += gap;
      out[k].histogram[static_cast<int>(std::floor(std::log2(gap)))]++;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text output

namespace detail {

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v == 0.0 ? 0.0 : v);  // no "-0.000000"
  return buf;
}

}  // namespace detail

/// One row per task, tab separated; unused stages print "-".
inline std::string format_task_table(const SimReport& r) {
  std::string out =
      "task\tarrival_ms\tdevice_start\tdevice_finish\ttransmission_start\ttransmission_finish\tcloud_start\t"
      "cloud_finish\tcompletion_ms\tlatency_ms\texited\tbits\tpayload_bits\tresult_label\ttrue_label\n";
  for (const auto& t : r.tasks) {
    out += std::to_string(t.index) + '\t' + detail::fixed6(t.arrival_ms);
    for (const auto& sp : t.stages) {
      if (sp.used)
        out += '\t' + detail::fixed6(sp.start_ms) + '\t' + detail::fixed6(sp.finish_ms);
      else
        out += "\t-\t-";
    }
    out += '\t' + detail::fixed6(t.completion_ms) + '\t' + detail::fixed6(t.latency_ms);
    out += t.exited_early ? "\t1" : "\t0";
    out += '\t' + std::to_string(t.bits) + '\t' + detail::fixed6(t.payload_bits);
    out += '\t' + (t.result_label ? std::to_string(*t.result_label) : std::string("-"));
    out += '\t' + (t.true_label ? std::to_string(*t.true_label) : std::string("-"));
    out += '\n';
  }
  return out;
}

/// `key value` lines in a fixed order.
inline std::string format_summary(const SimReport& r) {
  std::string out;
  auto line = [&](const std::string& k, const std::string& v) { out += k + ' ' + v + '\n'; };
  line("tasks", std::to_string(r.tasks.size()));
  line("exited_early", std::to_string(r.exited));
  line("makespan_ms", detail::fixed6(r.makespan_ms));
  line("throughput_it_per_s", detail::fixed6(r.throughput_it_per_s));
  line("steady_throughput_it_per_s", detail::fixed6(r.steady_throughput_it_per_s));
  line("mean_latency_ms", detail::fixed6(r.mean_latency_ms));
  line("first_task_latency_ms", detail::fixed6(r.tasks.front().latency_ms));
  line("max_stage_ms", detail::fixed6(r.max_stage_ms));
  line("mean_payload_bits", detail::fixed6(r.mean_payload_bits));
  for (std::size_t k = 0; k < 3; ++k) {
    line(std::string(kStageNames[k]) + "_busy_ms", detail::fixed6(r.stage_busy_ms[k]));
    line(std::string(kStageNames[k]) + "_idle_ms", detail::fixed6(r.stage_idle_ms[k]));
  }
  return out;
}

inline std::string format_bubbles(const std::array<StageBubbles, 3>& b) {
  std::string out;
  for (std::size_t k = 0; k < 3; ++k) {
    out += std::string(kStageNames[k]) + " gaps " + std::to_string(b[k].gaps.size()) + " total_ms " +
           detail::fixed6(b[k].total_ms) + '\n';
    for (const auto& [bin, count] : b[k].histogram) {
      out += "  [" + detail::fixed6(std::ldexp(1.0, bin)) + ", " + detail::fixed6(std::ldexp(1.0, bin + 1)) +
             ") " + std::to_string(count) + '\n';
    }
  }
  return out;
}

}  // namespace coach

#endif  // COACH_PIPELINE_HPP
