#ifndef COACH_OFFLINE_HPP
#define COACH_OFFLINE_HPP

// Offline partitioning and quantization: stage times, layer-parallel overlaps,
// pipeline bubble functions, and the strategy search over chain flows.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coach/error.hpp"
#include "coach/graph.hpp"
#include "coach/quant.hpp"

namespace coach {

/// Producer index of the raw model input (uploaded by full-cloud plans).
inline constexpr LayerIndex kRawInput = std::numeric_limits<LayerIndex>::max();
inline constexpr const char* kRawInputId = "@input";

/// Everything one transmitted tensor needs: its producer, the graph edges it
/// feeds, and the precision it is quantized at.
struct Cut {
  LayerIndex producer = 0;
  std::vector<Edge> severed;
  int bits = 8;

  bool operator==(const Cut&) const = default;
};

struct PartitionStrategy {
  std::vector<char> on_device;  ///< per layer, 1 = end device
  std::vector<Cut> cuts;        ///< by producer topological position; raw input first

  std::vector<LayerIndex> device_layers() const {
    std::vector<LayerIndex> out;
    for (LayerIndex i = 0; i < on_device.size(); ++i)
      if (on_device[i]) out.push_back(i);
    return out;
  }
  std::vector<LayerIndex> cloud_layers() const {
    std::vector<LayerIndex> out;
    for (LayerIndex i = 0; i < on_device.size(); ++i)
      if (!on_device[i]) out.push_back(i);
    return out;
  }
  std::size_t cut_edge_count() const {
    std::size_t n = 0;
    for (const auto& c : cuts) n += c.severed.size();
    return n;
  }
  int total_bits() const {
    int n = 0;
    for (const auto& c : cuts) n += c.bits;
    return n;
  }
  bool full_device() const {
    return std::all_of(on_device.begin(), on_device.end(), [](char d) { return d != 0; });
  }

  bool operator==(const PartitionStrategy&) const = default;
};

/// Output elements carried by a cut.
inline std::uint64_t cut_elements(const ModelGraph& g, const Cut& c) {
  return c.producer == kRawInput ? g.input_elements() : g.layer(c.producer).output_elements;
}

/// Device layers feeding at least one cloud layer, in topological order. A plan
/// with no device layers uploads the raw input instead.
inline std::vector<LayerIndex> producers_of(const ModelGraph& g, const std::vector<char>& on_device) {
  std::vector<LayerIndex> out;
  bool any_device = false;
  for (LayerIndex v : g.topo_order()) {
    if (!on_device[v]) continue;
    any_device = true;
    for (LayerIndex s : g.succs(v)) {
      if (!on_device[s]) {
        out.push_back(v);
        break;
      }
    }
  }
  if (!any_device) out.push_back(kRawInput);
  return out;
}

/// Builds a strategy from a placement and a precision per producer.
template <typename BitsFn>
PartitionStrategy make_strategy(const ModelGraph& g, std::vector<char> on_device, BitsFn&& bits_for) {
  if (on_device.size() != g.size()) input_error("placement size does not match the model");
  PartitionStrategy s;
  for (LayerIndex p : producers_of(g, on_device)) {
    Cut c;
    c.producer = p;
    if (p == kRawInput) {
      c.severed.push_back({kRawInput, g.entry()});
    } else {
      for (LayerIndex t : g.succs(p))
        if (!on_device[t]) c.severed.push_back({p, t});
      std::sort(c.severed.begin(), c.severed.end());
    }
    c.bits = bits_for(p);
    s.cuts.push_back(std::move(c));
  }
  s.on_device = std::move(on_device);
  return s;
}

/// Throws Error(input) unless `s` is a consistent placement for `g`.
inline void validate_strategy(const ModelGraph& g, const PartitionStrategy& s) {
  if (s.on_device.size() != g.size()) input_error("strategy does not match the model's layer count");
  for (const auto& e : g.edges())
    if (!s.on_device[e.from] && s.on_device[e.to])
      input_error("strategy sends data from cloud layer '" + g.layer(e.from).id + "' back to device layer '" +
                  g.layer(e.to).id + "'");
  auto expected = make_strategy(g, s.on_device, [](LayerIndex) { return 0; });
  if (expected.cuts.size() != s.cuts.size()) input_error("strategy cut set does not match its placement");
  for (std::size_t i = 0; i < s.cuts.size(); ++i) {
    if (expected.cuts[i].producer != s.cuts[i].producer || expected.cuts[i].severed != s.cuts[i].severed)
      input_error("strategy cut set does not match its placement");
    if (s.cuts[i].bits < 1 || s.cuts[i].bits > 32) input_error("cut precision out of range");
  }
}

// ---------------------------------------------------------------------------
// Stage times, overlaps, bubbles

struct StageTimes {
  double t_e = 0.0;  ///< device computation
  double t_t = 0.0;  ///< quantized transmission
  double t_c = 0.0;  ///< cloud computation
};

inline StageTimes stage_times(const ModelGraph& g, const PartitionStrategy& s, double bandwidth_mbps) {
  StageTimes st;
  for (LayerIndex v = 0; v < g.size(); ++v) {
    if (s.on_device[v])
      st.t_e += g.layer(v).device_time_ms;
    else
      st.t_c += g.layer(v).cloud_time_ms;
  }
  for (const auto& c : s.cuts) st.t_t += transfer_ms(payload_bits(cut_elements(g, c), c.bits), bandwidth_mbps);
  return st;
}

struct Interval {
  double start = 0.0;
  double finish = 0.0;
};

/// Earliest-start schedule of a single task over three unit-capacity
/// resources: device layers run back to back in topological order, transfers
/// queue on the link by readiness, cloud layers start once every input is
/// present.
struct TaskSchedule {
  std::vector<Interval> layer;     ///< per layer, on whichever side runs it
  std::vector<Interval> transfer;  ///< per cut, same order as strategy.cuts
  double makespan = 0.0;
};

inline TaskSchedule earliest_start_schedule(const ModelGraph& g, const PartitionStrategy& s, double bandwidth_mbps) {
  const std::size_t n = g.size();
  TaskSchedule sch;
  sch.layer.assign(n, {});
  sch.transfer.assign(s.cuts.size(), {});

  double device_free = 0.0;
  for (LayerIndex v : g.topo_order()) {
    if (!s.on_device[v]) continue;
    sch.layer[v] = {device_free, device_free + g.layer(v).device_time_ms};
    device_free = sch.layer[v].finish;
  }

  std::vector<std::size_t> order(s.cuts.size());
  std::vector<double> ready(s.cuts.size());
  for (std::size_t i = 0; i < s.cuts.size(); ++i) {
    order[i] = i;
    ready[i] = s.cuts[i].producer == kRawInput ? 0.0 : sch.layer[s.cuts[i].producer].finish;
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ready[a] < ready[b]; });
  double link_free = 0.0;
  std::vector<double> arrival(n, 0.0);  // when a device layer's output reaches the cloud
  double raw_arrival = 0.0;
  for (std::size_t i : order) {
    const auto& c = s.cuts[i];
    double start = std::max(ready[i], link_free);
    double finish = start + transfer_ms(payload_bits(cut_elements(g, c), c.bits), bandwidth_mbps);
    sch.transfer[i] = {start, finish};
    link_free = finish;
    if (c.producer == kRawInput)
      raw_arrival = finish;
    else
      arrival[c.producer] = finish;
  }

  // List scheduling of the cloud side: among layers whose cloud inputs are
  // done, run the one ready earliest (ties by topological position).
  std::vector<LayerIndex> pending;
  for (LayerIndex v : g.topo_order())
    if (!s.on_device[v]) pending.push_back(v);
  std::vector<char> done(n, 0);
  double cloud_free = 0.0;
  while (!pending.empty()) {
    std::size_t best = pending.size();
    double best_ready = 0.0;
    for (std::size_t k = 0; k < pending.size(); ++k) {
      LayerIndex v = pending[k];
      bool runnable = true;
      double r = v == g.entry() ? raw_arrival : 0.0;
      for (LayerIndex u : g.preds(v)) {
        if (s.on_device[u]) {
          r = std::max(r, arrival[u]);
        } else if (!done[u]) {
          runnable = false;
          break;
        } else {
          r = std::max(r, sch.layer[u].finish);
        }
      }
      if (runnable && (best == pending.size() || r < best_ready)) best = k, best_ready = r;
    }
    ensure(best < pending.size(), "cloud schedule stalled");
    LayerIndex v = pending[best];
    double start = std::max(best_ready, cloud_free);
    sch.layer[v] = {start, start + g.layer(v).cloud_time_ms};
    cloud_free = sch.layer[v].finish;
    done[v] = 1;
    pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(best));
  }

  for (const auto& iv : sch.layer) sch.makespan = std::max(sch.makespan, iv.finish);
  for (const auto& iv : sch.transfer) sch.makespan = std::max(sch.makespan, iv.finish);
  return sch;
}

struct Overlaps {
  double t_t_parallel = 0.0;  ///< transmission running while the device still computes
  double t_c_parallel = 0.0;  ///< cloud computation running before the last transfer lands
};

inline double overlap_length(const Interval& iv, double lo, double hi) {
  return std::max(0.0, std::min(iv.finish, hi) - std::max(iv.start, lo));
}

inline Overlaps overlaps_from(const ModelGraph& g, const PartitionStrategy& s, const TaskSchedule& sch, double t_e) {
  Overlaps o;
  double last_transfer = 0.0;
  for (const auto& iv : sch.transfer) {
    o.t_t_parallel += overlap_length(iv, 0.0, t_e);
    last_transfer = std::max(last_transfer, iv.finish);
  }
  for (LayerIndex v = 0; v < g.size(); ++v)
    if (!s.on_device[v]) o.t_c_parallel += overlap_length(sch.layer[v], 0.0, last_transfer);
  return o;
}

inline Overlaps parallel_overlaps(const ModelGraph& g, const PartitionStrategy& s, double bandwidth_mbps) {
  auto sch = earliest_start_schedule(g, s, bandwidth_mbps);
  return overlaps_from(g, s, sch, stage_times(g, s, bandwidth_mbps).t_e);
}

struct StageBundle {
  double t_e = 0.0, t_t = 0.0, t_c = 0.0;
  double t_t_parallel = 0.0, t_c_parallel = 0.0;
};

struct Bubbles {
  double b_c = 0.0;  ///< computation bubble
  double b_t = 0.0;  ///< transmission bubble
};

inline Bubbles bubble_functions(const StageBundle& m) {
  Bubbles b;
  b.b_c = std::abs(m.t_e - m.t_c);
  b.b_t = std::abs(m.t_t - std::max({m.t_e, m.t_t - m.t_t_parallel, m.t_c - m.t_c_parallel}));
  return b;
}

enum class Infeasibility { none, accuracy, latency_budget, overlap_bound };

inline const char* to_string(Infeasibility r) {
  switch (r) {
    case Infeasibility::none: return "feasible";
    case Infeasibility::accuracy: return "accuracy";
    case Infeasibility::latency_budget: return "latency-budget";
    case Infeasibility::overlap_bound: return "overlap-bound";
  }
  return "?";
}

struct PlanMetrics {
  double t_e_ms = 0.0;
  double t_t_ms = 0.0;
  double t_c_ms = 0.0;
  double t_t_parallel_ms = 0.0;
  double t_c_parallel_ms = 0.0;
  double b_c = 0.0;
  double b_t = 0.0;
  double objective = 0.0;
  double max_stage_ms = 0.0;
  double task_latency_ms = 0.0;  ///< makespan of the single-task schedule
  Infeasibility infeasible = Infeasibility::none;

  bool feasible() const noexcept { return infeasible == Infeasibility::none; }
};

/// Stage times, overlaps, bubbles and the objective B_c + B_t + max stage,
/// with feasibility against the accuracy limit, latency budget and overlap bound.
inline PlanMetrics evaluate_strategy(const ModelGraph& g, const PartitionStrategy& s, double bandwidth_mbps,
                                     const OptimizerConfig& cfg) {
  PlanMetrics m;
  const auto st = stage_times(g, s, bandwidth_mbps);
  const auto sch = earliest_start_schedule(g, s, bandwidth_mbps);
  const auto ov = overlaps_from(g, s, sch, st.t_e);
  m.t_e_ms = st.t_e;
  m.t_t_ms = st.t_t;
  m.t_c_ms = st.t_c;
  m.t_t_parallel_ms = ov.t_t_parallel;
  m.t_c_parallel_ms = ov.t_c_parallel;
  m.max_stage_ms = std::max({st.t_e, st.t_t, st.t_c});
  m.task_latency_ms = sch.makespan;
  auto b = bubble_functions({st.t_e, st.t_t, st.t_c, ov.t_t_parallel, ov.t_c_parallel});
  m.b_c = b.b_c;
  // Without any payload there is no transmission stage to idle.
  m.b_t = st.t_t > 0.0 ? b.b_t : 0.0;
  m.objective = m.b_c + m.b_t + m.max_stage_ms;

  for (const auto& c : s.cuts) {
    if (c.producer == kRawInput) continue;
    const auto& layer = g.layer(c.producer);
    auto full = layer.full_accuracy();
    if (!full || !meets_accuracy(layer.accuracy_table, *full, c.bits, cfg.epsilon)) {
      m.infeasible = Infeasibility::accuracy;
      return m;
    }
  }
  if (st.t_e + st.t_t + st.t_c > cfg.t_max_ms) {
    m.infeasible = Infeasibility::latency_budget;
    return m;
  }
  if (ov.t_t_parallel + ov.t_c_parallel > m.max_stage_ms * (1.0 + 1e-12)) m.infeasible = Infeasibility::overlap_bound;
  return m;
}

// ---------------------------------------------------------------------------
// Search

/// Total order used to pick among plans: objective, max stage, severed
/// edges, total bits, then placement and precisions.
inline bool plan_less(const PlanMetrics& a, const PartitionStrategy& sa, const PlanMetrics& b,
                      const PartitionStrategy& sb) {
  if (a.objective != b.objective) return a.objective < b.objective;
  if (a.max_stage_ms != b.max_stage_ms) return a.max_stage_ms < b.max_stage_ms;
  if (sa.cut_edge_count() != sb.cut_edge_count()) return sa.cut_edge_count() < sb.cut_edge_count();
  if (sa.total_bits() != sb.total_bits()) return sa.total_bits() < sb.total_bits();
  if (sa.on_device != sb.on_device) return sa.on_device < sb.on_device;
  std::vector<int> ba, bb;
  for (const auto& c : sa.cuts) ba.push_back(c.bits);
  for (const auto& c : sb.cuts) bb.push_back(c.bits);
  return ba < bb;
}

struct SearchStats {
  std::size_t evaluations = 0;        ///< evaluate_strategy calls
  std::size_t sweep_evaluations = 0;  ///< of which in the chain-flow sweep
  std::size_t search_nodes = 0;       ///< partial assignments visited by the bounded search
  std::size_t flows = 0;              ///< chain flows placed in the search space
  std::size_t enumerated = 0;         ///< brute force: placements x precision assignments
};

struct OptimizeResult {
  PartitionStrategy strategy;
  PlanMetrics metrics;
  SearchStats stats;
};

namespace detail {

/// Lower bound on the objective when the stage times are only known to lie in
/// intervals. `transmits` is false only for plans with no payload at all.
inline double objective_lower_bound(double e_lo, double e_hi, double c_lo, double c_hi, double t_lo, double t_hi,
                                    bool transmits) {
  double gap = std::max({0.0, e_lo - c_hi, c_lo - e_hi});
  double bt = transmits ? std::max(0.0, e_lo - t_hi) : 0.0;
  return std::max({e_lo, c_lo, t_lo}) + gap + bt;
}

class Searcher {
 public:
  Searcher(const ModelGraph& g, double bandwidth_mbps, const OptimizerConfig& cfg)
      : g_(g), bw_(bandwidth_mbps), cfg_(cfg), n_(g.size()) {
    feasible_.resize(n_);
    for (LayerIndex v = 0; v < n_; ++v) {
      feasible_[v] = feasible_precisions(g.layer(v), cfg);
      auto full = g.layer(v).full_accuracy();
      if (full) {
        try {
          min_bits_.push_back(min_precision(g.layer(v).accuracy_table, *full, cfg));
        } catch (const Error&) {
          min_bits_.push_back(0);
        }
      } else {
        min_bits_.push_back(0);
      }
      ensure(feasible_[v].empty() == (min_bits_[v] == 0) && (feasible_[v].empty() || feasible_[v][0] == min_bits_[v]),
             "bisection and scan disagree on the minimum precision");
    }
    ancestors_.assign(n_, std::vector<char>(n_, 0));
    descendants_.assign(n_, std::vector<char>(n_, 0));
    for (LayerIndex v : g.topo_order())
      for (LayerIndex u : g.preds(v)) {
        ancestors_[v][u] = 1;
        for (LayerIndex w = 0; w < n_; ++w)
          if (ancestors_[u][w]) ancestors_[v][w] = 1;
      }
    for (LayerIndex v = 0; v < n_; ++v)
      for (LayerIndex u = 0; u < n_; ++u)
        if (ancestors_[v][u]) descendants_[u][v] = 1;
  }

  SearchStats& stats() { return stats_; }

  bool has_incumbent() const { return best_.has_value(); }
  const OptimizeResult& incumbent() const { return *best_; }

  /// Evaluates one complete plan and keeps it if it is the best feasible so far.
  void consider(const std::vector<char>& on_device, const std::map<LayerIndex, int>& bits, bool in_sweep) {
    auto s = make_strategy(g_, on_device, [&](LayerIndex p) {
      if (p == kRawInput) return g_.input_bits();
      return bits.at(p);
    });
    auto m = evaluate_strategy(g_, s, bw_, cfg_);
    ++stats_.evaluations;
    if (in_sweep) ++stats_.sweep_evaluations;
    if (!m.feasible()) return;
    if (!best_ || plan_less(m, s, best_->metrics, best_->strategy)) best_ = OptimizeResult{std::move(s), m, {}};
  }

  // -- chain-flow sweep -----------------------------------------------------

  struct FlowTask {
    const ChainFlow* flow;
    std::optional<LayerIndex> fork;
    std::optional<LayerIndex> join;
  };

  /// Walks the search space of chain flows: every boundary of every flow is
  /// assessed with minimum precisions in the context of the current best
  /// plan, and suitable virtual blocks contribute their internal flows.
  void sweep(const ChainFlow& top) {
    std::deque<FlowTask> space{{&top, std::nullopt, std::nullopt}};
    while (!space.empty()) {
      FlowTask task = space.front();
      space.pop_front();
      ++stats_.flows;
      const auto& flow = *task.flow;
      for (std::size_t k = 0; k <= flow.size(); ++k) {
        auto placement = context_placement(task, k);
        if (!placement) continue;
        std::map<LayerIndex, int> bits;
        bool ok = true;
        for (LayerIndex p : producers_of(g_, *placement)) {
          if (p == kRawInput) continue;
          if (min_bits_[p] == 0) {
            ok = false;
            break;
          }
          bits[p] = min_bits_[p];
        }
        if (ok) consider(*placement, bits, true);
      }
      for (const auto& el : flow.elements) {
        if (!el.is_block() || !suitable(*el.block)) continue;
        for (const auto& inner : el.block->internal_flows) space.push_back({&inner, el.block->entry, el.block->exit});
      }
    }
  }

  // -- exact bounded search -------------------------------------------------

  /// Depth-first search over every placement the chain-flow structure admits
  /// (prefix of each flow on device, at most one split block per flow,
  /// recursively) and every feasible precision per producer. Subtrees whose
  /// lower bound exceeds the incumbent are skipped.
  void exhaust(const ChainFlow& top) {
    state_.assign(n_, -1);
    e_sure_ = c_sure_ = 0.0;
    pending_e_ = pending_c_ = 0.0;
    pending_.clear();
    splits_.clear();
    push_pending(&top);
    descend();
  }

 private:
  double tolerance() const { return best_ ? 1e-9 * std::max(1.0, std::abs(best_->metrics.objective)) : 0.0; }

  bool prune(double lower_bound, double latency_floor) const {
    if (latency_floor > cfg_.t_max_ms) return true;
    return best_ && lower_bound > best_->metrics.objective + tolerance();
  }

  bool suitable(const VirtualBlock& b) const {
    if (b.opaque || b.internal_flows.empty()) return false;
    if (b.entry && min_bits_[*b.entry] != 0) return true;
    return std::any_of(b.members.begin(), b.members.end(), [&](LayerIndex v) { return min_bits_[v] != 0; });
  }

  std::optional<std::vector<char>> context_placement(const FlowTask& task, std::size_t k) const {
    std::vector<char> place(n_, 0);
    if (best_) place = best_->strategy.on_device;
    if (task.fork) {
      place[*task.fork] = 1;
      for (LayerIndex u = 0; u < n_; ++u)
        if (ancestors_[*task.fork][u]) place[u] = 1;
    }
    if (task.join) {
      place[*task.join] = 0;
      for (LayerIndex u = 0; u < n_; ++u)
        if (descendants_[*task.join][u]) place[u] = 0;
    }
    const auto& flow = *task.flow;
    for (std::size_t i = 0; i < flow.size(); ++i)
      for (LayerIndex v : element_layers(flow.elements[i])) place[v] = i < k ? 1 : 0;
    for (const auto& e : g_.edges())
      if (!place[e.from] && place[e.to]) return std::nullopt;
    return place;
  }

  struct Pending {
    const ChainFlow* flow;
    double e_max;
    double c_max;
  };

  void push_pending(const ChainFlow* f) {
    double e = 0.0, c = 0.0;
    for (LayerIndex v : flatten(*f)) e += g_.layer(v).device_time_ms, c += g_.layer(v).cloud_time_ms;
    pending_.push_back({f, e, c});
    pending_e_ += e;
    pending_c_ += c;
  }

  void pop_pending() {
    pending_e_ -= pending_.back().e_max;
    pending_c_ -= pending_.back().c_max;
    pending_.pop_back();
  }

  void assign(LayerIndex v, int side) {
    state_[v] = side;
    if (side)
      e_sure_ += g_.layer(v).device_time_ms;
    else
      c_sure_ += g_.layer(v).cloud_time_ms;
  }
  void unassign(LayerIndex v) {
    if (state_[v])
      e_sure_ -= g_.layer(v).device_time_ms;
    else
      c_sure_ -= g_.layer(v).cloud_time_ms;
    state_[v] = -1;
  }

  bool structural_prune() const {
    double e_lo = e_sure_, e_hi = e_sure_ + pending_e_;
    double c_lo = c_sure_, c_hi = c_sure_ + pending_c_;
    return prune(objective_lower_bound(e_lo, e_hi, c_lo, c_hi, 0.0, std::numeric_limits<double>::infinity(), false),
                 e_lo + c_lo);
  }

  void descend() {
    ++stats_.search_nodes;
    if (structural_prune()) return;
    if (pending_.empty()) {
      leaf();
      return;
    }
    Pending top = pending_.back();
    pop_pending();
    const auto& flow = *top.flow;

    // Prefix [0,k) on device, the rest in the cloud.
    for (std::size_t k = 0; k <= flow.size(); ++k) {
      std::vector<LayerIndex> touched;
      for (std::size_t i = 0; i < flow.size(); ++i)
        for (LayerIndex v : element_layers(flow.elements[i])) assign(v, i < k ? 1 : 0), touched.push_back(v);
      descend();
      for (LayerIndex v : touched) unassign(v);
    }

    // Prefix [0,k) on device, block k split, the rest in the cloud.
    for (std::size_t k = 0; k < flow.size(); ++k) {
      const auto& el = flow.elements[k];
      if (!el.is_block() || !suitable(*el.block)) continue;
      std::vector<LayerIndex> touched;
      for (std::size_t i = 0; i < flow.size(); ++i) {
        if (i == k) continue;
        for (LayerIndex v : element_layers(flow.elements[i])) assign(v, i < k ? 1 : 0), touched.push_back(v);
      }
      splits_.push_back(el.block.get());
      const std::size_t depth = pending_.size();
      for (auto it = el.block->internal_flows.rbegin(); it != el.block->internal_flows.rend(); ++it)
        push_pending(&*it);
      descend();
      while (pending_.size() > depth) pop_pending();
      splits_.pop_back();
      for (LayerIndex v : touched) unassign(v);
    }

    pending_.push_back(top);
    pending_e_ += top.e_max;
    pending_c_ += top.c_max;
  }

  void leaf() {
    // A split block placed entirely on one side duplicates a prefix placement.
    for (const VirtualBlock* b : splits_) {
      bool all_dev = true, all_cloud = true;
      for (LayerIndex v : b->members) (state_[v] ? all_cloud : all_dev) = false;
      if (all_dev || all_cloud) return;
    }
    std::vector<char> place(n_);
    for (LayerIndex v = 0; v < n_; ++v) place[v] = static_cast<char>(state_[v] == 1);
    leaf_producers_ = producers_of(g_, place);
    leaf_place_ = std::move(place);

    double t_fixed = 0.0;
    leaf_free_.clear();
    for (LayerIndex p : leaf_producers_) {
      if (p == kRawInput) {
        t_fixed += transfer_ms(payload_bits(g_.input_elements(), g_.input_bits()), bw_);
        continue;
      }
      if (feasible_[p].empty()) return;
      leaf_free_.push_back(p);
    }
    suffix_lo_.assign(leaf_free_.size() + 1, 0.0);
    suffix_hi_.assign(leaf_free_.size() + 1, 0.0);
    for (std::size_t i = leaf_free_.size(); i-- > 0;) {
      LayerIndex p = leaf_free_[i];
      auto elems = g_.layer(p).output_elements;
      suffix_lo_[i] = suffix_lo_[i + 1] + transfer_ms(payload_bits(elems, feasible_[p].front()), bw_);
      suffix_hi_[i] = suffix_hi_[i + 1] + transfer_ms(payload_bits(elems, feasible_[p].back()), bw_);
    }
    leaf_bits_.clear();
    assign_bits(0, t_fixed);
  }

  void assign_bits(std::size_t i, double t_so_far) {
    ++stats_.search_nodes;
    const double t_lo = t_so_far + suffix_lo_[i];
    const double t_hi = t_so_far + suffix_hi_[i];
    const bool transmits = t_hi > 0.0;
    if (prune(objective_lower_bound(e_sure_, e_sure_, c_sure_, c_sure_, t_lo, t_hi, transmits),
              e_sure_ + c_sure_ + t_lo))
      return;
    if (i == leaf_free_.size()) {
      consider(leaf_place_, leaf_bits_, false);
      return;
    }
    LayerIndex p = leaf_free_[i];
    for (int b : feasible_[p]) {
      leaf_bits_[p] = b;
      assign_bits(i + 1, t_so_far + transfer_ms(payload_bits(g_.layer(p).output_elements, b), bw_));
    }
    leaf_bits_.erase(p);
  }

  const ModelGraph& g_;
  double bw_;
  const OptimizerConfig& cfg_;
  std::size_t n_;
  std::vector<std::vector<int>> feasible_;
  std::vector<int> min_bits_;  ///< 0 when no precision meets the accuracy limit
  std::vector<std::vector<char>> ancestors_, descendants_;
  std::optional<OptimizeResult> best_;
  SearchStats stats_;

  std::vector<int> state_;
  double e_sure_ = 0.0, c_sure_ = 0.0, pending_e_ = 0.0, pending_c_ = 0.0;
  std::vector<Pending> pending_;
  std::vector<const VirtualBlock*> splits_;
  std::vector<char> leaf_place_;
  std::vector<LayerIndex> leaf_producers_, leaf_free_;
  std::vector<double> suffix_lo_, suffix_hi_;
  std::map<LayerIndex, int> leaf_bits_;
};

}  // namespace detail

/// Recursive divide-and-conquer search for the plan minimizing
/// B_c + B_t + max{T_e, T_t, T_c} subject to the accuracy limit, the latency
/// budget and the overlap bound. Throws Error(infeasible) when nothing fits.
inline OptimizeResult optimize(const ModelGraph& g, double bandwidth_mbps, const OptimizerConfig& cfg) {
  cfg.validate();
  if (!(bandwidth_mbps > 0.0)) input_error("bandwidth must be positive");
  const ChainFlow top = cluster_virtual_blocks(g);
  detail::Searcher search(g, bandwidth_mbps, cfg);
  search.sweep(top);
  search.exhaust(top);
  if (!search.has_incumbent()) {
    std::string reason = "accuracy";
    if (std::isfinite(cfg.t_max_ms)) {
      OptimizerConfig relaxed = cfg;
      relaxed.t_max_ms = std::numeric_limits<double>::infinity();
      detail::Searcher probe(g, bandwidth_mbps, relaxed);
      probe.sweep(top);
      probe.exhaust(top);
      if (probe.has_incumbent()) reason = "latency-budget";
    }
    infeasible_error("infeasible(" + reason + "): no feasible partitioning strategy for model '" + g.name() + "'");
  }
  OptimizeResult out = search.incumbent();
  out.stats = search.stats();
  ensure(out.metrics.feasible(), "optimizer returned an infeasible plan");
  return out;
}

inline constexpr std::size_t kBruteForceMaxLayers = 16;

namespace detail {

/// Calls `visit` with every placement closed under predecessors.
template <typename Visit>
void for_each_placement(const ModelGraph& g, Visit&& visit) {
  const auto& order = g.topo_order();
  std::vector<char> place(g.size(), 0);
  std::function<void(std::size_t)> rec = [&](std::size_t i) {
    if (i == order.size()) {
      visit(place);
      return;
    }
    LayerIndex v = order[i];
    place[v] = 0;
    rec(i + 1);
    const auto& p = g.preds(v);
    if (std::all_of(p.begin(), p.end(), [&](LayerIndex u) { return place[u] != 0; })) {
      place[v] = 1;
      rec(i + 1);
      place[v] = 0;
    }
  };
  rec(0);
}

}  // namespace detail

/// Exhaustive oracle: every valid device/cloud bipartition times every
/// precision assignment from the domain.
inline OptimizeResult brute_force_optimize(const ModelGraph& g, double bandwidth_mbps, const OptimizerConfig& cfg) {
  cfg.validate();
  if (!(bandwidth_mbps > 0.0)) input_error("bandwidth must be positive");
  if (g.size() > kBruteForceMaxLayers)
    input_error("brute force is limited to " + std::to_string(kBruteForceMaxLayers) + " layers");
  std::optional<OptimizeResult> best;
  SearchStats stats;
  detail::for_each_placement(g, [&](const std::vector<char>& place) {
    auto producers = producers_of(g, place);
    std::vector<LayerIndex> free;
    for (LayerIndex p : producers)
      if (p != kRawInput) free.push_back(p);
    std::vector<std::size_t> digit(free.size(), 0);
    const auto& domain = cfg.precision_domain;
    while (true) {
      ++stats.enumerated;
      std::map<LayerIndex, int> bits;
      for (std::size_t i = 0; i < free.size(); ++i) bits[free[i]] = domain[digit[i]];
      auto s = make_strategy(g, place, [&](LayerIndex p) { return p == kRawInput ? g.input_bits() : bits.at(p); });
      auto m = evaluate_strategy(g, s, bandwidth_mbps, cfg);
      ++stats.evaluations;
      if (m.feasible() && (!best || plan_less(m, s, best->metrics, best->strategy)))
        best = OptimizeResult{std::move(s), m, {}};
      std::size_t i = 0;
      while (i < digit.size() && ++digit[i] == domain.size()) digit[i++] = 0;
      if (i == digit.size()) break;
    }
  });
  if (!best) infeasible_error("no feasible partitioning strategy for model '" + g.name() + "'");
  best->stats = stats;
  return *best;
}

/// Number of plans brute force enumerates: placements x |domain|^producers.
/// Counts without evaluating, so it also works beyond the brute-force size guard.
inline double brute_force_plan_count(const ModelGraph& g, const OptimizerConfig& cfg) {
  double total = 0.0;
  const double d = static_cast<double>(cfg.precision_domain.size());
  detail::for_each_placement(g, [&](const std::vector<char>& place) {
    double combos = 1.0;
    for (LayerIndex p : producers_of(g, place))
      if (p != kRawInput) combos *= d;
    total += combos;
  });
  return total;
}

// ---------------------------------------------------------------------------
// Strategy documents

inline nlohmann::json to_json(const ModelGraph& g, const PartitionStrategy& s) {
  nlohmann::json doc;
  doc["model"] = g.name();
  auto ids = [&](const std::vector<LayerIndex>& v) {
    auto arr = nlohmann::json::array();
    for (LayerIndex i : v) arr.push_back(g.layer(i).id);
    return arr;
  };
  doc["device_layers"] = ids(s.device_layers());
  doc["cloud_layers"] = ids(s.cloud_layers());
  auto& cuts = doc["cuts"] = nlohmann::json::array();
  for (const auto& c : s.cuts) {
    nlohmann::json rec;
    std::string from = c.producer == kRawInput ? kRawInputId : g.layer(c.producer).id;
    rec["layer"] = from;
    rec["bits"] = c.bits;
    auto& edges = rec["edges"] = nlohmann::json::array();
    for (const auto& e : c.severed) edges.push_back({from, g.layer(e.to).id});
    cuts.push_back(std::move(rec));
  }
  return doc;
}

inline PartitionStrategy strategy_from_json(const ModelGraph& g, const nlohmann::json& doc) {
  try {
    std::vector<char> place(g.size(), 0);
    for (const auto& id : doc.at("device_layers")) place[g.index_of(id.get<std::string>())] = 1;
    if (doc.contains("cloud_layers")) {
      for (const auto& id : doc.at("cloud_layers")) {
        if (place[g.index_of(id.get<std::string>())]) input_error("layer '" + id.get<std::string>() + "' is on both sides");
      }
      if (doc.at("device_layers").size() + doc.at("cloud_layers").size() != g.size())
        input_error("strategy does not place every layer");
    }
    std::map<LayerIndex, int> bits;
    for (const auto& rec : doc.at("cuts")) {
      auto id = rec.at("layer").get<std::string>();
      LayerIndex p = id == kRawInputId ? kRawInput : g.index_of(id);
      bits[p] = rec.at("bits").get<int>();
    }
    auto s = make_strategy(g, std::move(place), [&](LayerIndex p) {
      if (p == kRawInput && !bits.count(p)) return g.input_bits();
      auto it = bits.find(p);
      if (it == bits.end()) input_error("strategy has no precision for cut layer '" + g.layer(p).id + "'");
      return it->second;
    });
    if (s.cuts.size() != bits.size() && !(bits.empty() && s.cuts.size() == 1 && s.cuts[0].producer == kRawInput))
      input_error("strategy lists cuts that its placement does not produce");
    validate_strategy(g, s);
    return s;
  } catch (const nlohmann::json::exception& e) {
    input_error(std::string("strategy document: ") + e.what());
  }
}

inline PartitionStrategy load_strategy(const ModelGraph& g, std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    input_error(std::string("strategy parse error: ") + e.what());
  }
  return strategy_from_json(g, doc);
}

inline nlohmann::json to_json(const PlanMetrics& m) {
  return {{"t_e_ms", m.t_e_ms},
          {"t_t_ms", m.t_t_ms},
          {"t_c_ms", m.t_c_ms},
          {"t_t_parallel_ms", m.t_t_parallel_ms},
          {"t_c_parallel_ms", m.t_c_parallel_ms},
          {"b_c", m.b_c},
          {"b_t", m.b_t},
          {"objective", m.objective},
          {"max_stage_ms", m.max_stage_ms},
          {"task_latency_ms", m.task_latency_ms},
          {"status", to_string(m.infeasible)}};
}

}  // namespace coach

#endif  // COACH_OFFLINE_HPP
