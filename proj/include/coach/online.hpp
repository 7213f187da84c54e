#ifndef COACH_ONLINE_HPP
#define COACH_ONLINE_HPP

// Online half: pooled task features, per-label semantic centers, task
// separability, threshold calibration, early exit and precision adjustment.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coach/error.hpp"
#include "coach/features.hpp"
#include "coach/pipeline.hpp"
#include "coach/quant.hpp"

namespace coach {

struct TaskFeature {
  std::vector<double> vector;
  std::size_t channels = 0, height = 0, width = 0;
};

/// Global average pooling of a C x H x W tensor stored channel-major.
inline TaskFeature gap(std::span<const double> tensor, std::size_t c, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) input_error("pooling needs nonempty spatial dimensions");
  if (c == 0) input_error("pooling needs at least one channel");
  if (tensor.size() != c * h * w) input_error("tensor size does not match its dimensions");
  TaskFeature f{std::vector<double>(c, 0.0), c, h, w};
  const std::size_t plane = h * w;
  for (std::size_t k = 0; k < c; ++k) {
    double sum = 0.0;
    for (std::size_t i = 0; i < plane; ++i) sum += tensor[k * plane + i];
    f.vector[k] = sum / static_cast<double>(plane);
  }
  return f;
}

inline TaskFeature gap(const FeatureSample& s) { return gap(s.values, s.channels, s.height, s.width); }

class SemanticCache {
 public:
  SemanticCache(std::size_t labels, std::size_t dim)
      : centers_(labels, std::vector<double>(dim, 0.0)), counts_(labels, 0), dim_(dim) {
    if (labels < 2) input_error("semantic cache needs at least two labels");
    if (dim == 0) input_error("semantic cache needs a nonzero feature length");
  }

  std::size_t labels() const noexcept { return centers_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<double>& center(std::size_t j) const { return centers_.at(j); }
  std::size_t count(std::size_t j) const { return counts_.at(j); }

  /// Running mean: T_j <- (m_j T_j + F) / (m_j + 1).
  void update_center(int label, std::span<const double> feature) {
    if (label < 0 || static_cast<std::size_t>(label) >= centers_.size())
      input_error("unknown label " + std::to_string(label));
    if (feature.size() != dim_) input_error("feature length does not match the cache");
    auto& c = centers_[static_cast<std::size_t>(label)];
    auto& m = counts_[static_cast<std::size_t>(label)];
    const double md = static_cast<double>(m);
    for (std::size_t i = 0; i < dim_; ++i) c[i] = (md * c[i] + feature[i]) / (md + 1.0);
    ++m;
  }

  void warm(const FeatureSet& set) {
    for (const auto& s : set.samples) update_center(s.label, gap(s).vector);
  }

 private:
  std::vector<std::vector<double>> centers_;
  std::vector<std::size_t> counts_;
  std::size_t dim_;
};

struct TaskAssessment {
  std::vector<double> similarities;
  double t_high = 0.0;
  double t_second = 0.0;
  double separability = 0.0;
  int argmax_label = 0;
};

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// Cosine similarity to every center (clamped to [0,1]) and the separability
/// S = |T| (t_H - t_SH) t_H / t_SH. Ties in the argmax go to the lower label.
inline TaskAssessment assess(const SemanticCache& cache, std::span<const double> feature) {
  if (feature.size() != cache.dim()) input_error("feature length does not match the cache");
  const double fn = norm2(feature);
  if (!(fn > 0.0)) input_error("cannot assess a zero feature");
  TaskAssessment a;
  a.similarities.resize(cache.labels());
  for (std::size_t j = 0; j < cache.labels(); ++j) {
    if (cache.count(j) == 0) input_error("label " + std::to_string(j) + " has no semantic center yet");
    const auto& c = cache.center(j);
    const double cn = norm2(c);
    if (!(cn > 0.0)) input_error("label " + std::to_string(j) + " has a zero semantic center");
    double dot = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) dot += feature[i] * c[i];
    a.similarities[j] = std::clamp(dot / (fn * cn), 0.0, 1.0);
  }
  std::size_t hi = 0;
  for (std::size_t j = 1; j < a.similarities.size(); ++j)
    if (a.similarities[j] > a.similarities[hi]) hi = j;
  double second = -1.0;
  for (std::size_t j = 0; j < a.similarities.size(); ++j)
    if (j != hi) second = std::max(second, a.similarities[j]);
  a.argmax_label = static_cast<int>(hi);
  a.t_high = a.similarities[hi];
  a.t_second = second;
  if (a.t_high == a.t_second) {
    a.separability = 0.0;
  } else if (a.t_second == 0.0) {
    a.separability = std::numeric_limits<double>::infinity();
  } else {
    a.separability = norm2(a.similarities) * (a.t_high - a.t_second) * a.t_high / a.t_second;
  }
  return a;
}

// ---------------------------------------------------------------------------
// Thresholds

struct Thresholds {
  double s_ext = std::numeric_limits<double>::infinity();
  std::map<int, double> s_adj;  ///< precision -> minimum separability

  bool operator==(const Thresholds&) const = default;
};

struct CalibrationConfig {
  double epsilon = 0.005;  ///< tolerated argmax error rate
  std::vector<int> precision_domain = default_precision_domain();
  std::optional<std::pair<double, double>> range;  ///< quantization range; observed data when empty
};

namespace detail {

/// Smallest candidate threshold c from {0} and the observed values such that
/// the samples admitted by c are nonempty and err at rate <= epsilon.
/// Admission is S > c when `strict`, else S >= c. +inf when none works.
inline double sweep_threshold(std::vector<std::pair<double, bool>> samples, double epsilon, bool strict) {
  // samples: (separability, wrong)
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  std::vector<std::size_t> wrong_from(n + 1, 0);  // errors among samples[i..n)
  for (std::size_t i = n; i-- > 0;) wrong_from[i] = wrong_from[i + 1] + (samples[i].second ? 1 : 0);
  std::vector<double> candidates{0.0};
  for (const auto& s : samples)
    if (std::isfinite(s.first)) candidates.push_back(s.first);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  for (double c : candidates) {
    auto it = strict ? std::upper_bound(samples.begin(), samples.end(), c,
                                        [](double v, const std::pair<double, bool>& s) { return v < s.first; })
                     : std::lower_bound(samples.begin(), samples.end(), c,
                                        [](const std::pair<double, bool>& s, double v) { return s.first < v; });
    const auto first = static_cast<std::size_t>(it - samples.begin());
    const std::size_t admitted = n - first;
    if (admitted == 0) break;
    if (static_cast<double>(wrong_from[first]) <= epsilon * static_cast<double>(admitted)) return c;
  }
  return std::numeric_limits<double>::infinity();
}

}  // namespace detail

inline std::pair<double, double> observed_range(const FeatureSet& d) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : d.samples)
    for (double v : s.values) lo = std::min(lo, v), hi = std::max(hi, v);
  if (!(lo < hi)) hi = lo + 1.0;
  return {lo, hi};
}

/// Thresholds from a calibration set. `cache` is expected to be warmed on `d`.
/// s_ext admits S > s_ext; s_adj[p] admits S >= s_adj[p] on features
/// round-tripped through p-bit quantization. s_adj is made nonincreasing in p.
inline Thresholds calibrate(const SemanticCache& cache, const FeatureSet& d, const CalibrationConfig& cfg) {
  if (d.samples.empty()) input_error("calibration set is empty");
  if (!(cfg.epsilon >= 0.0 && cfg.epsilon <= 1.0)) input_error("epsilon must be in [0,1]");
  Thresholds th;
  std::vector<std::pair<double, bool>> plain;
  for (const auto& s : d.samples) {
    auto a = assess(cache, gap(s).vector);
    plain.push_back({a.separability, a.argmax_label != s.label});
  }
  th.s_ext = detail::sweep_threshold(plain, cfg.epsilon, true);

  const auto [lo, hi] = cfg.range ? *cfg.range : observed_range(d);
  for (int p : cfg.precision_domain) {
    QuantSpec spec(p, lo, hi);
    std::vector<std::pair<double, bool>> q;
    for (const auto& s : d.samples) {
      auto rt = round_trip(s.values, spec);
      auto a = assess(cache, gap(rt, s.channels, s.height, s.width).vector);
      q.push_back({a.separability, a.argmax_label != s.label});
    }
    th.s_adj[p] = detail::sweep_threshold(std::move(q), cfg.epsilon, false);
  }
  double floor = -std::numeric_limits<double>::infinity();
  for (auto it = th.s_adj.rbegin(); it != th.s_adj.rend(); ++it) floor = it->second = std::max(it->second, floor);
  return th;
}

inline nlohmann::json to_json(const Thresholds& th) {
  auto num = [](double v) -> nlohmann::json {
    if (std::isinf(v)) return "inf";
    return v;
  };
  nlohmann::json doc;
  doc["s_ext"] = num(th.s_ext);
  auto& adj = doc["s_adj"] = nlohmann::json::object();
  for (const auto& [p, v] : th.s_adj) adj[std::to_string(p)] = num(v);
  return doc;
}

inline Thresholds thresholds_from_json(const nlohmann::json& doc) {
  auto num = [](const nlohmann::json& v) {
    if (v.is_string()) {
      if (v.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
      input_error("threshold must be a number or \"inf\"");
    }
    return v.get<double>();
  };
  try {
    Thresholds th;
    th.s_ext = num(doc.at("s_ext"));
    for (const auto& [k, v] : doc.at("s_adj").items()) th.s_adj[std::stoi(k)] = num(v);
    return th;
  } catch (const nlohmann::json::exception& e) {
    input_error(std::string("thresholds document: ") + e.what());
  } catch (const std::logic_error&) {
    input_error("thresholds document: precision keys must be integers");
  }
}

// ---------------------------------------------------------------------------
// Decision

struct QuantDecision {
  int q_required = 0;
  int q_chosen = 0;
  double t_t_prime_ms = 0.0;
  bool exited = false;
  std::optional<int> result_label;
  TaskAssessment assessment;
};

/// |T_t'(q) - max{T_e, T_t'(q), T_c}| for a uniform precision q.
inline double adjustment_objective(double t_e, double t_c, double t_t_prime) {
  return std::abs(t_t_prime - std::max({t_e, t_t_prime, t_c}));
}

inline double t_t_prime_ms(std::uint64_t payload_elements, int bits, double bandwidth_mbps) {
  return transfer_ms(payload_bits(payload_elements, bits), bandwidth_mbps);
}

/// Precision choice for a task that does not exit: the smallest domain
/// precision >= q_required minimizing the adjustment objective.
inline int choose_precision(int q_required, double t_e, double t_c, std::uint64_t payload_elements,
                            double bandwidth_mbps, const std::vector<int>& domain) {
  std::optional<int> best;
  double best_obj = 0.0;
  for (int q : domain) {
    if (q < q_required) continue;
    double obj = adjustment_objective(t_e, t_c, t_t_prime_ms(payload_elements, q, bandwidth_mbps));
    if (!best || obj < best_obj) best = q, best_obj = obj;
  }
  return best ? *best : q_required;
}

/// Early exit when S > s_ext (updating the predicted label's center);
/// otherwise Q_r from s_adj with fallback `base_bits`, then Q_c.
inline QuantDecision decide(SemanticCache& cache, const Thresholds& th, std::span<const double> feature, int base_bits,
                            double t_e, double t_c, std::uint64_t payload_elements, double bandwidth_mbps,
                            const std::vector<int>& domain) {
  if (!(bandwidth_mbps > 0.0)) input_error("bandwidth must be positive");
  QuantDecision d;
  d.assessment = assess(cache, feature);
  const double s = d.assessment.separability;
  if (s > th.s_ext) {
    d.exited = true;
    d.result_label = d.assessment.argmax_label;
    cache.update_center(d.assessment.argmax_label, feature);
    return d;
  }
  d.q_required = base_bits;
  for (const auto& [p, threshold] : th.s_adj) {
    if (s >= threshold) {
      d.q_required = p;
      break;
    }
  }
  d.q_chosen = choose_precision(d.q_required, t_e, t_c, payload_elements, bandwidth_mbps, domain);
  d.t_t_prime_ms = t_t_prime_ms(payload_elements, d.q_chosen, bandwidth_mbps);
  return d;
}

struct OnlineConfig {
  bool early_exit = true;
  bool adjust_precision = true;
  bool update_on_cloud_label = false;  ///< also learn from cloud results using the true label
  double decision_cost_ms = 0.0;
  std::vector<int> precision_domain = default_precision_domain();
};

/// Applies decide() to each simulated task using the scenario's features.
class OnlineScheduler : public TaskDecider {
 public:
  OnlineScheduler(const ModelGraph& g, const PartitionStrategy& s, SemanticCache cache, Thresholds th,
                  const FeatureSet& features, OnlineConfig cfg)
      : cache_(std::move(cache)), th_(std::move(th)), features_(features), cfg_(std::move(cfg)) {
    const auto st = stage_times(g, s, 1.0);
    t_e_ = st.t_e;
    t_c_ = st.t_c;
    for (const auto& c : s.cuts) {
      if (c.producer == kRawInput) raw_input_ = true;
      payload_elements_ += cut_elements(g, c);
      base_bits_ = std::max(base_bits_, c.bits);
    }
  }

  TaskPlan plan_task(std::size_t, const StreamTask& task, double, double bandwidth_mbps) override {
    TaskPlan plan;
    if (!task.feature || raw_input_) return plan;
    plan.decision_cost_ms = cfg_.decision_cost_ms;
    const auto feature = gap(features_.samples.at(*task.feature)).vector;
    Thresholds th = th_;
    if (!cfg_.early_exit) th.s_ext = std::numeric_limits<double>::infinity();
    auto d = decide(cache_, th, feature, base_bits_, t_e_, t_c_, payload_elements_, bandwidth_mbps,
                    cfg_.precision_domain);
    decisions_.push_back(d);
    if (d.exited) {
      plan.exited = true;
      plan.result_label = d.result_label;
      return plan;
    }
    if (cfg_.adjust_precision && payload_elements_ > 0) plan.bits = d.q_chosen;
    if (cfg_.update_on_cloud_label && task.true_label) cache_.update_center(*task.true_label, feature);
    return plan;
  }

  const SemanticCache& cache() const noexcept { return cache_; }
  const std::vector<QuantDecision>& decisions() const noexcept { return decisions_; }

 private:
  SemanticCache cache_;
  Thresholds th_;
  const FeatureSet& features_;
  OnlineConfig cfg_;
  double t_e_ = 0.0, t_c_ = 0.0;
  std::uint64_t payload_elements_ = 0;
  int base_bits_ = 0;
  bool raw_input_ = false;
  std::vector<QuantDecision> decisions_;
};

}  // namespace coach

#endif  // COACH_ONLINE_HPP
