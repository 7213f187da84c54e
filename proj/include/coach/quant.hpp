#ifndef COACH_QUANT_HPP
#define COACH_QUANT_HPP

// Uniform affine quantization of intermediate tensors and the precision search
// against a per-layer accuracy table.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coach/error.hpp"
#include "coach/graph.hpp"

namespace coach {

/// Per-tensor quantization parameters.
struct QuantSpec {
  int bits = 8;
  double range_min = 0.0;
  double range_max = 1.0;

  QuantSpec() = default;
  QuantSpec(int bits_, double lo, double hi) : bits(bits_), range_min(lo), range_max(hi) {
    if (bits < kMinBits || bits > kMaxBits) input_error("quantization bits outside [2,16]");
    if (!(range_min < range_max)) input_error("quantization range is empty");
  }

  std::int64_t max_code() const noexcept { return (std::int64_t{1} << bits) - 1; }
  double scale() const noexcept { return (range_max - range_min) / static_cast<double>(max_code()); }
};

inline QuantSpec spec_for(const LayerNode& layer, int bits) {
  return QuantSpec(bits, layer.range_min, layer.range_max);
}

/// q = clamp(round((x - min) / scale), 0, 2^bits - 1), rounding half away from zero.
inline std::int64_t quantize_value(double x, const QuantSpec& spec) {
  double r = std::round((x - spec.range_min) / spec.scale());
  if (!(r > 0.0)) return 0;  // also maps NaN to the lower code
  if (r >= static_cast<double>(spec.max_code())) return spec.max_code();
  return static_cast<std::int64_t>(r);
}

inline std::vector<std::int64_t> quantize(std::span<const double> values, const QuantSpec& spec) {
  std::vector<std::int64_t> out;
  out.reserve(values.size());
  for (double x : values) out.push_back(quantize_value(x, spec));
  return out;
}

inline std::vector<double> dequantize(std::span<const std::int64_t> codes, const QuantSpec& spec) {
  std::vector<double> out;
  out.reserve(codes.size());
  const double scale = spec.scale();
  for (auto q : codes) {
    if (q < 0 || q > spec.max_code())
      input_error("quantized code " + std::to_string(q) + " outside [0," + std::to_string(spec.max_code()) + "]");
    out.push_back(spec.range_min + static_cast<double>(q) * scale);
  }
  return out;
}

/// quantize followed by dequantize.
inline std::vector<double> round_trip(std::span<const double> values, const QuantSpec& spec) {
  auto codes = quantize(values, spec);
  return dequantize(codes, spec);
}

/// Payload of one transmitted tensor. No container overhead is modelled.
inline double payload_bits(std::uint64_t elements, int bits) {
  return static_cast<double>(elements) * static_cast<double>(bits);
}

/// Transfer time in ms of `bits` at `mbps` megabits per second.
inline double transfer_ms(double bits, double mbps) { return bits / (mbps * 1e3); }

inline const std::vector<int>& default_precision_domain() {
  static const std::vector<int> domain{2, 3, 4, 5, 6, 7, 8, 16};
  return domain;
}

/// Offline optimizer knobs.
struct OptimizerConfig {
  double epsilon = 0.005;  ///< accuracy-loss limit
  double t_max_ms = std::numeric_limits<double>::infinity();
  std::vector<int> precision_domain = default_precision_domain();

  void validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) input_error("epsilon must be in [0,1]");
    if (!(t_max_ms >= 0.0)) input_error("t_max must be nonnegative");
    if (precision_domain.empty()) input_error("precision domain is empty");
    for (std::size_t i = 0; i < precision_domain.size(); ++i) {
      int b = precision_domain[i];
      if (b < kMinBits || b > kMaxBits) input_error("precision domain entry outside [2,16]");
      if (i && b <= precision_domain[i - 1]) input_error("precision domain must be strictly increasing");
    }
  }
};

/// Whether `bits` keeps the loss against `full_accuracy` within epsilon.
inline bool meets_accuracy(const std::map<int, double>& table, double full_accuracy, int bits, double epsilon) {
  auto it = table.upper_bound(bits);
  if (it == table.begin()) return false;
  return full_accuracy - std::prev(it)->second <= epsilon;
}

/// Smallest domain precision meeting the accuracy limit, by bisection over
/// the ordered domain. Throws Error(infeasible) when none does.
inline int min_precision(const std::map<int, double>& table, double full_accuracy, const OptimizerConfig& cfg) {
  const auto& domain = cfg.precision_domain;
  std::size_t lo = 0, hi = domain.size();  // first feasible index lies in [lo, hi]
  while (lo < hi) {
    std::size_t mid = lo + (hi - lo) / 2;
    if (meets_accuracy(table, full_accuracy, domain[mid], cfg.epsilon))
      hi = mid;
    else
      lo = mid + 1;
  }
  if (lo == domain.size()) infeasible_error("no precision in the domain meets the accuracy limit");
  return domain[lo];
}

/// Domain precisions at or above min_precision; empty when the layer cannot be a cut point.
inline std::vector<int> feasible_precisions(const LayerNode& layer, const OptimizerConfig& cfg) {
  auto full = layer.full_accuracy();
  if (!full) return {};
  std::vector<int> out;
  for (int b : cfg.precision_domain)
    if (meets_accuracy(layer.accuracy_table, *full, b, cfg.epsilon)) out.push_back(b);
  return out;
}

}  // namespace coach

#endif  // COACH_QUANT_HPP
