#ifndef COACH_FEATURES_HPP
#define COACH_FEATURES_HPP

// Feature-set files and the synthetic Gaussian-cluster generator.
//
// File format: one sample per line, `label C H W v_1 ... v_{C*H*W}`,
// channel-major values. Blank lines and `#` comments are ignored.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "coach/error.hpp"
#include "coach/graph.hpp"

namespace coach {

struct FeatureSample {
  int label = 0;
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<double> values;

  bool operator==(const FeatureSample&) const = default;
};

struct FeatureSet {
  std::vector<FeatureSample> samples;

  /// One more than the largest label present.
  std::size_t label_count() const {
    int hi = -1;
    for (const auto& s : samples) hi = std::max(hi, s.label);
    return static_cast<std::size_t>(hi + 1);
  }
  std::size_t channels() const { return samples.empty() ? 0 : samples.front().channels; }

  bool operator==(const FeatureSet&) const = default;
};

inline FeatureSet parse_feature_set(std::string_view text) {
  FeatureSet set;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    FeatureSample s;
    long long label = 0, c = 0, h = 0, w = 0;
    if (!(ls >> label)) {
      std::string rest;
      if (std::istringstream(line) >> rest) input_error("feature line " + std::to_string(lineno) + ": bad label");
      continue;
    }
    auto where = "feature line " + std::to_string(lineno) + ": ";
    if (!(ls >> c >> h >> w)) input_error(where + "expected label C H W values...");
    if (label < 0) input_error(where + "labels must be nonnegative");
    if (c <= 0 || h <= 0 || w <= 0) input_error(where + "dimensions must be positive");
    s.label = static_cast<int>(label);
    s.channels = static_cast<std::size_t>(c);
    s.height = static_cast<std::size_t>(h);
    s.width = static_cast<std::size_t>(w);
    s.values.reserve(s.channels * s.height * s.width);
    double v = 0.0;
    while (ls >> v) s.values.push_back(v);
    if (!ls.eof()) input_error(where + "non-numeric value");
    if (s.values.size() != s.channels * s.height * s.width)
      input_error(where + "expected " + std::to_string(s.channels * s.height * s.width) + " values, got " +
                  std::to_string(s.values.size()));
    if (!set.samples.empty() && s.channels != set.samples.front().channels)
      input_error(where + "channel count differs from the first sample");
    set.samples.push_back(std::move(s));
  }
  return set;
}

inline FeatureSet load_feature_set_file(const std::string& path) { return parse_feature_set(read_text_file(path)); }

inline std::string format_feature_set(const FeatureSet& set) {
  std::string out;
  char buf[48];
  for (const auto& s : set.samples) {
    out += std::to_string(s.label) + ' ' + std::to_string(s.channels) + ' ' + std::to_string(s.height) + ' ' +
           std::to_string(s.width);
    for (double v : s.values) {
      std::snprintf(buf, sizeof buf, " %.6f", v == 0.0 ? 0.0 : v);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

enum class Correlation { low, medium, high };

inline Correlation parse_correlation(std::string_view s) {
  if (s == "low") return Correlation::low;
  if (s == "medium") return Correlation::medium;
  if (s == "high") return Correlation::high;
  input_error("correlation must be low, medium or high");
}

inline const char* to_string(Correlation c) {
  switch (c) {
    case Correlation::low: return "low";
    case Correlation::medium: return "medium";
    case Correlation::high: return "high";
  }
  return "?";
}

/// Mean run length of consecutive same-label samples.
inline double run_length_for(Correlation c) {
  switch (c) {
    case Correlation::low: return 1.0;
    case Correlation::medium: return 5.0;
    case Correlation::high: return 20.0;
  }
  return 1.0;
}

struct GeneratorConfig {
  std::size_t labels = 4;
  std::size_t channels = 16;
  std::size_t height = 2;
  std::size_t width = 2;
  double separation = 1.0;   ///< scale of the label means' spread
  double video_sigma = 0.3;  ///< per-run offset shared by all frames of a run
  double frame_sigma = 0.1;  ///< frame-to-frame drift within a run
  double frame_rho = 0.9;    ///< AR(1) coefficient of the drift
  double pixel_sigma = 0.1;  ///< independent per-value noise
  Correlation correlation = Correlation::low;
  std::size_t count = 100;
  std::uint64_t means_seed = 1;  ///< fixes the label means; sets sharing it share clusters
  std::uint64_t seed = 1;        ///< drives labels, runs and noise

  void validate() const {
    if (labels < 2) input_error("generator needs at least two labels");
    if (channels == 0 || height == 0 || width == 0) input_error("generator dimensions must be positive");
    if (count == 0) input_error("generator count must be at least 1");
    if (separation < 0.0 || video_sigma < 0.0 || frame_sigma < 0.0 || pixel_sigma < 0.0)
      input_error("generator spreads must be nonnegative");
    if (frame_rho < 0.0 || frame_rho >= 1.0) input_error("frame_rho must be in [0,1)");
  }
};

/// Synthetic clips: each run draws a label and a clip offset; frames within a
/// run drift by an AR(1) process. Label means are 1 + separation * u with u
/// uniform in [0,1]^C, drawn from means_seed. Values are clamped at 0 and
/// rounded to the 6 decimals the file format keeps.
inline FeatureSet generate_features(const GeneratorConfig& cfg) {
  cfg.validate();
  std::mt19937_64 means_rng(cfg.means_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<double>> mu(cfg.labels, std::vector<double>(cfg.channels));
  for (auto& m : mu)
    for (auto& x : m) x = 1.0 + cfg.separation * unit(means_rng);

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL ^ (static_cast<std::uint64_t>(cfg.correlation) << 32));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_label(0, cfg.labels - 1);
  const double mean_run = run_length_for(cfg.correlation);
  std::geometric_distribution<std::size_t> extra(1.0 / mean_run);
  const double innovation = std::sqrt(1.0 - cfg.frame_rho * cfg.frame_rho);

  FeatureSet set;
  const std::size_t plane = cfg.height * cfg.width;
  while (set.samples.size() < cfg.count) {
    const std::size_t label = pick_label(rng);
    const std::size_t run = mean_run <= 1.0 ? 1 : 1 + extra(rng);
    std::vector<double> offset(cfg.channels), drift(cfg.channels);
    for (std::size_t k = 0; k < cfg.channels; ++k) {
      offset[k] = cfg.video_sigma * normal(rng);
      drift[k] = cfg.frame_sigma * normal(rng);
    }
    for (std::size_t f = 0; f < run && set.samples.size() < cfg.count; ++f) {
      if (f)
        for (auto& d : drift) d = cfg.frame_rho * d + innovation * cfg.frame_sigma * normal(rng);
      FeatureSample s;
      s.label = static_cast<int>(label);
      s.channels = cfg.channels;
      s.height = cfg.height;
      s.width = cfg.width;
      s.values.resize(cfg.channels * plane);
      for (std::size_t k = 0; k < cfg.channels; ++k) {
        for (std::size_t i = 0; i < plane; ++i) {
          double v = mu[label][k] + offset[k] + drift[k] + cfg.pixel_sigma * normal(rng);
          s.values[k * plane + i] = std::round(std::max(0.0, v) * 1e6) / 1e6;
        }
      }
      set.samples.push_back(std::move(s));
    }
  }
  return set;
}

/// Mean length of maximal runs of equal consecutive labels.
inline double mean_run_length(const FeatureSet& set) {
  if (set.samples.empty()) return 0.0;
  std::size_t runs = 1;
  for (std::size_t i = 1; i < set.samples.size(); ++i)
    if (set.samples[i].label != set.samples[i - 1].label) ++runs;
  return static_cast<double>(set.samples.size()) / static_cast<double>(runs);
}

}  // namespace coach

#endif  // COACH_FEATURES_HPP
