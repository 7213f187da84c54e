#ifndef COACH_SCENARIO_HPP
#define COACH_SCENARIO_HPP

// Scenario documents: everything one simulation run needs, with file
// references resolved relative to the scenario file.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coach/error.hpp"
#include "coach/features.hpp"
#include "coach/graph.hpp"
#include "coach/offline.hpp"
#include "coach/online.hpp"
#include "coach/pipeline.hpp"

namespace coach {

struct Scenario {
  ModelGraph model;
  PartitionStrategy strategy;
  BandwidthTrace trace;
  TaskStream stream;
  std::optional<FeatureSet> features;     ///< per-task features, task i uses sample i
  std::optional<FeatureSet> calibration;  ///< warms the cache; source of thresholds if none given
  std::optional<Thresholds> thresholds;
  bool online = false;
  OnlineConfig online_cfg;
  CalibrationConfig calibration_cfg;
  std::uint64_t seed = 0;
};

namespace detail {

inline GeneratorConfig generator_from_json(const nlohmann::json& j, std::uint64_t means_seed, std::uint64_t seed) {
  GeneratorConfig g;
  g.means_seed = j.value("means_seed", means_seed);
  g.seed = seed;
  g.labels = j.value("labels", g.labels);
  g.channels = j.value("channels", g.channels);
  g.height = j.value("height", g.height);
  g.width = j.value("width", g.width);
  g.separation = j.value("separation", g.separation);
  g.video_sigma = j.value("video_sigma", g.video_sigma);
  g.frame_sigma = j.value("frame_sigma", g.frame_sigma);
  g.frame_rho = j.value("frame_rho", g.frame_rho);
  g.pixel_sigma = j.value("pixel_sigma", g.pixel_sigma);
  g.count = j.value("count", g.count);
  g.seed = j.value("seed", g.seed);
  if (j.contains("correlation")) g.correlation = parse_correlation(j.at("correlation").get<std::string>());
  return g;
}

}  // namespace detail

/// Reads a scenario; relative paths resolve against `base_dir`.
inline Scenario scenario_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return (path.is_absolute() ? path : base_dir / path).string();
  };
  // generated sets share label means through the scenario seed; the
  // calibration set draws its samples from the next seed
  auto load_features = [&](const nlohmann::json& ref, std::uint64_t seed, std::uint64_t offset) {
    if (ref.is_string()) return load_feature_set_file(resolve(ref.get<std::string>()));
    return generate_features(detail::generator_from_json(ref.at("generate"), seed, seed + offset));
  };
  try {
    Scenario sc{load_model_file(resolve(doc.at("model").get<std::string>())), {}, {}, {}, {}, {}, {}, false, {}, {}, 0};
    sc.seed = doc.value("seed", std::uint64_t{0});
    sc.strategy = load_strategy(sc.model, read_text_file(resolve(doc.at("strategy").get<std::string>())));
    if (doc.contains("trace")) {
      const auto& t = doc.at("trace");
      sc.trace = t.is_number() ? BandwidthTrace::constant(t.get<double>()) : load_trace_file(resolve(t.get<std::string>()));
    } else {
      input_error("scenario has no trace");
    }
    if (doc.contains("features")) sc.features = load_features(doc.at("features"), sc.seed, 0);
    if (doc.contains("calibration")) sc.calibration = load_features(doc.at("calibration"), sc.seed, 1);
    if (doc.contains("thresholds"))
      sc.thresholds = thresholds_from_json(nlohmann::json::parse(read_text_file(resolve(doc.at("thresholds")))));

    const auto& arr = doc.at("arrivals");
    if (arr.contains("times")) {
      for (double t : arr.at("times").get<std::vector<double>>()) sc.stream.tasks.push_back({t, {}, {}});
    } else {
      std::size_t count = arr.contains("count") ? arr.at("count").get<std::size_t>()
                                                : (sc.features ? sc.features->samples.size() : 0);
      sc.stream = TaskStream::fixed_interval(arr.at("interval_ms").get<double>(), count);
    }
    if (sc.features) {
      if (sc.features->samples.size() < sc.stream.tasks.size()) input_error("scenario has fewer features than tasks");
      for (std::size_t i = 0; i < sc.stream.tasks.size(); ++i) {
        sc.stream.tasks[i].feature = i;
        sc.stream.tasks[i].true_label = sc.features->samples[i].label;
      }
    }

    if (doc.contains("online")) {
      const auto& o = doc.at("online");
      sc.online = o.value("enabled", true);
      sc.online_cfg.early_exit = o.value("early_exit", true);
      sc.online_cfg.adjust_precision = o.value("adjust_precision", true);
      sc.online_cfg.update_on_cloud_label = o.value("update_on_cloud_label", false);
      sc.online_cfg.decision_cost_ms = o.value("decision_cost_ms", 0.0);
      if (o.contains("precision_domain")) sc.online_cfg.precision_domain = o.at("precision_domain").get<std::vector<int>>();
      sc.calibration_cfg.precision_domain = sc.online_cfg.precision_domain;
      sc.calibration_cfg.epsilon = o.value("epsilon", sc.calibration_cfg.epsilon);
      if (o.contains("quant_range")) {
        auto r = o.at("quant_range").get<std::vector<double>>();
        if (r.size() != 2 || !(r[0] < r[1])) input_error("quant_range must be [lo, hi] with lo < hi");
        sc.calibration_cfg.range = std::make_pair(r[0], r[1]);
      }
    }
    if (sc.online) {
      if (!sc.features) input_error("online scheduling needs per-task features");
      if (!sc.calibration) input_error("online scheduling needs a calibration set");
      if (sc.online_cfg.decision_cost_ms < 0.0) input_error("decision cost must be nonnegative");
    }
    sc.stream.validate();
    return sc;
  } catch (const nlohmann::json::exception& e) {
    input_error(std::string("scenario document: ") + e.what());
  }
}

inline Scenario load_scenario_file(const std::string& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    input_error(path + ": " + e.what());
  }
  return scenario_from_json(doc, std::filesystem::path(path).parent_path());
}

struct ScenarioRun {
  SimReport report;
  std::optional<Thresholds> thresholds;
  std::vector<QuantDecision> decisions;
};

/// Warms the cache on the calibration set, calibrates when no thresholds are
/// given, and simulates.
inline ScenarioRun run_scenario(const Scenario& sc) {
  ScenarioRun run;
  if (!sc.online) {
    run.report = simulate(sc.model, sc.strategy, sc.stream, sc.trace);
    return run;
  }
  const auto& cal = *sc.calibration;
  std::size_t labels = std::max(cal.label_count(), sc.features->label_count());
  SemanticCache cache(std::max<std::size_t>(labels, 2), cal.channels());
  cache.warm(cal);
  run.thresholds = sc.thresholds ? *sc.thresholds : calibrate(cache, cal, sc.calibration_cfg);
  OnlineScheduler sched(sc.model, sc.strategy, std::move(cache), *run.thresholds, *sc.features, sc.online_cfg);
  run.report = simulate(sc.model, sc.strategy, sc.stream, sc.trace, &sched);
  run.decisions = sched.decisions();
  return run;
}

}  // namespace coach

#endif  // COACH_SCENARIO_HPP
