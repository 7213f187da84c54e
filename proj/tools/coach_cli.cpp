// coach: offline partitioning, calibration, simulation and feature generation.
//
// Exit status: 0 success, 2 input error, 3 infeasible, 4 internal invariant.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "coach/coach.hpp"

namespace {

using coach::detail::fixed6;

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) coach::input_error("cannot write '" + path + "'");
  out << text;
  if (!out) coach::input_error("failed writing '" + path + "'");
}

std::string metrics_text(const coach::PlanMetrics& m) {
  std::ostringstream out;
  out << "T_e_ms " << fixed6(m.t_e_ms) << '\n'
      << "T_t_ms " << fixed6(m.t_t_ms) << '\n'
      << "T_c_ms " << fixed6(m.t_c_ms) << '\n'
      << "T_t_parallel_ms " << fixed6(m.t_t_parallel_ms) << '\n'
      << "T_c_parallel_ms " << fixed6(m.t_c_parallel_ms) << '\n'
      << "B_c " << fixed6(m.b_c) << '\n'
      << "B_t " << fixed6(m.b_t) << '\n'
      << "max_stage_ms " << fixed6(m.max_stage_ms) << '\n'
      << "objective " << fixed6(m.objective) << '\n'
      << "task_latency_ms " << fixed6(m.task_latency_ms) << '\n'
      << "status " << coach::to_string(m.infeasible) << '\n';
  return out.str();
}

std::string strategy_text(const coach::ModelGraph& g, const coach::PartitionStrategy& s) {
  std::ostringstream out;
  out << "device";
  for (auto v : s.device_layers()) out << ' ' << g.layer(v).id;
  out << "\ncloud";
  for (auto v : s.cloud_layers()) out << ' ' << g.layer(v).id;
  out << '\n';
  for (const auto& c : s.cuts) {
    out << "cut " << (c.producer == coach::kRawInput ? coach::kRawInputId : g.layer(c.producer).id) << " bits "
        << c.bits << " ->";
    for (const auto& e : c.severed) out << ' ' << g.layer(e.to).id;
    out << '\n';
  }
  return out.str();
}

std::vector<int> parse_domain(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      coach::input_error("bad precision '" + item + "' in --domain");
    }
  }
  return out;
}

struct OptimizeArgs {
  std::string model;
  double bw = 0.0;
  double tmax = -1.0;
  double epsilon = 0.005;
  std::string domain;
  std::string out;
  bool brute = false;
};

int cmd_optimize(const OptimizeArgs& a) {
  auto g = coach::load_model_file(a.model);
  coach::OptimizerConfig cfg;
  cfg.epsilon = a.epsilon;
  if (a.tmax >= 0.0)
    cfg.t_max_ms = a.tmax;
  else if (g.t_max_ms())
    cfg.t_max_ms = *g.t_max_ms();
  if (!a.domain.empty()) cfg.precision_domain = parse_domain(a.domain);
  auto r = a.brute ? coach::brute_force_optimize(g, a.bw, cfg) : coach::optimize(g, a.bw, cfg);
  std::cout << "model " << g.name() << '\n'
            << "bandwidth_mbps " << fixed6(a.bw) << '\n'
            << "chain_flow " << coach::describe(g, coach::cluster_virtual_blocks(g)) << '\n'
            << strategy_text(g, r.strategy) << metrics_text(r.metrics) << "evaluations " << r.stats.evaluations
            << '\n';
  if (!a.out.empty()) write_file(a.out, coach::to_json(g, r.strategy).dump(2) + "\n");
  return 0;
}

struct CalibrateArgs {
  std::string model;
  std::string features;
  std::string layer;
  double epsilon = 0.005;
  std::string domain;
  std::string out;
};

int cmd_calibrate(const CalibrateArgs& a) {
  auto g = coach::load_model_file(a.model);
  auto d = coach::load_feature_set_file(a.features);
  if (d.samples.empty()) coach::input_error("feature set '" + a.features + "' is empty");
  if (d.label_count() < 2) coach::input_error("feature set needs at least two labels");
  coach::CalibrationConfig cfg;
  cfg.epsilon = a.epsilon;
  if (!a.domain.empty()) cfg.precision_domain = parse_domain(a.domain);
  if (!a.layer.empty()) {
    const auto& l = g.layer(g.index_of(a.layer));
    cfg.range = std::make_pair(l.range_min, l.range_max);
  }
  coach::SemanticCache cache(d.label_count(), d.channels());
  cache.warm(d);
  auto th = coach::calibrate(cache, d, cfg);
  auto doc = coach::to_json(th).dump(2) + "\n";
  std::cout << doc;
  if (!a.out.empty()) write_file(a.out, doc);
  return 0;
}

int cmd_simulate(const std::string& scenario_path, const std::string& out_dir) {
  auto sc = coach::load_scenario_file(scenario_path);
  auto run = coach::run_scenario(sc);
  const auto summary = coach::format_summary(run.report);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);
    write_file((dir / "tasks.tsv").string(), coach::format_task_table(run.report));
    write_file((dir / "summary.txt").string(), summary);
    write_file((dir / "bubbles.txt").string(), coach::format_bubbles(coach::bubble_report(run.report)));
    if (run.thresholds) write_file((dir / "thresholds.json").string(), coach::to_json(*run.thresholds).dump(2) + "\n");
  }
  std::cout << summary;
  return 0;
}

int cmd_gen_features(const coach::GeneratorConfig& cfg, const std::string& correlation, const std::string& out) {
  auto c = cfg;
  c.correlation = coach::parse_correlation(correlation);
  auto text = coach::format_feature_set(coach::generate_features(c));
  if (out.empty())
    std::cout << text;
  else
    write_file(out, text);
  return 0;
}

int cmd_report(const std::string& model, const std::string& strategy, double bw, double epsilon) {
  auto g = coach::load_model_file(model);
  std::cout << "model " << g.name() << '\n'
            << "layers " << g.size() << '\n'
            << "chain_flow " << coach::describe(g, coach::cluster_virtual_blocks(g)) << '\n';
  if (!strategy.empty()) {
    auto s = coach::load_strategy(g, coach::read_text_file(strategy));
    coach::OptimizerConfig cfg;
    cfg.epsilon = epsilon;
    if (g.t_max_ms()) cfg.t_max_ms = *g.t_max_ms();
    std::cout << "bandwidth_mbps " << fixed6(bw) << '\n'
              << strategy_text(g, s) << metrics_text(coach::evaluate_strategy(g, s, bw, cfg));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pipelined device-cloud inference planner and simulator"};
  app.require_subcommand(1);

  OptimizeArgs opt;
  auto* optimize = app.add_subcommand("optimize", "search the partition and quantization strategy");
  optimize->add_option("model", opt.model, "model profile")->required();
  optimize->add_option("--bw", opt.bw, "bandwidth in Mbps")->required();
  optimize->add_option("--tmax", opt.tmax, "latency budget in ms (default: profile value or none)");
  optimize->add_option("--epsilon", opt.epsilon, "accuracy-loss limit");
  optimize->add_option("--domain", opt.domain, "comma-separated precision domain");
  optimize->add_option("--out", opt.out, "strategy output file");
  optimize->add_flag("--brute-force", opt.brute, "exhaustive search (small models only)");

  CalibrateArgs cal;
  auto* calibrate = app.add_subcommand("calibrate", "derive early-exit and quantization thresholds");
  calibrate->add_option("model", cal.model, "model profile")->required();
  calibrate->add_option("features", cal.features, "calibration feature set")->required();
  calibrate->add_option("--layer", cal.layer, "cut layer whose output range sets the quantizer");
  calibrate->add_option("--epsilon", cal.epsilon, "tolerated error rate");
  calibrate->add_option("--domain", cal.domain, "comma-separated precision domain");
  calibrate->add_option("--out", cal.out, "thresholds output file");

  std::string scenario, out_dir;
  auto* simulate = app.add_subcommand("simulate", "run a pipeline scenario");
  simulate->add_option("scenario", scenario, "scenario file")->required();
  simulate->add_option("--out-dir", out_dir, "directory for tasks.tsv, summary.txt, bubbles.txt");

  coach::GeneratorConfig gen;
  std::string correlation = "low", gen_out;
  auto* gen_features = app.add_subcommand("gen-features", "synthesize a Gaussian-cluster feature set");
  gen_features->add_option("--labels", gen.labels);
  gen_features->add_option("--channels", gen.channels);
  gen_features->add_option("--height", gen.height);
  gen_features->add_option("--width", gen.width);
  gen_features->add_option("--separation", gen.separation);
  gen_features->add_option("--video-sigma", gen.video_sigma);
  gen_features->add_option("--frame-sigma", gen.frame_sigma);
  gen_features->add_option("--frame-rho", gen.frame_rho);
  gen_features->add_option("--pixel-sigma", gen.pixel_sigma);
  gen_features->add_option("--correlation", correlation, "low | medium | high");
  gen_features->add_option("--count", gen.count);
  gen_features->add_option("--seed", gen.seed, "sample seed");
  gen_features->add_option("--means-seed", gen.means_seed, "seed of the label means");
  gen_features->add_option("--out", gen_out, "output file (default stdout)");

  std::string rep_model, rep_strategy;
  double rep_bw = 10.0, rep_eps = 0.005;
  auto* report = app.add_subcommand("report", "describe a model and evaluate a strategy");
  report->add_option("model", rep_model, "model profile")->required();
  report->add_option("--strategy", rep_strategy, "strategy file to evaluate");
  report->add_option("--bw", rep_bw, "bandwidth in Mbps");
  report->add_option("--epsilon", rep_eps, "accuracy-loss limit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(coach::ErrorKind::input);
  }

  try {
    if (*optimize) return cmd_optimize(opt);
    if (*calibrate) return cmd_calibrate(cal);
    if (*simulate) return cmd_simulate(scenario, out_dir);
    if (*gen_features) return cmd_gen_features(gen, correlation, gen_out);
    if (*report) return cmd_report(rep_model, rep_strategy, rep_bw, rep_eps);
  } catch (const coach::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_status();
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(coach::ErrorKind::input);
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return static_cast<int>(coach::ErrorKind::invariant);
  }
  return 0;
}
