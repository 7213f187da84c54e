#ifndef COACH_TESTS_SUPPORT_HPP
#define COACH_TESTS_SUPPORT_HPP

// Generators and small builders shared by the test binaries.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "coach/coach.hpp"

namespace testsupport {

inline std::string data_path(const std::string& name) { return std::string(COACH_DATA_DIR) + "/" + name; }

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  long long integer(long long lo, long long hi) { return std::uniform_int_distribution<long long>(lo, hi)(gen_); }
  bool coin(double p = 0.5) { return uniform(0.0, 1.0) < p; }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen_); }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

inline coach::LayerNode make_layer(const std::string& id, double dev, double cloud, std::uint64_t elements,
                                   std::map<int, double> table = {{8, 0.9}}, std::uint32_t channels = 1) {
  coach::LayerNode l;
  l.id = id;
  l.device_time_ms = dev;
  l.cloud_time_ms = cloud;
  l.output_elements = elements;
  l.output_channels = channels;
  l.range_min = 0.0;
  l.range_max = 4.0;
  l.accuracy_table = std::move(table);
  return l;
}

/// Monotone table over a random subset of widths; loss shrinks with width.
inline std::map<int, double> random_table(Rng& rng) {
  static const int widths[] = {2, 3, 4, 5, 6, 7, 8, 16};
  const double full = rng.uniform(0.6, 0.95);
  std::vector<double> losses;
  for (int i = 0; i < 8; ++i) losses.push_back(rng.coin(0.3) ? 0.0 : rng.uniform(0.0, 0.05));
  std::sort(losses.rbegin(), losses.rend());
  std::map<int, double> t;
  for (int i = 0; i < 8; ++i)
    if (i == 7 || rng.coin(0.7)) t[widths[i]] = full - (i == 7 ? 0.0 : losses[i]);
  return t;
}

struct GraphDraft {
  std::vector<coach::LayerNode> layers;
  std::vector<std::pair<std::size_t, std::size_t>> edges;

  std::size_t add(Rng& rng) {
    std::string id = "n" + std::to_string(layers.size());
    auto table = rng.coin(0.9) ? random_table(rng) : std::map<int, double>{};
    layers.push_back(make_layer(id, rng.uniform(0.1, 10.0), rng.uniform(0.1, 10.0),
                                static_cast<std::uint64_t>(rng.integer(100, 100000)), table));
    return layers.size() - 1;
  }

  coach::ModelGraph build(const std::string& name, std::uint64_t input_elements) const {
    std::vector<coach::Edge> e;
    for (auto [a, b] : edges) e.push_back({a, b});
    coach::ModelGraph g(name, layers, e);
    g.set_input(input_elements, 8);
    return g;
  }
};

/// Two-terminal series-parallel piece using exactly `budget` layers.
/// Returns (entry, exit).
inline std::pair<std::size_t, std::size_t> sp_piece(GraphDraft& d, Rng& rng, std::size_t budget) {
  if (budget == 1) {
    auto v = d.add(rng);
    return {v, v};
  }
  if (budget >= 4 && rng.coin(0.5)) {
    auto fork = d.add(rng);
    std::size_t inner = budget - 2;
    std::size_t branches = static_cast<std::size_t>(rng.integer(1, std::min<long long>(3, static_cast<long long>(inner))));
    bool bypass = branches == 1 || rng.coin(0.2);
    std::vector<std::size_t> sizes(branches, 1);
    for (std::size_t extra = inner - branches; extra > 0; --extra) sizes[static_cast<std::size_t>(rng.integer(0, static_cast<long long>(branches) - 1))]++;
    std::vector<std::pair<std::size_t, std::size_t>> parts;
    for (auto s : sizes) parts.push_back(sp_piece(d, rng, s));
    auto join = d.add(rng);
    for (auto [a, b] : parts) {
      d.edges.push_back({fork, a});
      d.edges.push_back({b, join});
    }
    if (bypass) d.edges.push_back({fork, join});
    return {fork, join};
  }
  std::size_t left = static_cast<std::size_t>(rng.integer(1, static_cast<long long>(budget) - 1));
  auto a = sp_piece(d, rng, left);
  auto b = sp_piece(d, rng, budget - left);
  d.edges.push_back({a.second, b.first});
  return {a.first, b.second};
}

inline coach::ModelGraph random_sp_graph(Rng& rng, std::size_t layers, const std::string& name = "sp") {
  GraphDraft d;
  sp_piece(d, rng, layers);
  return d.build(name, rng.coin(0.5) ? static_cast<std::uint64_t>(rng.integer(1000, 200000)) : 0);
}

/// entry -> n parallel chains of c layers -> exit.
inline coach::ModelGraph family_graph(std::size_t c, std::size_t n, Rng& rng) {
  GraphDraft d;
  auto entry = d.add(rng);
  std::vector<std::size_t> tails;
  for (std::size_t f = 0; f < n; ++f) {
    std::size_t prev = entry;
    for (std::size_t k = 0; k < c; ++k) {
      auto v = d.add(rng);
      d.edges.push_back({prev, v});
      prev = v;
    }
    tails.push_back(prev);
  }
  auto exit = d.add(rng);
  for (auto t : tails) d.edges.push_back({t, exit});
  return d.build("family", 50000);
}

inline coach::ModelGraph chain(const std::vector<double>& dev, const std::vector<double>& cloud,
                               const std::vector<std::uint64_t>& elements, std::map<int, double> table = {{2, 0.9}}) {
  std::vector<coach::LayerNode> layers;
  std::vector<coach::Edge> edges;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    layers.push_back(make_layer("l" + std::to_string(i + 1), dev[i], cloud[i], elements[i], table));
    if (i) edges.push_back({i - 1, i});
  }
  return coach::ModelGraph("chain", layers, edges);
}

}  // namespace testsupport

#endif  // COACH_TESTS_SUPPORT_HPP
