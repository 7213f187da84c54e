#ifndef COACH_GRAPH_HPP
#define COACH_GRAPH_HPP

// Profiled DNN graphs: loading, validation, virtual-block clustering and
// chain-flow extraction.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "coach/error.hpp"

namespace coach {

using LayerIndex = std::size_t;

inline constexpr int kMinBits = 2;
inline constexpr int kMaxBits = 16;

/// One profiled layer. Times are milliseconds, sizes are element counts.
struct LayerNode {
  std::string id;
  double device_time_ms = 0.0;
  double cloud_time_ms = 0.0;
  std::uint64_t output_elements = 0;
  std::uint32_t output_channels = 1;
  double range_min = 0.0;
  double range_max = 1.0;
  /// bits -> accuracy proxy when this layer's output is quantized at that width.
  std::map<int, double> accuracy_table;

  /// Accuracy at `bits`, read from the largest table key not above it.
  std::optional<double> accuracy_at(int bits) const {
    auto it = accuracy_table.upper_bound(bits);
    if (it == accuracy_table.begin()) return std::nullopt;
    return std::prev(it)->second;
  }

  /// Accuracy at the widest profiled precision.
  std::optional<double> full_accuracy() const {
    if (accuracy_table.empty()) return std::nullopt;
    return accuracy_table.rbegin()->second;
  }

  bool operator==(const LayerNode&) const = default;
};

struct Edge {
  LayerIndex from;
  LayerIndex to;

  auto operator<=>(const Edge&) const = default;
};

/// Validated single-entry single-exit DAG of profiled layers. Immutable once built.
class ModelGraph {
 public:
  ModelGraph() = default;

  /// Builds and validates. Throws Error(input) on any violated invariant.
  ModelGraph(std::string name, std::vector<LayerNode> layers, std::vector<Edge> edges)
      : name_(std::move(name)), layers_(std::move(layers)), edges_(std::move(edges)) {
    validate();
  }

  const std::string& name() const noexcept { return name_; }
  std::size_t size() const noexcept { return layers_.size(); }
  const LayerNode& layer(LayerIndex i) const { return layers_.at(i); }
  const std::vector<LayerNode>& layers() const noexcept { return layers_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const std::vector<LayerIndex>& preds(LayerIndex i) const { return preds_.at(i); }
  const std::vector<LayerIndex>& succs(LayerIndex i) const { return succs_.at(i); }
  LayerIndex entry() const noexcept { return entry_; }
  LayerIndex exit() const noexcept { return exit_; }
  /// Deterministic topological order (Kahn, ties by declaration order).
  const std::vector<LayerIndex>& topo_order() const noexcept { return topo_; }
  std::size_t topo_position(LayerIndex i) const { return topo_pos_.at(i); }

  std::optional<LayerIndex> find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  LayerIndex index_of(std::string_view id) const {
    auto i = find(id);
    if (!i) input_error("unknown layer id '" + std::string(id) + "'");
    return *i;
  }

  bool has_edge(LayerIndex from, LayerIndex to) const {
    const auto& s = succs_.at(from);
    return std::find(s.begin(), s.end(), to) != s.end();
  }

  // Raw model input, uploaded when the whole model runs in the cloud.
  std::uint64_t input_elements() const noexcept { return input_elements_; }
  int input_bits() const noexcept { return input_bits_; }
  std::optional<double> t_max_ms() const noexcept { return t_max_ms_; }

  void set_input(std::uint64_t elements, int bits) {
    if (bits < 1 || bits > 32) input_error("input_bits must be in [1,32]");
    input_elements_ = elements;
    input_bits_ = bits;
  }
  void set_t_max_ms(std::optional<double> t) {
    if (t && *t < 0) input_error("t_max_ms must be nonnegative");
    t_max_ms_ = t;
  }

  bool operator==(const ModelGraph& o) const {
    return name_ == o.name_ && layers_ == o.layers_ && edges_ == o.edges_ &&
           input_elements_ == o.input_elements_ && input_bits_ == o.input_bits_ &&
           t_max_ms_ == o.t_max_ms_;
  }

 private:
  void validate();

  std::string name_;
  std::vector<LayerNode> layers_;
  std::vector<Edge> edges_;
  std::vector<std::vector<LayerIndex>> preds_;
  std::vector<std::vector<LayerIndex>> succs_;
  std::vector<LayerIndex> topo_;
  std::vector<std::size_t> topo_pos_;
  std::unordered_map<std::string, LayerIndex> index_;
  LayerIndex entry_ = 0;
  LayerIndex exit_ = 0;
  std::uint64_t input_elements_ = 0;
  int input_bits_ = 8;
  std::optional<double> t_max_ms_;
};

inline void ModelGraph::validate() {
  const std::size_t n = layers_.size();
  if (n == 0) input_error("model '" + name_ + "' has no layers");

  index_.clear();
  for (LayerIndex i = 0; i < n; ++i) {
    const auto& l = layers_[i];
    if (l.id.empty()) input_error("layer with empty id");
    if (!index_.emplace(l.id, i).second) input_error("duplicate layer id '" + l.id + "'");
    if (!(l.device_time_ms >= 0.0) || !(l.cloud_time_ms >= 0.0))
      input_error("layer '" + l.id + "' has a negative cost");
    if (l.output_channels == 0) input_error("layer '" + l.id + "' has zero output channels");
    if (l.output_elements < l.output_channels)
      input_error("layer '" + l.id + "' has fewer output elements than channels");
    if (!(l.range_min < l.range_max)) input_error("layer '" + l.id + "' has an empty output range");
    double prev = -1.0;
    for (const auto& [bits, acc] : l.accuracy_table) {
      if (bits < kMinBits || bits > kMaxBits)
        input_error("layer '" + l.id + "' accuracy key " + std::to_string(bits) + " outside [2,16]");
      if (!(acc >= 0.0 && acc <= 1.0)) input_error("layer '" + l.id + "' accuracy outside [0,1]");
      if (acc < prev) input_error("layer '" + l.id + "' accuracy table is not monotone");
      prev = acc;
    }
  }

  preds_.assign(n, {});
  succs_.assign(n, {});
  for (const auto& e : edges_) {
    if (e.from >= n || e.to >= n) input_error("edge references an unknown layer");
    if (e.from == e.to) input_error("self loop on layer '" + layers_[e.from].id + "'");
    if (std::find(succs_[e.from].begin(), succs_[e.from].end(), e.to) != succs_[e.from].end())
      input_error("duplicate edge " + layers_[e.from].id + "->" + layers_[e.to].id);
    succs_[e.from].push_back(e.to);
    preds_[e.to].push_back(e.from);
  }

  std::vector<LayerIndex> sources, sinks;
  for (LayerIndex i = 0; i < n; ++i) {
    if (preds_[i].empty()) sources.push_back(i);
    if (succs_[i].empty()) sinks.push_back(i);
  }

  // Kahn's algorithm; the ready set is kept ordered by declaration index.
  std::vector<std::size_t> indegree(n);
  for (LayerIndex i = 0; i < n; ++i) indegree[i] = preds_[i].size();
  std::vector<LayerIndex> ready;
  for (LayerIndex i = n; i-- > 0;)
    if (indegree[i] == 0) ready.push_back(i);
  topo_.clear();
  while (!ready.empty()) {
    LayerIndex v = ready.back();
    ready.pop_back();
    topo_.push_back(v);
    for (LayerIndex s : succs_[v]) {
      if (--indegree[s] == 0) {
        ready.push_back(s);
        std::sort(ready.begin(), ready.end(), std::greater<>());
      }
    }
  }
  if (topo_.size() != n) input_error("model '" + name_ + "' contains a cycle");
  if (sources.size() != 1) input_error("model '" + name_ + "' must have exactly one source layer");
  if (sinks.size() != 1) input_error("model '" + name_ + "' must have exactly one sink layer");
  entry_ = sources.front();
  exit_ = sinks.front();

  topo_pos_.assign(n, 0);
  for (std::size_t p = 0; p < n; ++p) topo_pos_[topo_[p]] = p;
}

// ---------------------------------------------------------------------------
// Model-profile documents

inline ModelGraph model_from_json(const nlohmann::json& doc) {
  try {
    std::vector<LayerNode> layers;
    for (const auto& rec : doc.at("layers")) {
      LayerNode l;
      l.id = rec.at("id").get<std::string>();
      l.device_time_ms = rec.at("device_time_ms").get<double>();
      l.cloud_time_ms = rec.at("cloud_time_ms").get<double>();
      auto elements = rec.at("output_elements").get<std::int64_t>();
      auto channels = rec.at("output_channels").get<std::int64_t>();
      if (elements < 0 || channels <= 0) input_error("layer '" + l.id + "' has invalid output size");
      l.output_elements = static_cast<std::uint64_t>(elements);
      l.output_channels = static_cast<std::uint32_t>(channels);
      const auto& range = rec.at("output_range");
      if (!range.is_array() || range.size() != 2) input_error("output_range must be [min,max]");
      l.range_min = range[0].get<double>();
      l.range_max = range[1].get<double>();
      if (rec.contains("accuracy_table")) {
        for (const auto& [key, value] : rec.at("accuracy_table").items()) {
          std::size_t used = 0;
          int bits = std::stoi(key, &used);
          if (used != key.size()) input_error("accuracy key '" + key + "' is not a bit width");
          l.accuracy_table[bits] = value.get<double>();
        }
      }
      layers.push_back(std::move(l));
    }

    std::unordered_map<std::string, LayerIndex> ids;
    for (LayerIndex i = 0; i < layers.size(); ++i) ids.emplace(layers[i].id, i);
    std::vector<Edge> edges;
    for (const auto& pair : doc.at("edges")) {
      if (!pair.is_array() || pair.size() != 2) input_error("edge must be a [from,to] pair");
      auto from = ids.find(pair[0].get<std::string>());
      auto to = ids.find(pair[1].get<std::string>());
      if (from == ids.end() || to == ids.end())
        input_error("edge references unknown layer " + pair.dump());
      edges.push_back({from->second, to->second});
    }

    ModelGraph g(doc.value("name", std::string("model")), std::move(layers), std::move(edges));
    g.set_input(doc.value("input_elements", std::uint64_t{0}), doc.value("input_bits", 8));
    if (doc.contains("t_max_ms") && !doc.at("t_max_ms").is_null())
      g.set_t_max_ms(doc.at("t_max_ms").get<double>());
    return g;
  } catch (const nlohmann::json::exception& e) {
    input_error(std::string("model profile: ") + e.what());
  } catch (const std::invalid_argument& e) {
    input_error(std::string("model profile: ") + e.what());
  }
}

inline ModelGraph load_model(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    input_error(std::string("model profile parse error: ") + e.what());
  }
  return model_from_json(doc);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) input_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline ModelGraph load_model_file(const std::string& path) { return load_model(read_text_file(path)); }

inline nlohmann::json to_json(const ModelGraph& g) {
  nlohmann::json doc;
  doc["name"] = g.name();
  doc["input_elements"] = g.input_elements();
  doc["input_bits"] = g.input_bits();
  if (g.t_max_ms()) doc["t_max_ms"] = *g.t_max_ms();
  auto& layers = doc["layers"] = nlohmann::json::array();
  for (const auto& l : g.layers()) {
    nlohmann::json rec;
    rec["id"] = l.id;
    rec["device_time_ms"] = l.device_time_ms;
    rec["cloud_time_ms"] = l.cloud_time_ms;
    rec["output_elements"] = l.output_elements;
    rec["output_channels"] = l.output_channels;
    rec["output_range"] = {l.range_min, l.range_max};
    auto& table = rec["accuracy_table"] = nlohmann::json::object();
    for (const auto& [bits, acc] : l.accuracy_table) table[std::to_string(bits)] = acc;
    layers.push_back(std::move(rec));
  }
  auto& edges = doc["edges"] = nlohmann::json::array();
  for (const auto& e : g.edges()) edges.push_back({g.layer(e.from).id, g.layer(e.to).id});
  return doc;
}

inline std::string serialize_model(const ModelGraph& g) { return to_json(g).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Virtual blocks and chain flows

struct VirtualBlock;

/// One element of a chain flow: a single layer or a virtual block.
struct FlowElement {
  std::optional<LayerIndex> layer;
  std::shared_ptr<const VirtualBlock> block;

  bool is_block() const noexcept { return block != nullptr; }
};

/// Topologically ordered sequence of layers and virtual blocks. Edges only
/// join consecutive elements (plus bypass edges around a block).
struct ChainFlow {
  std::vector<FlowElement> elements;

  bool empty() const noexcept { return elements.empty(); }
  std::size_t size() const noexcept { return elements.size(); }
};

/// Parallel region between a fork and a join. The fork and join are not
/// members: they are the neighbouring elements of the enclosing flow (or the
/// enclosing flow's own fork/join).
struct VirtualBlock {
  int block_id = 0;
  std::vector<LayerIndex> members;   ///< sorted by topological position
  std::vector<ChainFlow> internal_flows;
  std::optional<LayerIndex> entry;   ///< fork; nullopt = graph boundary
  std::optional<LayerIndex> exit;    ///< join; nullopt = graph boundary
  bool bypass = false;               ///< a direct fork->join edge exists
  bool opaque = false;               ///< not series-parallel decomposable

  std::string name() const { return "b" + std::to_string(block_id); }
};

/// Every layer of `flow`, blocks expanded, in element order.
inline std::vector<LayerIndex> flatten(const ChainFlow& flow) {
  std::vector<LayerIndex> out;
  for (const auto& el : flow.elements) {
    if (el.is_block())
      out.insert(out.end(), el.block->members.begin(), el.block->members.end());
    else
      out.push_back(*el.layer);
  }
  return out;
}

inline std::vector<LayerIndex> element_layers(const FlowElement& el) {
  if (el.is_block()) return el.block->members;
  return {*el.layer};
}

namespace detail {

using Endpoint = std::optional<LayerIndex>;

class Clusterer {
 public:
  explicit Clusterer(const ModelGraph& g) : g_(g) {}

  ChainFlow run() {
    std::vector<LayerIndex> all(g_.topo_order());
    return decompose(all, std::nullopt, std::nullopt);
  }

 private:
  // Nodes of `region` entered from `src` (or with no preds at the graph boundary).
  std::vector<LayerIndex> heads(const std::vector<char>& in, const std::vector<LayerIndex>& region,
                                Endpoint src) const {
    std::vector<LayerIndex> out;
    for (LayerIndex v : region) {
      const auto& p = g_.preds(v);
      bool head = src ? std::find(p.begin(), p.end(), *src) != p.end() : p.empty();
      if (!head && !src) {
        head = std::none_of(p.begin(), p.end(), [&](LayerIndex u) { return in[u]; });
      }
      if (head) out.push_back(v);
    }
    return out;
  }

  std::vector<LayerIndex> tails(const std::vector<char>& in, const std::vector<LayerIndex>& region,
                                Endpoint snk) const {
    std::vector<LayerIndex> out;
    for (LayerIndex v : region) {
      const auto& s = g_.succs(v);
      bool tail = snk ? std::find(s.begin(), s.end(), *snk) != s.end() : s.empty();
      if (!tail && !snk) {
        tail = std::none_of(s.begin(), s.end(), [&](LayerIndex u) { return in[u]; });
      }
      if (tail) out.push_back(v);
    }
    return out;
  }

  // Forward reachability inside the region from `starts`, never entering `blocked`.
  std::vector<char> reach_forward(const std::vector<char>& in, const std::vector<LayerIndex>& starts,
                                  std::optional<LayerIndex> blocked) const {
    std::vector<char> seen(g_.size(), 0);
    std::vector<LayerIndex> stack;
    for (LayerIndex s : starts)
      if (in[s] && s != blocked && !seen[s]) seen[s] = 1, stack.push_back(s);
    while (!stack.empty()) {
      LayerIndex v = stack.back();
      stack.pop_back();
      for (LayerIndex w : g_.succs(v))
        if (in[w] && !seen[w] && w != blocked) seen[w] = 1, stack.push_back(w);
    }
    return seen;
  }

  std::vector<char> reach_backward(const std::vector<char>& in, const std::vector<LayerIndex>& starts) const {
    std::vector<char> seen(g_.size(), 0);
    std::vector<LayerIndex> stack;
    for (LayerIndex s : starts)
      if (in[s] && !seen[s]) seen[s] = 1, stack.push_back(s);
    while (!stack.empty()) {
      LayerIndex v = stack.back();
      stack.pop_back();
      for (LayerIndex w : g_.preds(v))
        if (in[w] && !seen[w]) seen[w] = 1, stack.push_back(w);
    }
    return seen;
  }

  // Connected components of `nodes` under undirected adjacency, ordered by
  // the topological position of their first node.
  std::vector<std::vector<LayerIndex>> components(const std::vector<LayerIndex>& nodes) const {
    std::vector<char> in(g_.size(), 0);
    for (LayerIndex v : nodes) in[v] = 1;
    std::vector<char> seen(g_.size(), 0);
    std::vector<std::vector<LayerIndex>> out;
    for (LayerIndex root : nodes) {
      if (seen[root]) continue;
      std::vector<LayerIndex> comp, stack{root};
      seen[root] = 1;
      while (!stack.empty()) {
        LayerIndex v = stack.back();
        stack.pop_back();
        comp.push_back(v);
        auto visit = [&](LayerIndex w) {
          if (in[w] && !seen[w]) seen[w] = 1, stack.push_back(w);
        };
        for (LayerIndex w : g_.succs(v)) visit(w);
        for (LayerIndex w : g_.preds(v)) visit(w);
      }
      sort_topo(comp);
      out.push_back(std::move(comp));
    }
    return out;
  }

  void sort_topo(std::vector<LayerIndex>& v) const {
    std::sort(v.begin(), v.end(),
              [&](LayerIndex a, LayerIndex b) { return g_.topo_position(a) < g_.topo_position(b); });
  }

  std::shared_ptr<VirtualBlock> make_block(std::vector<LayerIndex> members, Endpoint fork, Endpoint join,
                                           bool bypass, bool opaque) {
    auto block = std::make_shared<VirtualBlock>();
    block->block_id = ++next_block_;
    sort_topo(members);
    block->members = std::move(members);
    block->entry = fork;
    block->exit = join;
    block->bypass = bypass;
    block->opaque = opaque;
    return block;
  }

  // `region` is sorted topologically and is entered only from `src` and left
  // only towards `snk`.
  ChainFlow decompose(const std::vector<LayerIndex>& region, Endpoint src, Endpoint snk) {
    std::vector<char> in(g_.size(), 0);
    for (LayerIndex v : region) in[v] = 1;
    const auto hs = heads(in, region, src);
    const auto ts = tails(in, region, snk);

    // Cut vertices: region nodes lying on every src->snk path.
    std::vector<LayerIndex> cuts;
    for (LayerIndex v : region) {
      auto seen = reach_forward(in, hs, v);
      bool bypassed = std::any_of(ts.begin(), ts.end(), [&](LayerIndex t) { return t != v && seen[t]; });
      if (!bypassed) cuts.push_back(v);
    }

    ChainFlow flow;
    if (cuts.empty()) {
      // No articulation: the region cannot be split into a chain.
      flow.elements.push_back({std::nullopt, make_block(region, src, snk, false, true)});
      return flow;
    }

    // Sections between consecutive points S, c1..cm, T.
    const std::size_t m = cuts.size();
    for (std::size_t i = 0; i <= m; ++i) {
      std::optional<LayerIndex> a = i == 0 ? std::nullopt : std::optional<LayerIndex>(cuts[i - 1]);
      std::optional<LayerIndex> b = i == m ? std::nullopt : std::optional<LayerIndex>(cuts[i]);
      if (a) flow.elements.push_back({*a, nullptr});

      auto fwd = a ? reach_forward(in, g_.succs(*a), std::nullopt) : reach_forward(in, hs, std::nullopt);
      auto bwd = b ? reach_backward(in, g_.preds(*b)) : reach_backward(in, ts);
      std::vector<LayerIndex> interior;
      for (LayerIndex v : region)
        if (fwd[v] && bwd[v] && v != a && v != b) interior.push_back(v);
      if (interior.empty()) continue;

      bool direct = false;
      if (a && b)
        direct = g_.has_edge(*a, *b);
      else if (!a && b)
        direct = std::find(hs.begin(), hs.end(), *b) != hs.end();
      else if (a && !b)
        direct = std::find(ts.begin(), ts.end(), *a) != ts.end();

      Endpoint fork = a ? a : src;
      Endpoint join = b ? b : snk;
      auto comps = components(interior);
      if (comps.size() == 1 && !direct) {
        flow.elements.push_back({std::nullopt, make_block(interior, fork, join, false, true)});
        continue;
      }
      auto block = make_block(interior, fork, join, direct, false);
      for (const auto& comp : comps) block->internal_flows.push_back(decompose(comp, fork, join));
      flow.elements.push_back({std::nullopt, std::move(block)});
    }
    return flow;
  }

  const ModelGraph& g_;
  int next_block_ = 0;
};

}  // namespace detail

/// Top-level chain flow of `g`: maximal parallel regions between consecutive
/// articulation layers become virtual blocks, recursively.
inline ChainFlow cluster_virtual_blocks(const ModelGraph& g) { return detail::Clusterer(g).run(); }

/// A boundary between two consecutive elements of a chain flow.
struct CutCandidate {
  std::size_t after_element = 0;  ///< elements [0, after_element] form the device prefix
  std::vector<Edge> severed;      ///< graph edges from the prefix to the suffix
};

/// Every interior boundary of `flow` with the edges it severs.
inline std::vector<CutCandidate> enumerate_cut_candidates(const ModelGraph& g, const ChainFlow& flow) {
  std::vector<CutCandidate> out;
  if (flow.size() < 2) return out;
  std::vector<int> position(g.size(), -1);
  for (std::size_t k = 0; k < flow.size(); ++k)
    for (LayerIndex v : element_layers(flow.elements[k])) position[v] = static_cast<int>(k);
  for (std::size_t k = 0; k + 1 < flow.size(); ++k) {
    CutCandidate c{k, {}};
    for (const auto& e : g.edges()) {
      int pf = position[e.from], pt = position[e.to];
      if (pf >= 0 && pt >= 0 && pf <= static_cast<int>(k) && pt > static_cast<int>(k)) c.severed.push_back(e);
    }
    out.push_back(std::move(c));
  }
  return out;
}

/// Human-readable nesting, e.g. "[v1, b1{[v2, v3], [v4]}, v9]".
inline std::string describe(const ModelGraph& g, const ChainFlow& flow) {
  std::string s = "[";
  for (std::size_t k = 0; k < flow.size(); ++k) {
    if (k) s += ", ";
    const auto& el = flow.elements[k];
    if (!el.is_block()) {
      s += g.layer(*el.layer).id;
      continue;
    }
    s += el.block->name();
    if (el.block->opaque) {
      s += "<opaque>";
      continue;
    }
    s += "{";
    for (std::size_t f = 0; f < el.block->internal_flows.size(); ++f) {
      if (f) s += ", ";
      s += describe(g, el.block->internal_flows[f]);
    }
    if (el.block->bypass) s += el.block->internal_flows.empty() ? "bypass" : ", bypass";
    s += "}";
  }
  return s + "]";
}

}  // namespace coach

#endif  // COACH_GRAPH_HPP
