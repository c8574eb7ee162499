#include "d3kit/rf_analyzer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "d3kit/errors.hpp"

namespace d3kit {

CoverageSet::CoverageSet(std::vector<std::int64_t> offsets)
    : offsets_(std::move(offsets)) {
  std::sort(offsets_.begin(), offsets_.end());
  offsets_.erase(std::unique(offsets_.begin(), offsets_.end()), offsets_.end());
}

std::int64_t CoverageSet::half_width() const {
  if (offsets_.empty()) return 0;
  return std::max(std::abs(offsets_.front()), std::abs(offsets_.back()));
}

std::size_t CoverageSet::hull_width() const {
  if (offsets_.empty()) return 0;
  return static_cast<std::size_t>(offsets_.back() - offsets_.front() + 1);
}

bool CoverageSet::contains(std::int64_t v) const {
  return std::binary_search(offsets_.begin(), offsets_.end(), v);
}

CoverageSet CoverageSet::minkowski(const std::vector<std::int64_t>& taps) const {
  std::vector<std::int64_t> out;
  out.reserve(offsets_.size() * taps.size());
  for (std::int64_t a : offsets_) {
    for (std::int64_t t : taps) out.push_back(a + t);
  }
  return CoverageSet(std::move(out));
}

CoverageSet CoverageSet::united(const CoverageSet& other) const {
  std::vector<std::int64_t> out;
  std::set_union(offsets_.begin(), offsets_.end(), other.offsets_.begin(),
                 other.offsets_.end(), std::back_inserter(out));
  CoverageSet s;
  s.offsets_ = std::move(out);
  return s;
}

CoverageSet CoverageSet::shifted(std::int64_t by) const {
  CoverageSet s = *this;
  for (auto& v : s.offsets_) v += by;
  return s;
}

std::vector<std::int64_t> blind_spots(const CoverageSet& cov) {
  if (cov.empty()) throw ArgumentError("blind_spots of an empty coverage set");
  std::vector<std::int64_t> holes;
  const auto& o = cov.offsets();
  for (std::size_t i = 1; i < o.size(); ++i) {
    for (std::int64_t v = o[i - 1] + 1; v < o[i]; ++v) holes.push_back(v);
  }
  return holes;
}

std::size_t LayerGraph::add_node(GraphNode node) {
  if (try_find(node.name)) {
    throw ConfigError("duplicate graph node '" + node.name + "'");
  }
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

void LayerGraph::add_edge(GraphEdge edge) {
  if (edge.src >= nodes_.size() || edge.dst >= nodes_.size()) {
    throw LookupError("graph edge references a missing node");
  }
  if (edge.src >= edge.dst) {
    throw ConfigError("graph edge " + nodes_[edge.src].name + " -> " +
                      nodes_[edge.dst].name + " does not point forward");
  }
  if (edge.kind == EdgeKind::Conv && edge.kernel % 2 == 0) {
    throw ConfigError("conv edge kernel must be odd");
  }
  if (edge.dilation == 0 || edge.factor == 0) {
    throw ConfigError("edge dilation and factor must be >= 1");
  }
  edges_.push_back(edge);
}

void LayerGraph::add_edge(const std::string& src, const std::string& dst,
                          EdgeKind kind, std::size_t kernel,
                          std::size_t dilation, std::size_t factor) {
  add_edge(GraphEdge{find(src), find(dst), kind, kernel, dilation, factor});
}

std::optional<std::size_t> LayerGraph::try_find(const std::string& name) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t LayerGraph::find(const std::string& name) const {
  if (auto i = try_find(name)) return *i;
  throw LookupError("no graph node named '" + name + "'");
}

std::vector<const GraphEdge*> LayerGraph::incoming(std::size_t node) const {
  std::vector<const GraphEdge*> in;
  for (const auto& e : edges_) {
    if (e.dst == node) in.push_back(&e);
  }
  return in;
}

void LayerGraph::validate() const {
  if (nodes_.empty()) throw ConfigError("empty layer graph");
  std::vector<bool> reached(nodes_.size(), false);
  reached[0] = true;
  // edges point forward, so one pass in node order settles reachability
  for (std::size_t n = 1; n < nodes_.size(); ++n) {
    for (const GraphEdge* e : incoming(n)) {
      if (reached[e->src]) reached[n] = true;
    }
    if (!reached[n]) {
      throw ConfigError("graph node '" + nodes_[n].name +
                        "' is not reachable from the input");
    }
  }
}

std::vector<std::int64_t> edge_taps(const GraphEdge& edge) {
  switch (edge.kind) {
    case EdgeKind::Identity:
      return {0};
    case EdgeKind::Conv: {
      const auto r = static_cast<std::int64_t>(edge.kernel / 2);
      const auto d = static_cast<std::int64_t>(edge.dilation);
      std::vector<std::int64_t> taps;
      for (std::int64_t t = -r; t <= r; ++t) taps.push_back(t * d);
      return taps;
    }
    case EdgeKind::Pool:
      return {0, 1};
    case EdgeKind::Upsample: {
      if (edge.factor == 1) return {0};
      // destination pixel 0 samples source coordinate 0.5 / f - 0.5 < 0
      const double src = 0.5 / static_cast<double>(edge.factor) - 0.5;
      const auto i0 = static_cast<std::int64_t>(std::floor(src));
      return {i0, i0 + 1};
    }
  }
  return {0};
}

namespace {

std::size_t axis_extent(std::size_t kh, std::size_t kw, Axis axis) {
  return axis == Axis::H ? kh : kw;
}

GraphNode make_node(std::string name, std::size_t layer, std::size_t begin,
                    std::size_t end, std::int64_t stride = 1) {
  return GraphNode{std::move(name), layer, begin, end, stride};
}

// Adds the L layer nodes of a D2 block named <prefix>x1..x<L>, fed from the
// existing node <prefix>x0 with in_channels channels.
void add_d2_layers(LayerGraph& g, const D2Config& cfg, std::size_t in_channels,
                   const std::string& prefix, std::size_t layer_offset,
                   std::int64_t stride, Axis axis) {
  const std::size_t kernel = axis_extent(cfg.kernel_h, cfg.kernel_w, axis);
  for (std::size_t l = 1; l <= cfg.layers; ++l) {
    const std::size_t begin = in_channels + (l - 1) * cfg.growth;
    g.add_node(make_node(prefix + "x" + std::to_string(l), layer_offset + l,
                         begin, begin + cfg.growth, stride));
    for (std::size_t i = 0; i < l; ++i) {
      std::size_t d = 1;
      switch (cfg.mode) {
        case DilationMode::Multi:
          d = std::size_t{1} << i;
          break;
        case DilationMode::StandardDilated:
          d = std::size_t{1} << (l - 1);
          break;
        case DilationMode::None:
          d = 1;
          break;
      }
      g.add_edge(prefix + "x" + std::to_string(i), prefix + "x" + std::to_string(l),
                 EdgeKind::Conv, kernel, d);
    }
  }
}

}  // namespace

LayerGraph build_graph(const D2Config& cfg, std::size_t in_channels, Axis axis) {
  cfg.validate();
  if (in_channels == 0) throw ConfigError("D2 input needs >= 1 channel");
  LayerGraph g;
  g.add_node(make_node("x0", 0, 0, in_channels));
  add_d2_layers(g, cfg, in_channels, "", 0, 1, axis);
  g.validate();
  return g;
}

std::string append_d3_graph(LayerGraph& g, const D3Config& cfg,
                            std::size_t in_channels, const std::string& source,
                            const std::string& prefix, Axis axis) {
  const auto plan = plan_d3(cfg, in_channels);
  const std::int64_t stride = g.nodes()[g.find(source)].stride;
  std::vector<std::string> features{source};
  std::size_t offset = in_channels;
  for (std::size_t m = 0; m < cfg.blocks; ++m) {
    const BlockPlan& p = plan[m];
    const std::string block = prefix + "b" + std::to_string(m + 1) + ".";
    const std::size_t first_layer = m * cfg.inner.layers;
    g.add_node(make_node(block + "x0", first_layer, 0, p.d2_in_channels, stride));
    for (const auto& f : features) {
      g.add_edge(f, block + "x0",
                 p.has_bottleneck ? EdgeKind::Conv : EdgeKind::Identity);
    }
    add_d2_layers(g, cfg.inner, p.d2_in_channels, block, first_layer, stride,
                  axis);
    const std::string out = block + "out";
    g.add_node(make_node(out, first_layer + cfg.inner.layers, offset,
                         offset + p.out_channels, stride));
    offset += p.out_channels;
    switch (cfg.reduction.kind) {
      case Reduction::Kind::None:
      case Reduction::Kind::Compress:
        for (std::size_t l = 0; l <= cfg.inner.layers; ++l) {
          g.add_edge(block + "x" + std::to_string(l), out,
                     cfg.reduction.kind == Reduction::Kind::None
                         ? EdgeKind::Identity
                         : EdgeKind::Conv);
        }
        break;
      case Reduction::Kind::LastN:
        for (std::size_t l = cfg.inner.layers - cfg.reduction.last_n + 1;
             l <= cfg.inner.layers; ++l) {
          g.add_edge(block + "x" + std::to_string(l), out, EdgeKind::Identity);
        }
        break;
    }
    features.push_back(out);
  }
  return features.back();
}

LayerGraph build_graph(const D3Config& cfg, std::size_t in_channels, Axis axis) {
  LayerGraph g;
  g.add_node(make_node("input", 0, 0, in_channels));
  append_d3_graph(g, cfg, in_channels, "input", "", axis);
  g.validate();
  return g;
}

namespace {

// Coverage of every node at position 0, in node order.
std::vector<CoverageSet> all_coverages(const LayerGraph& graph) {
  const auto& nodes = graph.nodes();
  std::vector<CoverageSet> cov(nodes.size());
  cov[0] = CoverageSet({0});
  for (std::size_t n = 1; n < nodes.size(); ++n) {
    for (const GraphEdge* e : graph.incoming(n)) {
      std::vector<std::int64_t> taps = edge_taps(*e);
      for (auto& t : taps) t *= nodes[e->src].stride;
      cov[n] = cov[n].united(cov[e->src].minkowski(taps));
    }
  }
  return cov;
}

CoverageSet via_edge(const LayerGraph& graph, const std::vector<CoverageSet>& cov,
                     const GraphEdge& e) {
  std::vector<std::int64_t> taps = edge_taps(e);
  for (auto& t : taps) t *= graph.nodes()[e.src].stride;
  return cov[e.src].minkowski(taps);
}

}  // namespace

CoverageSet coverage(const LayerGraph& graph, const std::string& node,
                     const std::optional<std::string>& via) {
  const std::size_t target = graph.find(node);
  const auto cov = all_coverages(graph);
  if (!via) return cov[target];
  const std::size_t source = graph.find(*via);
  CoverageSet result;
  bool found = false;
  for (const GraphEdge* e : graph.incoming(target)) {
    if (e->src != source) continue;
    result = result.united(via_edge(graph, cov, *e));
    found = true;
  }
  if (!found) {
    throw LookupError("node '" + node + "' has no input from '" + *via + "'");
  }
  return result;
}

BlindSpotReport analyze(const LayerGraph& graph) {
  graph.validate();
  const auto cov = all_coverages(graph);
  BlindSpotReport report;
  for (std::size_t n = 1; n < graph.nodes().size(); ++n) {
    LayerCoverage layer{graph.nodes()[n].name, cov[n], {}};
    for (const GraphEdge* e : graph.incoming(n)) {
      if (e->kind != EdgeKind::Conv || e->kernel <= 1) continue;
      GroupCoverage group;
      group.source = graph.nodes()[e->src].name;
      group.dilation = e->dilation;
      group.coverage = via_edge(graph, cov, *e);
      group.blind_spots = blind_spots(group.coverage);
      group.alias = !group.blind_spots.empty();
      report.alias = report.alias || group.alias;
      layer.groups.push_back(std::move(group));
    }
    if (!layer.groups.empty()) report.layers.push_back(std::move(layer));
  }
  return report;
}

BlindSpotReport analyze(const D2Config& cfg, std::size_t in_channels) {
  BlindSpotReport r = analyze(build_graph(cfg, in_channels));
  r.config = {{"block", "d2"},
              {"L", cfg.layers},
              {"k", cfg.growth},
              {"kernel", {cfg.kernel_h, cfg.kernel_w}},
              {"mode", to_string(cfg.mode)},
              {"in_channels", in_channels}};
  return r;
}

BlindSpotReport analyze(const D3Config& cfg, std::size_t in_channels) {
  BlindSpotReport r = analyze(build_graph(cfg, in_channels));
  nlohmann::ordered_json reduction;
  switch (cfg.reduction.kind) {
    case Reduction::Kind::None:
      reduction = "none";
      break;
    case Reduction::Kind::Compress:
      reduction = {{"compress", cfg.reduction.rate}};
      break;
    case Reduction::Kind::LastN:
      reduction = {{"last", cfg.reduction.last_n}};
      break;
  }
  r.config = {{"block", "d3"},
              {"M", cfg.blocks},
              {"L", cfg.inner.layers},
              {"k", cfg.inner.growth},
              {"B", cfg.bottleneck_channels},
              {"reduction", reduction},
              {"kernel", {cfg.inner.kernel_h, cfg.inner.kernel_w}},
              {"mode", to_string(cfg.inner.mode)},
              {"in_channels", in_channels}};
  return r;
}

nlohmann::ordered_json to_json(const BlindSpotReport& report) {
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (const auto& l : report.layers) {
    nlohmann::ordered_json groups = nlohmann::ordered_json::array();
    for (const auto& g : l.groups) {
      groups.push_back({{"source", g.source},
                        {"dilation", g.dilation},
                        {"coverage", g.coverage.offsets()},
                        {"blind_spots", g.blind_spots}});
    }
    layers.push_back({{"layer", l.layer},
                      {"half_width", l.coverage.half_width()},
                      {"coverage", l.coverage.offsets()},
                      {"groups", std::move(groups)}});
  }
  return {{"config", report.config},
          {"layers", std::move(layers)},
          {"alias", report.alias}};
}

std::string to_csv(const BlindSpotReport& report) {
  auto join = [](const std::vector<std::int64_t>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
    return os.str();
  };
  std::ostringstream os;
  os << "layer,source,dilation,half_width,coverage,blind_spots,alias\n";
  for (const auto& l : report.layers) {
    for (const auto& g : l.groups) {
      os << l.layer << ',' << g.source << ',' << g.dilation << ','
         << g.coverage.half_width() << ',' << join(g.coverage.offsets()) << ','
         << join(g.blind_spots) << ',' << (g.alias ? "true" : "false") << '\n';
    }
  }
  return os.str();
}

namespace {

// Upper bound on the half-width of one D2 block: each layer adds at most
// r * 2^(l-1) in either dilated mode.
std::size_t d2_reach_bound(const D2Config& cfg, Axis axis) {
  const std::size_t r = axis_extent(cfg.kernel_h, cfg.kernel_w, axis) / 2;
  if (cfg.mode == DilationMode::None) return cfg.layers * r;
  return ((std::size_t{1} << cfg.layers) - 1) * r;
}

Shape probe_shape(std::size_t channels, std::size_t length, Axis axis) {
  return axis == Axis::H ? Shape{1, channels, length, 1}
                         : Shape{1, channels, 1, length};
}

Tensor impulse(std::size_t channels, std::size_t length, std::size_t pos,
               Axis axis) {
  Tensor t(probe_shape(channels, length, axis));
  for (std::size_t c = 0; c < channels; ++c) t.plane(0, c)[pos] = 1.0;
  return t;
}

bool centre_nonzero(const Tensor& t, std::size_t centre) {
  for (std::size_t c = 0; c < t.shape().c; ++c) {
    if (t.plane(0, c)[centre] != 0.0) return true;
  }
  return false;
}

}  // namespace

D2Footprints impulse_footprints(const D2Config& cfg, std::size_t in_channels,
                                Axis axis) {
  cfg.validate();
  std::mt19937_64 rng(0);
  D2Weights w = init_d2(cfg, in_channels, rng);
  fill_weights(w, 1.0);
  const std::size_t reach = d2_reach_bound(cfg, axis);
  const std::size_t length = 2 * (reach + 2) + 1;
  const std::size_t centre = length / 2;
  std::vector<std::vector<std::int64_t>> hits(cfg.layers);
  for (std::size_t pos = 0; pos < length; ++pos) {
    const D2Result r = d2_forward(cfg, impulse(in_channels, length, pos, axis),
                                  w, NormKind::Identity);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      if (centre_nonzero(r.state.layers[l], centre)) {
        hits[l].push_back(static_cast<std::int64_t>(pos) -
                          static_cast<std::int64_t>(centre));
      }
    }
  }
  D2Footprints fp;
  for (auto& h : hits) fp.layers.emplace_back(std::move(h));
  return fp;
}

D3Footprints impulse_footprints(const D3Config& cfg, std::size_t in_channels,
                                Axis axis) {
  cfg.validate();
  std::mt19937_64 rng(0);
  D3Weights w = init_d3(cfg, in_channels, rng);
  fill_weights(w, 1.0);
  const std::size_t reach = cfg.blocks * d2_reach_bound(cfg.inner, axis);
  const std::size_t length = 2 * (reach + 2) + 1;
  const std::size_t centre = length / 2;
  std::vector<std::vector<std::vector<std::int64_t>>> hits(
      cfg.blocks, std::vector<std::vector<std::int64_t>>(cfg.inner.layers));
  std::vector<std::int64_t> out_hits;
  for (std::size_t pos = 0; pos < length; ++pos) {
    const D3Result r = d3_forward(cfg, impulse(in_channels, length, pos, axis),
                                  w, NormKind::Identity);
    const auto offset =
        static_cast<std::int64_t>(pos) - static_cast<std::int64_t>(centre);
    for (std::size_t m = 0; m < cfg.blocks; ++m) {
      for (std::size_t l = 0; l < cfg.inner.layers; ++l) {
        if (centre_nonzero(r.blocks[m].layers[l], centre)) {
          hits[m][l].push_back(offset);
        }
      }
    }
    if (centre_nonzero(r.output, centre)) out_hits.push_back(offset);
  }
  D3Footprints fp;
  for (auto& block : hits) {
    std::vector<CoverageSet> layers;
    for (auto& h : block) layers.emplace_back(std::move(h));
    fp.layers.push_back(std::move(layers));
  }
  fp.output = CoverageSet(std::move(out_hits));
  return fp;
}

CoverageSet impulse_footprint(const D2Config& cfg, std::size_t in_channels) {
  return impulse_footprints(cfg, in_channels).layers.back();
}

CoverageSet impulse_footprint(const D3Config& cfg, std::size_t in_channels) {
  return impulse_footprints(cfg, in_channels).output;
}

}  // namespace d3kit
