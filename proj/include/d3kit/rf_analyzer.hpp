#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "d3kit/dense_blocks.hpp"

namespace d3kit {

// Sorted, duplicate-free integer offsets along one spatial axis, measured in
// input pixels relative to the output position. 2-D footprints are the
// Cartesian product of the per-axis sets.
class CoverageSet {
 public:
  CoverageSet() = default;
  explicit CoverageSet(std::vector<std::int64_t> offsets);

  const std::vector<std::int64_t>& offsets() const { return offsets_; }
  bool empty() const { return offsets_.empty(); }
  std::size_t size() const { return offsets_.size(); }
  std::int64_t min() const { return offsets_.front(); }
  std::int64_t max() const { return offsets_.back(); }
  // Largest |offset|.
  std::int64_t half_width() const;
  std::size_t hull_width() const;
  bool contains(std::int64_t v) const;

  // { a + b : a in this, b in taps }
  CoverageSet minkowski(const std::vector<std::int64_t>& taps) const;
  CoverageSet united(const CoverageSet& other) const;
  CoverageSet shifted(std::int64_t by) const;

  bool operator==(const CoverageSet&) const = default;

 private:
  std::vector<std::int64_t> offsets_;
};

// Hull minus coverage. Throws ArgumentError on an empty set.
std::vector<std::int64_t> blind_spots(const CoverageSet& cov);

enum class Axis { H, W };

enum class EdgeKind {
  Conv,      // kernel taps (k - 1)/2 * dilation either side; stride >= 1
  Identity,  // concatenation or channel selection
  Pool,      // 2x2 average pooling, stride 2
  Upsample,  // bilinear upsampling by `factor`
};

struct GraphNode {
  std::string name;
  std::size_t layer = 0;          // producing layer, 0 for inputs
  std::size_t channel_begin = 0;  // channel slice this node occupies
  std::size_t channel_end = 0;
  std::int64_t stride = 1;        // input pixels per node pixel
};

struct GraphEdge {
  std::size_t src = 0;
  std::size_t dst = 0;
  EdgeKind kind = EdgeKind::Identity;
  std::size_t kernel = 1;
  std::size_t dilation = 1;
  std::size_t factor = 1;  // conv/pool stride or upsampling factor
};

// DAG of feature groups. Nodes are added in topological order; edges must
// point forward.
class LayerGraph {
 public:
  std::size_t add_node(GraphNode node);
  void add_edge(GraphEdge edge);
  void add_edge(const std::string& src, const std::string& dst, EdgeKind kind,
                std::size_t kernel = 1, std::size_t dilation = 1,
                std::size_t factor = 1);

  const std::vector<GraphNode>& nodes() const { return nodes_; }
  const std::vector<GraphEdge>& edges() const { return edges_; }
  std::size_t find(const std::string& name) const;  // LookupError if absent
  std::optional<std::size_t> try_find(const std::string& name) const;
  std::vector<const GraphEdge*> incoming(std::size_t node) const;

  // Throws ConfigError unless every node except the first is reachable
  // from node 0.
  void validate() const;

 private:
  std::vector<GraphNode> nodes_;
  std::vector<GraphEdge> edges_;
};

// Tap offsets of an edge in source-node pixels.
std::vector<std::int64_t> edge_taps(const GraphEdge& edge);

// Node names: "x0" for the input and "x1".."xL" for layer outputs.
LayerGraph build_graph(const D2Config& cfg, std::size_t in_channels = 1,
                       Axis axis = Axis::H);
// Node names: "input", then per block m: "b<m>.x0" (block input after the
// optional bottleneck), "b<m>.x1".."b<m>.x<L>", "b<m>.out" (reduced output).
LayerGraph build_graph(const D3Config& cfg, std::size_t in_channels = 1,
                       Axis axis = Axis::H);

// Appends the nodes of a D3 block fed by the existing node `source`, with
// names prefixed by `prefix`. Returns the name of the block output node.
std::string append_d3_graph(LayerGraph& graph, const D3Config& cfg,
                            std::size_t in_channels, const std::string& source,
                            const std::string& prefix, Axis axis = Axis::H);

// Input offsets influencing `node` at position 0, along every path or only
// along edges whose source is `via`.
CoverageSet coverage(const LayerGraph& graph, const std::string& node,
                     const std::optional<std::string>& via = std::nullopt);

struct GroupCoverage {
  std::string source;
  std::size_t dilation = 1;
  CoverageSet coverage;
  std::vector<std::int64_t> blind_spots;
  bool alias = false;
};

struct LayerCoverage {
  std::string layer;
  CoverageSet coverage;
  std::vector<GroupCoverage> groups;
};

struct BlindSpotReport {
  nlohmann::ordered_json config;
  std::vector<LayerCoverage> layers;
  bool alias = false;
};

// One entry per node fed by a spatial (kernel > 1) convolution, one group
// per such incoming edge.
BlindSpotReport analyze(const LayerGraph& graph);
BlindSpotReport analyze(const D2Config& cfg, std::size_t in_channels = 1);
BlindSpotReport analyze(const D3Config& cfg, std::size_t in_channels = 1);

nlohmann::ordered_json to_json(const BlindSpotReport& report);
std::string to_csv(const BlindSpotReport& report);

// Brute-force oracle. Runs the numeric block with every weight set to one
// and identity psi on an input wide enough to keep borders out of reach,
// perturbs one position at a time and records which perturbations reach
// the centre output.
struct D2Footprints {
  std::vector<CoverageSet> layers;  // x_1..x_L
};
struct D3Footprints {
  std::vector<std::vector<CoverageSet>> layers;  // [block][layer]
  CoverageSet output;
};

D2Footprints impulse_footprints(const D2Config& cfg, std::size_t in_channels = 1,
                                Axis axis = Axis::H);
D3Footprints impulse_footprints(const D3Config& cfg, std::size_t in_channels = 1,
                                Axis axis = Axis::H);

// Footprint of the last layer (D2) or of the block output (D3).
CoverageSet impulse_footprint(const D2Config& cfg, std::size_t in_channels = 1);
CoverageSet impulse_footprint(const D3Config& cfg, std::size_t in_channels = 1);

}  // namespace d3kit
