#include <doctest.h>

#include <string>
#include <vector>

#include "d3kit/errors.hpp"
#include "d3kit/rf_analyzer.hpp"

using namespace d3kit;

namespace {

D2Config d2(std::size_t layers, DilationMode mode) {
  return D2Config{layers, 2, 3, 3, mode};
}

const LayerCoverage& layer_named(const BlindSpotReport& r, const std::string& name) {
  for (const auto& l : r.layers) {
    if (l.layer == name) return l;
  }
  throw LookupError(name);
}

}  // namespace

TEST_CASE("coverage set algebra") {
  const CoverageSet a({3, -1, 3, 0});
  CHECK(a.offsets() == std::vector<std::int64_t>{-1, 0, 3});
  CHECK(a.half_width() == 3);
  CHECK(a.hull_width() == 5);
  CHECK(a.minkowski({-2, 2}).offsets() == std::vector<std::int64_t>{-3, -2, 1, 2, 5});
  CHECK(a.united(CoverageSet({7})).max() == 7);
  CHECK(a.shifted(2).min() == 1);
  CHECK(blind_spots(a) == std::vector<std::int64_t>{1, 2});
  CHECK(blind_spots(CoverageSet({0})).empty());
  CHECK_THROWS_AS(blind_spots(CoverageSet()), ArgumentError);
}

TEST_CASE("edge taps") {
  CHECK(edge_taps(GraphEdge{0, 1, EdgeKind::Conv, 3, 4, 1}) ==
        std::vector<std::int64_t>{-4, 0, 4});
  CHECK(edge_taps(GraphEdge{0, 1, EdgeKind::Conv, 1, 8, 1}) ==
        std::vector<std::int64_t>{0});
  CHECK(edge_taps(GraphEdge{0, 1, EdgeKind::Pool, 1, 1, 2}) ==
        std::vector<std::int64_t>{0, 1});
  CHECK(edge_taps(GraphEdge{0, 1, EdgeKind::Upsample, 1, 1, 2}) ==
        std::vector<std::int64_t>{-1, 0});
}

TEST_CASE("graph construction errors") {
  LayerGraph g;
  g.add_node(GraphNode{"in", 0, 0, 1, 1});
  g.add_node(GraphNode{"a", 1, 0, 1, 1});
  CHECK_THROWS_AS(g.add_node(GraphNode{"a", 1, 0, 1, 1}), ConfigError);
  CHECK_THROWS_AS(g.add_edge("a", "in", EdgeKind::Identity), ConfigError);
  CHECK_THROWS_AS(g.add_edge("in", "a", EdgeKind::Conv, 2), ConfigError);
  CHECK_THROWS_AS(g.add_edge("in", "zz", EdgeKind::Identity), LookupError);
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g.add_edge("in", "a", EdgeKind::Conv, 3, 2);
  CHECK_NOTHROW(g.validate());
  CHECK(coverage(g, "a").offsets() == std::vector<std::int64_t>{-2, 0, 2});
  CHECK_THROWS_AS(coverage(g, "a", std::string("a")), LookupError);
}

TEST_CASE("strided nodes scale downstream taps") {
  LayerGraph g;
  g.add_node(GraphNode{"in", 0, 0, 1, 1});
  g.add_node(GraphNode{"pooled", 1, 0, 1, 2});
  g.add_node(GraphNode{"conv", 2, 0, 1, 2});
  g.add_edge("in", "pooled", EdgeKind::Pool, 1, 1, 2);
  g.add_edge("pooled", "conv", EdgeKind::Conv, 3, 1);
  CHECK(coverage(g, "conv").offsets() == std::vector<std::int64_t>{-2, -1, 0, 1, 2, 3});
}

TEST_CASE("multi mode has no blind spots and doubles its reach") {
  for (std::size_t layers = 1; layers <= 5; ++layers) {
    const BlindSpotReport r = analyze(d2(layers, DilationMode::Multi));
    CHECK_FALSE(r.alias);
    for (std::size_t l = 1; l <= layers; ++l) {
      const auto& lc = layer_named(r, "x" + std::to_string(l));
      CHECK(lc.coverage.half_width() == (std::int64_t{1} << l) - 1);
      CHECK(blind_spots(lc.coverage).empty());
      CHECK(lc.groups.size() == l);
      for (const auto& g : lc.groups) CHECK(g.blind_spots.empty());
    }
  }
}

TEST_CASE("layer 3 group dilations in multi mode") {
  const BlindSpotReport r = analyze(d2(3, DilationMode::Multi));
  const auto& l3 = layer_named(r, "x3");
  std::vector<std::size_t> d;
  for (const auto& g : l3.groups) d.push_back(g.dilation);
  CHECK(d == std::vector<std::size_t>{1, 2, 4});
}

TEST_CASE("standard dilation leaves blind spots from layer 2 on") {
  for (std::size_t layers = 2; layers <= 5; ++layers) {
    const BlindSpotReport r = analyze(d2(layers, DilationMode::StandardDilated));
    CHECK(r.alias);
    for (std::size_t l = 2; l <= layers; ++l) {
      const auto& lc = layer_named(r, "x" + std::to_string(l));
      std::size_t aliased = 0;
      for (const auto& g : lc.groups) aliased += g.alias;
      CHECK(aliased >= 1);
    }
  }
  const BlindSpotReport r3 = analyze(d2(3, DilationMode::StandardDilated));
  const auto& l3 = layer_named(r3, "x3");
  CHECK(l3.groups.front().source == "x0");
  CHECK(l3.groups.front().coverage.offsets() == std::vector<std::int64_t>{-4, 0, 4});
  CHECK(l3.groups.front().blind_spots == std::vector<std::int64_t>{-3, -2, -1, 1, 2, 3});
}

TEST_CASE("undilated reach grows linearly") {
  const BlindSpotReport r = analyze(d2(5, DilationMode::None));
  for (std::size_t l = 1; l <= 5; ++l) {
    CHECK(layer_named(r, "x" + std::to_string(l)).coverage.half_width() ==
          static_cast<std::int64_t>(l));
  }
  CHECK_FALSE(r.alias);
}

TEST_CASE("symbolic coverage equals the impulse footprint for D2") {
  for (auto mode : {DilationMode::Multi, DilationMode::StandardDilated, DilationMode::None}) {
    for (std::size_t layers = 1; layers <= 5; ++layers) {
      const D2Config cfg = d2(layers, mode);
      const LayerGraph g = build_graph(cfg);
      const D2Footprints fp = impulse_footprints(cfg);
      REQUIRE(fp.layers.size() == layers);
      for (std::size_t l = 1; l <= layers; ++l) {
        INFO(to_string(mode) << " L=" << layers << " l=" << l);
        CHECK(coverage(g, "x" + std::to_string(l)) == fp.layers[l - 1]);
      }
    }
  }
}

TEST_CASE("symbolic coverage equals the impulse footprint for D3") {
  const D3Config plain{2, D2Config{3, 2}, 0, Reduction::none()};
  const D3Config lastn{2, D2Config{3, 2, 3, 3, DilationMode::StandardDilated}, 0,
                       Reduction::last(1)};
  const D3Config squeezed{3, D2Config{2, 2}, 8, Reduction::compress(0.5)};
  for (const D3Config& cfg : {plain, lastn, squeezed}) {
    const LayerGraph g = build_graph(cfg, 3);
    const D3Footprints fp = impulse_footprints(cfg, 3);
    for (std::size_t m = 0; m < cfg.blocks; ++m) {
      for (std::size_t l = 1; l <= cfg.inner.layers; ++l) {
        const std::string node =
            "b" + std::to_string(m + 1) + ".x" + std::to_string(l);
        CHECK(coverage(g, node) == fp.layers[m][l - 1]);
      }
    }
    CHECK(coverage(g, "b" + std::to_string(cfg.blocks) + ".out") == fp.output);
  }
}

TEST_CASE("D3 reach adds up across blocks") {
  const D3Config cfg{2, D2Config{3, 2}, 0, Reduction::none()};
  CHECK(coverage(build_graph(cfg), "b2.out").half_width() == 14);
  CHECK(impulse_footprint(cfg).half_width() == 14);
}

TEST_CASE("axes are analysed independently") {
  const D2Config cfg{3, 2, 3, 1, DilationMode::Multi};
  CHECK(coverage(build_graph(cfg, 1, Axis::H), "x3").half_width() == 7);
  CHECK(coverage(build_graph(cfg, 1, Axis::W), "x3").offsets() ==
        std::vector<std::int64_t>{0});
  CHECK(impulse_footprints(cfg, 1, Axis::W).layers.back().offsets() ==
        std::vector<std::int64_t>{0});
}

TEST_CASE("report serialization") {
  const BlindSpotReport r = analyze(d2(2, DilationMode::StandardDilated));
  const auto j = to_json(r);
  CHECK(j["config"]["mode"] == "standard");
  CHECK(j["alias"] == true);
  CHECK(j["layers"].size() == 2);
  CHECK(j["layers"][1]["groups"][0]["blind_spots"] ==
        nlohmann::ordered_json::array({-1, 1}));
  const std::string csv = to_csv(r);
  CHECK(csv.rfind("layer,source,dilation", 0) == 0);
  CHECK(csv.find("x2,x0,2,2,-2 0 2,-1 1,true") != std::string::npos);
}
