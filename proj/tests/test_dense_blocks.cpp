#include <doctest.h>

#include <random>
#include <vector>

#include "d3kit/dense_blocks.hpp"
#include "d3kit/errors.hpp"
#include "d3kit/grad_check.hpp"
#include "helpers.hpp"

using namespace d3kit;
using d3kit::test::randn;
using d3kit::test::rel_err;

namespace {

D2Weights weights_for(const D2Config& cfg, std::size_t c0, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return init_d2(cfg, c0, rng);
}

D3Weights weights_for(const D3Config& cfg, std::size_t c0, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return init_d3(cfg, c0, rng);
}

Tensor layer_input(const BlockState& st, std::size_t l) {
  std::vector<Tensor> parts{st.input};
  for (std::size_t i = 0; i + 1 < l; ++i) parts.push_back(st.layers[i]);
  return concat_channels(parts);
}

NormParams params_of(const ConvUnit& u) {
  return NormParams{u.norm.gamma.values(), u.norm.beta.values(), 1e-5};
}

}  // namespace

TEST_CASE("dilation modes parse and print") {
  for (auto m : {DilationMode::Multi, DilationMode::StandardDilated, DilationMode::None}) {
    CHECK(parse_dilation_mode(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_dilation_mode("wide"), ConfigError);
}

TEST_CASE("D2 config validation") {
  CHECK_THROWS_AS((D2Config{0, 2}).validate(), ConfigError);
  CHECK_THROWS_AS((D2Config{2, 0}).validate(), ConfigError);
  CHECK_THROWS_AS((D2Config{2, 2, 2, 3}).validate(), ConfigError);
}

TEST_CASE("layer groups follow the dilation mode") {
  const D2Config multi{3, 2, 3, 3, DilationMode::Multi};
  CHECK(layer_groups(multi, 3, 3) ==
        std::vector<DilationGroup>{{0, 3, 1}, {3, 5, 2}, {5, 7, 4}});
  D2Config standard = multi;
  standard.mode = DilationMode::StandardDilated;
  // uniform dilation needs only one group
  CHECK(layer_groups(standard, 3, 3) == std::vector<DilationGroup>{{0, 7, 4}});
  D2Config none = multi;
  none.mode = DilationMode::None;
  CHECK(layer_groups(none, 3, 3) == std::vector<DilationGroup>{{0, 7, 1}});
}

TEST_CASE("all modes agree for a single layer") {
  const Tensor x = randn({2, 3, 8, 8}, 1);
  D2Config cfg{1, 4};
  const D2Weights w = weights_for(cfg, 3, 2);
  const Tensor ref = d2_forward(cfg, x, w).output;
  for (auto m : {DilationMode::StandardDilated, DilationMode::None}) {
    cfg.mode = m;
    CHECK(d2_forward(cfg, x, w).output == ref);
  }
}

TEST_CASE("D2 output channel bookkeeping") {
  for (std::size_t layers = 1; layers <= 4; ++layers) {
    for (std::size_t c0 : {1, 3}) {
      const D2Config cfg{layers, 2};
      const D2Result r = d2_forward(cfg, randn({1, c0, 6, 6}, layers), weights_for(cfg, c0, 3));
      CHECK(r.output.shape().c == c0 + layers * 2);
      CHECK(r.state.layers.size() == layers);
      for (const auto& t : r.state.layers) CHECK(t.shape().c == 2);
      std::vector<Tensor> parts{r.state.input};
      parts.insert(parts.end(), r.state.layers.begin(), r.state.layers.end());
      CHECK(concat_channels(parts) == r.output);
    }
  }
}

TEST_CASE("D2 rejects mis-sized weights") {
  const D2Config cfg{3, 2};
  CHECK_THROWS_AS(d2_forward(cfg, randn({1, 4, 6, 6}, 1), weights_for(cfg, 3, 1)),
                  ConfigError);
  D2Weights short_w = weights_for(cfg, 3, 1);
  short_w.layers.pop_back();
  CHECK_THROWS_AS(d2_forward(cfg, randn({1, 3, 6, 6}, 1), short_w), ConfigError);
}

TEST_CASE("each multidilated group acts as a plain dilated conv") {
  const D2Config cfg{3, 2, 3, 3, DilationMode::Multi};
  const Tensor x = randn({2, 3, 12, 12}, 4);
  const D2Weights base = weights_for(cfg, 3, 5);
  const auto groups = layer_groups(cfg, 3, 3);
  const BlockState st = d2_forward(cfg, x, base).state;
  const Tensor in3 = layer_input(st, 3);
  const Tensor act = composite_psi(in3, params_of(base.layers[2]));
  for (std::size_t i = 0; i < groups.size(); ++i) {
    D2Weights w = base;
    Tensor& conv = w.layers[2].conv;
    for (std::size_t o = 0; o < conv.shape().n; ++o)
      for (std::size_t c = 0; c < conv.shape().c; ++c) {
        if (c >= groups[i].channel_start && c < groups[i].channel_end) continue;
        for (std::size_t a = 0; a < 3; ++a)
          for (std::size_t b = 0; b < 3; ++b) conv(o, c, a, b) = 0.0;
      }
    Tensor sub(Shape{2, groups[i].width(), 3, 3});
    for (std::size_t o = 0; o < 2; ++o)
      for (std::size_t c = 0; c < groups[i].width(); ++c)
        for (std::size_t a = 0; a < 3; ++a)
          for (std::size_t b = 0; b < 3; ++b)
            sub(o, c, a, b) = conv(o, groups[i].channel_start + c, a, b);
    const Tensor expected =
        conv2d(slice_channels(act, groups[i].channel_start, groups[i].channel_end),
               ConvKernel(sub), std::size_t{1} << i);
    const Tensor got = d2_forward(cfg, x, w).state.layers[2];
    CHECK(rel_err(got, expected) <= 1e-12);
  }
}

TEST_CASE("bottleneck is placed only above B channels") {
  std::mt19937_64 rng(6);
  const ConvUnit w144 = init_conv_unit(200, 144, 1, 1, rng);
  CHECK(bottleneck(randn({1, 200, 2, 2}, 7), 144, w144).shape().c == 144);
  const Tensor x100 = randn({1, 100, 2, 2}, 8);
  CHECK(bottleneck(x100, 144, std::nullopt) == x100);
  const ConvUnit w1 = init_conv_unit(2, 1, 1, 1, rng);
  CHECK(bottleneck(randn({2, 2, 3, 3}, 9), 1, w1).shape().c == 1);
}

TEST_CASE("reduction policies") {
  CHECK(Reduction::compress(0.2).output_channels(100, 5) == 20);
  CHECK_THROWS_AS(Reduction::compress(0.2).output_channels(4, 1), ConfigError);

  const D2Config cfg{3, 5};
  const D2Result r = d2_forward(cfg, randn({1, 2, 4, 4}, 10), weights_for(cfg, 2, 11));
  const Tensor last2 = reduce_channels(r.output, r.state, Reduction::last(2), std::nullopt);
  CHECK(last2.shape().c == 10);
  CHECK(last2 == concat_channels({r.state.layers[1], r.state.layers[2]}));
  CHECK(reduce_channels(r.output, r.state, Reduction::none(), std::nullopt) == r.output);

  std::mt19937_64 rng(12);
  const ConvUnit cw = init_conv_unit(17, 3, 1, 1, rng);
  CHECK(reduce_channels(r.output, r.state, Reduction::compress(0.2), cw).shape().c == 3);
}

TEST_CASE("D3 config validation") {
  D3Config cfg{2, D2Config{2, 4}, 0, Reduction::none()};
  CHECK_NOTHROW(cfg.validate());
  cfg.bottleneck_channels = 15;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.bottleneck_channels = 16;
  cfg.reduction = Reduction::compress(1.0);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.reduction = Reduction::last(3);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.blocks = 0;
  cfg.reduction = Reduction::none();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("D3 with one plain block is D2") {
  const D2Config inner{3, 2};
  const D3Config cfg{1, inner, 0, Reduction::none()};
  const Tensor x = randn({2, 3, 8, 8}, 13);
  const D3Weights w3 = weights_for(cfg, 3, 14);
  CHECK(d3_forward(cfg, x, w3).output == d2_forward(inner, x, w3.blocks[0].d2).output);
}

TEST_CASE("D3 channel bookkeeping with last-N reduction") {
  const D3Config cfg{2, D2Config{2, 4}, 0, Reduction::last(2)};
  const auto plan = plan_d3(cfg, 8);
  CHECK(plan[0].in_channels == 8);
  CHECK(plan[0].out_channels == 8);
  CHECK(plan[1].in_channels == 16);
  CHECK(plan[1].out_channels == 8);
  const D3Result r = d3_forward(cfg, randn({1, 8, 8, 8}, 15), weights_for(cfg, 8, 16));
  CHECK(r.output.shape().c == 8);
  CHECK(r.blocks[1].input.shape().c == 16);
  CHECK(d3_output_channels(cfg, 8) == 8);
}

TEST_CASE("D3 dilations restart at one in every block") {
  const D3Config cfg{2, D2Config{3, 2}, 0, Reduction::none()};
  std::vector<std::size_t> chain;
  for (const auto& p : plan_d3(cfg, 3)) {
    for (std::size_t l = 1; l <= 3; ++l) {
      chain.push_back(layer_groups(cfg.inner, p.d2_in_channels, l).back().dilation);
    }
  }
  CHECK(chain == std::vector<std::size_t>{1, 2, 4, 1, 2, 4});
}

TEST_CASE("D3 bottleneck and compression widths") {
  const D3Config cfg{3, D2Config{2, 4}, 16, Reduction::compress(0.5)};
  const auto plan = plan_d3(cfg, 20);
  CHECK(plan[0].has_bottleneck);
  CHECK(plan[0].d2_in_channels == 16);
  CHECK(plan[0].d2_out_channels == 24);
  CHECK(plan[0].out_channels == 12);
  CHECK(plan[1].in_channels == 32);
  CHECK(plan[2].in_channels == 44);
  const D3Config small{1, D2Config{2, 4}, 16, Reduction::none()};
  CHECK_FALSE(plan_d3(small, 10).front().has_bottleneck);
  const D3Result r = d3_forward(cfg, randn({2, 20, 4, 4}, 17), weights_for(cfg, 20, 18));
  CHECK(r.output.shape() == Shape{2, 12, 4, 4});
  CHECK(r.reduced.size() == 3);
}

TEST_CASE("transition halves channels and spatial size") {
  std::mt19937_64 rng(19);
  CHECK(transition(randn({1, 64, 32, 32}, 20), init_transition(64, rng)).shape() ==
        Shape{1, 32, 16, 16});
  CHECK(transition(randn({1, 3, 8, 8}, 21), init_transition(3, rng)).shape() ==
        Shape{1, 1, 4, 4});
  CHECK_THROWS_AS(transition(randn({1, 4, 7, 8}, 22), init_transition(4, rng)),
                  DimensionError);
  CHECK_THROWS_AS(transition_channels(1), ConfigError);
}

TEST_CASE("block weights are deterministic in the seed") {
  const D3Config cfg{2, D2Config{2, 3}, 12, Reduction::compress(0.5)};
  D3Weights a = weights_for(cfg, 5, 23);
  D3Weights b = weights_for(cfg, 5, 23);
  std::vector<Tensor> ta, tb;
  for_each_param(a, "", [&](const std::string&, Tensor& t) { ta.push_back(t); });
  for_each_param(b, "", [&](const std::string&, Tensor& t) { tb.push_back(t); });
  CHECK(ta == tb);
  const Tensor x = randn({2, 5, 8, 8}, 24);
  CHECK(d3_forward(cfg, x, a).output == d3_forward(cfg, x, b).output);
}

TEST_CASE("D2 and D3 gradients match finite differences") {
  for (const char* op : {"d2_forward", "d3_forward"}) {
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
      for (const auto& r : check_op(op, seed, 1e-5)) {
        INFO(op << " " << r.block << " rel " << r.max_rel_error);
        CHECK(r.pass);
      }
    }
  }
}
