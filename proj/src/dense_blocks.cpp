#include "d3kit/dense_blocks.hpp"

#include <cmath>

#include "d3kit/errors.hpp"

namespace d3kit {

std::string to_string(DilationMode mode) {
  switch (mode) {
    case DilationMode::Multi:
      return "multi";
    case DilationMode::StandardDilated:
      return "standard";
    case DilationMode::None:
      return "none";
  }
  return "?";
}

DilationMode parse_dilation_mode(const std::string& name) {
  if (name == "multi") return DilationMode::Multi;
  if (name == "standard") return DilationMode::StandardDilated;
  if (name == "none") return DilationMode::None;
  throw ConfigError("unknown dilation mode '" + name +
                    "' (expected multi|standard|none)");
}

void D2Config::validate() const {
  if (layers < 1) throw ConfigError("D2 block needs L >= 1");
  if (growth < 1) throw ConfigError("D2 block needs k >= 1");
  if (kernel_h % 2 == 0 || kernel_w % 2 == 0) {
    throw ConfigError("D2 kernel extents must be odd");
  }
  // 2^(L-1) must stay representable
  if (layers > 40) throw ConfigError("D2 block depth above 40 is not supported");
}

std::size_t Reduction::output_channels(std::size_t m, std::size_t growth) const {
  switch (kind) {
    case Kind::None:
      return m;
    case Kind::Compress: {
      const auto c = static_cast<std::size_t>(std::floor(rate * static_cast<double>(m)));
      if (c == 0) {
        throw ConfigError("compression rate " + std::to_string(rate) + " of " +
                          std::to_string(m) + " channels leaves none");
      }
      return c;
    }
    case Kind::LastN:
      return last_n * growth;
  }
  return m;
}

void D3Config::validate() const {
  inner.validate();
  if (blocks < 1) throw ConfigError("D3 block needs M >= 1");
  if (bottleneck_channels != 0 && bottleneck_channels != 4 * inner.growth) {
    throw ConfigError("bottleneck channels must be 4k = " +
                      std::to_string(4 * inner.growth) + ", got " +
                      std::to_string(bottleneck_channels));
  }
  switch (reduction.kind) {
    case Reduction::Kind::Compress:
      if (!(reduction.rate > 0.0 && reduction.rate < 1.0)) {
        throw ConfigError("compression rate must lie in (0, 1)");
      }
      break;
    case Reduction::Kind::LastN:
      if (reduction.last_n < 1 || reduction.last_n > inner.layers) {
        throw ConfigError("last-N reduction needs 1 <= N <= L");
      }
      break;
    case Reduction::Kind::None:
      break;
  }
}

std::vector<BlockPlan> plan_d3(const D3Config& cfg, std::size_t in_channels) {
  cfg.validate();
  std::vector<BlockPlan> plan;
  std::size_t available = in_channels;
  for (std::size_t m = 0; m < cfg.blocks; ++m) {
    BlockPlan p;
    p.in_channels = available;
    p.has_bottleneck =
        cfg.bottleneck_channels != 0 && available > cfg.bottleneck_channels;
    p.d2_in_channels = p.has_bottleneck ? cfg.bottleneck_channels : available;
    p.d2_out_channels = cfg.inner.output_channels(p.d2_in_channels);
    p.out_channels =
        cfg.reduction.output_channels(p.d2_out_channels, cfg.inner.growth);
    available += p.out_channels;
    plan.push_back(p);
  }
  return plan;
}

std::size_t d3_output_channels(const D3Config& cfg, std::size_t in_channels) {
  return plan_d3(cfg, in_channels).back().out_channels;
}

std::vector<DilationGroup> layer_groups(const D2Config& cfg,
                                        std::size_t in_channels,
                                        std::size_t layer) {
  if (layer < 1 || layer > cfg.layers) {
    throw ConfigError("layer index " + std::to_string(layer) + " outside 1.." +
                      std::to_string(cfg.layers));
  }
  const std::size_t width = cfg.layer_in_channels(in_channels, layer);
  switch (cfg.mode) {
    case DilationMode::None:
      return {DilationGroup{0, width, 1}};
    case DilationMode::StandardDilated:
      return {DilationGroup{0, width, std::size_t{1} << (layer - 1)}};
    case DilationMode::Multi:
      break;
  }
  std::vector<DilationGroup> groups{DilationGroup{0, in_channels, 1}};
  for (std::size_t i = 1; i < layer; ++i) {
    const std::size_t start = in_channels + (i - 1) * cfg.growth;
    groups.push_back(DilationGroup{start, start + cfg.growth, std::size_t{1} << i});
  }
  return groups;
}

ConvUnit init_conv_unit(std::size_t in, std::size_t out, std::size_t kh,
                        std::size_t kw, std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(in * kh * kw);
  return ConvUnit{
      NormWeights{Tensor(Shape{1, in, 1, 1}, 1.0), Tensor(Shape{1, in, 1, 1}, 0.0)},
      random_normal(Shape{out, in, kh, kw}, rng, std::sqrt(2.0 / fan_in))};
}

D2Weights init_d2(const D2Config& cfg, std::size_t in_channels,
                  std::mt19937_64& rng) {
  cfg.validate();
  D2Weights w;
  for (std::size_t l = 1; l <= cfg.layers; ++l) {
    w.layers.push_back(init_conv_unit(cfg.layer_in_channels(in_channels, l),
                                      cfg.growth, cfg.kernel_h, cfg.kernel_w,
                                      rng));
  }
  return w;
}

D3Weights init_d3(const D3Config& cfg, std::size_t in_channels,
                  std::mt19937_64& rng) {
  D3Weights w;
  for (const BlockPlan& p : plan_d3(cfg, in_channels)) {
    D2BlockWeights b;
    if (p.has_bottleneck) {
      b.bottleneck = init_conv_unit(p.in_channels, p.d2_in_channels, 1, 1, rng);
    }
    b.d2 = init_d2(cfg.inner, p.d2_in_channels, rng);
    if (cfg.reduction.kind == Reduction::Kind::Compress) {
      b.compress = init_conv_unit(p.d2_out_channels, p.out_channels, 1, 1, rng);
    }
    w.blocks.push_back(std::move(b));
  }
  return w;
}

void for_each_param(ConvUnit& unit, const std::string& prefix,
                    const ParamVisitor& fn) {
  fn(prefix + ".norm.gamma", unit.norm.gamma);
  fn(prefix + ".norm.beta", unit.norm.beta);
  fn(prefix + ".conv", unit.conv);
}

void for_each_param(D2Weights& w, const std::string& prefix,
                    const ParamVisitor& fn) {
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    for_each_param(w.layers[l], prefix + "layer" + std::to_string(l + 1), fn);
  }
}

void for_each_param(D3Weights& w, const std::string& prefix,
                    const ParamVisitor& fn) {
  for (std::size_t m = 0; m < w.blocks.size(); ++m) {
    const std::string p = prefix + "block" + std::to_string(m + 1) + ".";
    auto& b = w.blocks[m];
    if (b.bottleneck) for_each_param(*b.bottleneck, p + "bottleneck", fn);
    for_each_param(b.d2, p, fn);
    if (b.compress) for_each_param(*b.compress, p + "compress", fn);
  }
}

namespace {

void fill_unit(ConvUnit& u, double value) {
  for (double& v : u.conv.data()) v = value;
  for (double& v : u.norm.gamma.data()) v = value;
  for (double& v : u.norm.beta.data()) v = 0.0;
}

}  // namespace

void fill_weights(D2Weights& w, double value) {
  for (auto& u : w.layers) fill_unit(u, value);
}

void fill_weights(D3Weights& w, double value) {
  for (auto& b : w.blocks) {
    if (b.bottleneck) fill_unit(*b.bottleneck, value);
    fill_weights(b.d2, value);
    if (b.compress) fill_unit(*b.compress, value);
  }
}

namespace {

void expect_unit(const ConvUnit& u, std::size_t in, std::size_t out,
                 std::size_t kh, std::size_t kw, const std::string& what) {
  const Shape expected{out, in, kh, kw};
  if (u.conv.shape() != expected || u.norm.gamma.shape().c != in ||
      u.norm.beta.shape().c != in) {
    throw ConfigError(what + ": weights " + u.conv.shape().str() +
                      " do not match expected " + expected.str());
  }
}

void check_d2_weights(const D2Config& cfg, std::size_t in_channels,
                      const D2Weights& w) {
  if (w.layers.size() != cfg.layers) {
    throw ConfigError("D2 weights hold " + std::to_string(w.layers.size()) +
                      " layers, config has L = " + std::to_string(cfg.layers));
  }
  for (std::size_t l = 1; l <= cfg.layers; ++l) {
    expect_unit(w.layers[l - 1], cfg.layer_in_channels(in_channels, l),
                cfg.growth, cfg.kernel_h, cfg.kernel_w,
                "D2 layer " + std::to_string(l));
  }
}

Tensor apply_unit(const Tensor& x, const ConvUnit& unit, NormKind norm) {
  const NormParams params{unit.norm.gamma.values(), unit.norm.beta.values()};
  return conv2d(psi(norm, x, params), ConvKernel(unit.conv), 1);
}

}  // namespace

namespace ag {

Var conv_unit(Tape& tape, Var x, const ConvUnit& unit, NormKind norm,
              std::vector<DilationGroup> groups) {
  Var y = psi(tape, x, tape.param(unit.norm.gamma), tape.param(unit.norm.beta),
              norm);
  return multidilated(tape, y, tape.param(unit.conv), std::move(groups));
}

Var conv_unit(Tape& tape, Var x, const ConvUnit& unit, NormKind norm,
              std::size_t dilation) {
  Var y = psi(tape, x, tape.param(unit.norm.gamma), tape.param(unit.norm.beta),
              norm);
  return conv(tape, y, tape.param(unit.conv), dilation);
}

D2Vars d2_forward(Tape& tape, const D2Config& cfg, Var input,
                  const D2Weights& weights, NormKind norm) {
  cfg.validate();
  const std::size_t c0 = tape.value(input).shape().c;
  check_d2_weights(cfg, c0, weights);
  D2Vars vars{input, {}, input};
  std::vector<Var> features{input};
  for (std::size_t l = 1; l <= cfg.layers; ++l) {
    const Var cat = features.size() == 1 ? input : concat(tape, features);
    const Var x = conv_unit(tape, cat, weights.layers[l - 1], norm,
                            layer_groups(cfg, c0, l));
    vars.layers.push_back(x);
    features.push_back(x);
  }
  vars.output = concat(tape, features);
  return vars;
}

D3Vars d3_forward(Tape& tape, const D3Config& cfg, Var input,
                  const D3Weights& weights, NormKind norm) {
  const auto plan = plan_d3(cfg, tape.value(input).shape().c);
  if (weights.blocks.size() != cfg.blocks) {
    throw ConfigError("D3 weights hold " + std::to_string(weights.blocks.size()) +
                      " blocks, config has M = " + std::to_string(cfg.blocks));
  }
  D3Vars vars{{}, {}, input};
  std::vector<Var> features{input};
  for (std::size_t m = 0; m < cfg.blocks; ++m) {
    const BlockPlan& p = plan[m];
    const D2BlockWeights& bw = weights.blocks[m];
    Var x = features.size() == 1 ? input : concat(tape, features);
    if (p.has_bottleneck) {
      if (!bw.bottleneck) {
        throw ConfigError("block " + std::to_string(m + 1) +
                          " needs bottleneck weights");
      }
      expect_unit(*bw.bottleneck, p.in_channels, p.d2_in_channels, 1, 1,
                  "bottleneck");
      x = conv_unit(tape, x, *bw.bottleneck, norm, std::size_t{1});
    }
    D2Vars d2 = d2_forward(tape, cfg.inner, x, bw.d2, norm);
    Var reduced = d2.output;
    switch (cfg.reduction.kind) {
      case Reduction::Kind::None:
        break;
      case Reduction::Kind::Compress:
        if (!bw.compress) {
          throw ConfigError("block " + std::to_string(m + 1) +
                            " needs compression weights");
        }
        expect_unit(*bw.compress, p.d2_out_channels, p.out_channels, 1, 1,
                    "compression");
        reduced = conv_unit(tape, d2.output, *bw.compress, norm, std::size_t{1});
        break;
      case Reduction::Kind::LastN: {
        const std::size_t n = cfg.reduction.last_n;
        std::vector<Var> tail(d2.layers.end() - static_cast<std::ptrdiff_t>(n),
                              d2.layers.end());
        reduced = concat(tape, tail);
        break;
      }
    }
    vars.blocks.push_back(std::move(d2));
    vars.reduced.push_back(reduced);
    features.push_back(reduced);
  }
  vars.output = vars.reduced.back();
  return vars;
}

Var transition(Tape& tape, Var x, const ConvUnit& weights, NormKind norm) {
  const Shape& s = tape.value(x).shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw DimensionError("transition: odd spatial size " + s.str());
  }
  expect_unit(weights, s.c, transition_channels(s.c), 1, 1, "transition");
  return avg_pool(tape, conv_unit(tape, x, weights, norm, std::size_t{1}));
}

}  // namespace ag

D2Result d2_forward(const D2Config& cfg, const Tensor& input,
                    const D2Weights& weights, NormKind norm) {
  ag::Tape tape;
  const ag::D2Vars vars = ag::d2_forward(tape, cfg, tape.input(input), weights, norm);
  D2Result result{tape.value(vars.output), BlockState{input, {}}};
  for (ag::Var v : vars.layers) result.state.layers.push_back(tape.value(v));
  return result;
}

Tensor bottleneck(const Tensor& input, std::size_t channels,
                  const std::optional<ConvUnit>& weights, NormKind norm) {
  if (channels == 0) throw ConfigError("bottleneck width must be >= 1");
  const std::size_t in = input.shape().c;
  if (in <= channels) return input;
  if (!weights) {
    throw ConfigError("bottleneck from " + std::to_string(in) + " to " +
                      std::to_string(channels) + " channels needs weights");
  }
  expect_unit(*weights, in, channels, 1, 1, "bottleneck");
  return apply_unit(input, *weights, norm);
}

Tensor reduce_channels(const Tensor& block_output, const BlockState& state,
                       const Reduction& policy,
                       const std::optional<ConvUnit>& weights, NormKind norm) {
  switch (policy.kind) {
    case Reduction::Kind::None:
      return block_output;
    case Reduction::Kind::LastN: {
      const std::size_t n = policy.last_n;
      if (n < 1 || n > state.layers.size()) {
        throw ConfigError("last-N reduction needs 1 <= N <= L");
      }
      return concat_channels(std::span<const Tensor>(
          state.layers.data() + (state.layers.size() - n), n));
    }
    case Reduction::Kind::Compress: {
      if (!(policy.rate > 0.0 && policy.rate < 1.0)) {
        throw ConfigError("compression rate must lie in (0, 1)");
      }
      const std::size_t m = block_output.shape().c;
      const std::size_t out = policy.output_channels(m, 1);
      if (!weights) throw ConfigError("compression needs weights");
      expect_unit(*weights, m, out, 1, 1, "compression");
      return apply_unit(block_output, *weights, norm);
    }
  }
  return block_output;
}

D3Result d3_forward(const D3Config& cfg, const Tensor& input,
                    const D3Weights& weights, NormKind norm) {
  ag::Tape tape;
  const ag::D3Vars vars = ag::d3_forward(tape, cfg, tape.input(input), weights, norm);
  D3Result result{tape.value(vars.output), {}, {}};
  for (const auto& b : vars.blocks) {
    BlockState st{tape.value(b.input), {}};
    for (ag::Var v : b.layers) st.layers.push_back(tape.value(v));
    result.blocks.push_back(std::move(st));
  }
  for (ag::Var v : vars.reduced) result.reduced.push_back(tape.value(v));
  return result;
}

std::size_t transition_channels(std::size_t in_channels) {
  const std::size_t out = in_channels / 2;
  if (out == 0) {
    throw ConfigError("transition of " + std::to_string(in_channels) +
                      " channel(s) leaves none");
  }
  return out;
}

ConvUnit init_transition(std::size_t in_channels, std::mt19937_64& rng) {
  return init_conv_unit(in_channels, transition_channels(in_channels), 1, 1, rng);
}

Tensor transition(const Tensor& input, const ConvUnit& weights, NormKind norm) {
  ag::Tape tape;
  return tape.value(ag::transition(tape, tape.input(input), weights, norm));
}

}  // namespace d3kit
