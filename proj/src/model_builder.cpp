#include "d3kit/model_builder.hpp"

#include <numeric>
#include <random>

#include "d3kit/errors.hpp"

namespace d3kit {

void BackboneConfig::validate() const {
  if (in_channels < 1) throw ConfigError("backbone needs >= 1 input channel");
  if (stem.empty()) throw ConfigError("backbone stem needs >= 1 conv layer");
  for (const auto& s : stem) {
    if (s.channels < 1) throw ConfigError("stem layer needs >= 1 channel");
    if (s.kernel % 2 == 0) throw ConfigError("stem kernel must be odd");
    if (s.stride != 1 && s.stride != 2) {
      throw ConfigError("stem stride must be 1 or 2");
    }
  }
  for (const auto& d3 : scales) d3.validate();
  for (std::size_t e : extract) {
    if (e < 1) throw ConfigError("extraction width must be >= 1");
  }
  scale_in_channels();  // transitions must keep >= 1 channel
}

std::size_t BackboneConfig::fusion_out_channels() const {
  if (fusion_channels != 0) return fusion_channels;
  return std::accumulate(extract.begin(), extract.end(), std::size_t{0});
}

std::size_t BackboneConfig::stem_out_channels() const {
  if (stem.empty()) throw ConfigError("backbone stem needs >= 1 conv layer");
  return stem.back().channels;
}

std::size_t BackboneConfig::total_stride() const {
  std::size_t s = 1;
  for (const auto& l : stem) s *= l.stride;
  return s;
}

std::array<std::size_t, BackboneConfig::kScales>
BackboneConfig::scale_in_channels() const {
  std::array<std::size_t, kScales> c{};
  c[0] = stem_out_channels();
  for (std::size_t j = 0; j + 1 < kScales; ++j) {
    c[j + 1] = transition_channels(d3_output_channels(scales[j], c[j]));
  }
  return c;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"d3net_s", "d3net_l"};
  return names;
}

BackboneConfig preset(const std::string& name, DilationMode mode) {
  std::size_t layers = 0;
  std::size_t growth = 0;
  std::array<std::size_t, BackboneConfig::kScales> extract{};
  if (name == "d3net_s") {
    layers = 8;
    growth = 36;
    extract = {32, 40, 64, 128};
  } else if (name == "d3net_l") {
    layers = 10;
    growth = 64;
    extract = {32, 48, 96, 192};
  } else {
    throw LookupError("unknown preset '" + name + "'");
  }
  BackboneConfig cfg;
  cfg.stem = {StemLayer{64, 3, 2}, StemLayer{64, 3, 2}};
  D3Config d3;
  d3.blocks = 4;
  d3.inner = D2Config{layers, growth, 3, 3, mode};
  d3.bottleneck_channels = 4 * growth;
  d3.reduction = Reduction::compress(0.2);
  cfg.scales.fill(d3);
  cfg.extract = extract;
  return cfg;
}

void ParamReport::add(std::string name, std::size_t count) {
  entries.emplace_back(std::move(name), count);
  total += count;
}

namespace {

std::size_t unit_params(std::size_t in, std::size_t out, std::size_t kh,
                        std::size_t kw) {
  return in * out * kh * kw + 2 * in;
}

void add_d2(ParamReport& r, const D2Config& cfg, std::size_t in_channels,
            const std::string& prefix) {
  for (std::size_t l = 1; l <= cfg.layers; ++l) {
    r.add(prefix + "layer" + std::to_string(l),
          unit_params(cfg.layer_in_channels(in_channels, l), cfg.growth,
                      cfg.kernel_h, cfg.kernel_w));
  }
}

void add_d3(ParamReport& r, const D3Config& cfg, std::size_t in_channels,
            const std::string& prefix) {
  const auto plan = plan_d3(cfg, in_channels);
  for (std::size_t m = 0; m < plan.size(); ++m) {
    const BlockPlan& p = plan[m];
    const std::string b = prefix + "block" + std::to_string(m + 1) + ".";
    if (p.has_bottleneck) {
      r.add(b + "bottleneck", unit_params(p.in_channels, p.d2_in_channels, 1, 1));
    }
    add_d2(r, cfg.inner, p.d2_in_channels, b);
    if (cfg.reduction.kind == Reduction::Kind::Compress) {
      r.add(b + "compress", unit_params(p.d2_out_channels, p.out_channels, 1, 1));
    }
  }
}

}  // namespace

ParamReport param_count(const D2Config& cfg, std::size_t in_channels) {
  cfg.validate();
  ParamReport r;
  add_d2(r, cfg, in_channels, "");
  return r;
}

ParamReport param_count(const D3Config& cfg, std::size_t in_channels) {
  ParamReport r;
  add_d3(r, cfg, in_channels, "");
  return r;
}

ParamReport param_count(const BackboneConfig& cfg) {
  cfg.validate();
  ParamReport r;
  std::size_t c = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.stem.size(); ++i) {
    const auto& s = cfg.stem[i];
    const std::size_t weights = c * s.channels * s.kernel * s.kernel;
    r.add("stem" + std::to_string(i + 1), i == 0 ? weights : weights + 2 * c);
    c = s.channels;
  }
  const auto in = cfg.scale_in_channels();
  for (std::size_t j = 0; j < BackboneConfig::kScales; ++j) {
    const std::string s = "scale" + std::to_string(j + 1) + ".";
    add_d3(r, cfg.scales[j], in[j], s);
    const std::size_t out = d3_output_channels(cfg.scales[j], in[j]);
    if (j + 1 < BackboneConfig::kScales) {
      r.add("transition" + std::to_string(j + 1),
            unit_params(out, transition_channels(out), 1, 1));
    }
    r.add("extract" + std::to_string(j + 1),
          unit_params(out, cfg.extract[j], 1, 1));
  }
  r.add("fusion", unit_params(cfg.fusion_out_channels(),
                              cfg.fusion_out_channels(), 1, 1));
  return r;
}

namespace {

BackboneWeights init_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const StemLayer& first = cfg.stem.front();
  // the first stem conv sees the raw input and has no normalization
  BackboneWeights w{init_conv_unit(cfg.in_channels, first.channels, first.kernel,
                                   first.kernel, rng)
                        .conv,
                    {}, {}, {}, {}, {}};
  for (std::size_t i = 1; i < cfg.stem.size(); ++i) {
    const auto& s = cfg.stem[i];
    w.stem.push_back(init_conv_unit(cfg.stem[i - 1].channels, s.channels,
                                    s.kernel, s.kernel, rng));
  }
  const auto in = cfg.scale_in_channels();
  for (std::size_t j = 0; j < BackboneConfig::kScales; ++j) {
    w.scales.push_back(init_d3(cfg.scales[j], in[j], rng));
    const std::size_t out = d3_output_channels(cfg.scales[j], in[j]);
    if (j + 1 < BackboneConfig::kScales) {
      w.transitions.push_back(init_transition(out, rng));
    }
    w.extract.push_back(init_conv_unit(out, cfg.extract[j], 1, 1, rng));
  }
  const std::size_t f = cfg.fusion_out_channels();
  w.fusion.push_back(init_conv_unit(f, f, 1, 1, rng));
  return w;
}

}  // namespace

Backbone::Backbone(BackboneConfig cfg, std::uint64_t seed, NormKind norm)
    : cfg_(std::move(cfg)), norm_(norm), w_(init_backbone(cfg_, seed)) {}

BackboneOutput Backbone::forward(const Tensor& input) const {
  const Shape s = input.shape();
  if (s.c != cfg_.in_channels) {
    throw DimensionError("backbone expects " + std::to_string(cfg_.in_channels) +
                         " input channels, got " + s.str());
  }
  const std::size_t div = cfg_.total_stride() << (BackboneConfig::kScales - 1);
  if (s.h % div != 0 || s.w % div != 0) {
    throw DimensionError("backbone input height and width must be divisible by " +
                         std::to_string(div) + ", got " + s.str());
  }
  ag::Tape tape;
  ag::Var x = tape.input(input);
  for (std::size_t i = 0; i < cfg_.stem.size(); ++i) {
    x = i == 0 ? ag::conv(tape, x, tape.param(w_.stem_input))
               : ag::conv_unit(tape, x, w_.stem[i - 1], norm_, std::size_t{1});
    if (cfg_.stem[i].stride == 2) x = ag::subsample(tape, x);
  }
  const std::size_t top_h = tape.value(x).shape().h;
  const std::size_t top_w = tape.value(x).shape().w;

  std::vector<Tensor> scale_outputs;
  std::vector<ag::Var> extracted;
  for (std::size_t j = 0; j < BackboneConfig::kScales; ++j) {
    const ag::Var y =
        ag::d3_forward(tape, cfg_.scales[j], x, w_.scales[j], norm_).output;
    scale_outputs.push_back(tape.value(y));
    ag::Var e = ag::conv_unit(tape, y, w_.extract[j], norm_, std::size_t{1});
    if (j > 0) e = ag::upsample(tape, e, top_h, top_w);
    extracted.push_back(e);
    if (j + 1 < BackboneConfig::kScales) {
      x = ag::transition(tape, y, w_.transitions[j], norm_);
    }
  }
  const ag::Var cat = ag::concat(tape, extracted);
  const ag::Var fused =
      ag::conv_unit(tape, cat, w_.fusion.front(), norm_, std::size_t{1});
  return BackboneOutput{tape.value(fused), std::move(scale_outputs)};
}

LayerGraph Backbone::graph(Axis axis) const {
  LayerGraph g;
  auto node = [&](const std::string& name, std::size_t channels,
                  std::int64_t stride) {
    g.add_node(GraphNode{name, 0, 0, channels, stride});
  };
  auto stride_of = [&](const std::string& name) {
    return g.nodes()[g.find(name)].stride;
  };

  node("input", cfg_.in_channels, 1);
  std::string prev = "input";
  for (std::size_t i = 0; i < cfg_.stem.size(); ++i) {
    const auto& s = cfg_.stem[i];
    const std::string name = "stem" + std::to_string(i + 1);
    node(name, s.channels,
         stride_of(prev) * static_cast<std::int64_t>(s.stride));
    g.add_edge(prev, name, EdgeKind::Conv, s.kernel, 1, s.stride);
    prev = name;
  }

  const auto in = cfg_.scale_in_channels();
  std::vector<std::string> fused;
  for (std::size_t j = 0; j < BackboneConfig::kScales; ++j) {
    const std::string tag = std::to_string(j + 1);
    const std::string y =
        append_d3_graph(g, cfg_.scales[j], in[j], prev, "s" + tag + ".", axis);
    const std::int64_t stride = stride_of(y);

    node("e" + tag, cfg_.extract[j], stride);
    g.add_edge(y, "e" + tag, EdgeKind::Conv);
    if (j == 0) {
      fused.push_back("e" + tag);
    } else {
      const std::size_t factor = std::size_t{1} << j;
      node("u" + tag, cfg_.extract[j], stride / static_cast<std::int64_t>(factor));
      g.add_edge("e" + tag, "u" + tag, EdgeKind::Upsample, 1, 1, factor);
      fused.push_back("u" + tag);
    }
    if (j + 1 < BackboneConfig::kScales) {
      const std::string t = "t" + tag;
      const std::size_t out = d3_output_channels(cfg_.scales[j], in[j]);
      node(t, transition_channels(out), stride * 2);
      g.add_edge(y, t, EdgeKind::Pool, 1, 1, 2);
      prev = t;
    }
  }
  node("fusion", cfg_.fusion_out_channels(), stride_of(fused.front()));
  for (const auto& f : fused) g.add_edge(f, "fusion", EdgeKind::Conv);
  g.validate();
  return g;
}

ParamReport Backbone::allocated_params() const {
  ParamReport r;
  // the visitors take mutable tensors but only read their sizes here
  auto& w = const_cast<BackboneWeights&>(w_);
  auto unit = [&](ConvUnit& u, const std::string& name) {
    r.add(name, u.conv.numel() + u.norm.gamma.numel() + u.norm.beta.numel());
  };
  r.add("stem1", w.stem_input.numel());
  for (std::size_t i = 0; i < w.stem.size(); ++i) {
    unit(w.stem[i], "stem" + std::to_string(i + 2));
  }
  for (std::size_t j = 0; j < BackboneConfig::kScales; ++j) {
    const std::string tag = std::to_string(j + 1);
    std::size_t n = 0;
    for_each_param(w.scales[j], "", [&](const std::string&, Tensor& t) {
      n += t.numel();
    });
    r.add("scale" + tag, n);
    if (j + 1 < BackboneConfig::kScales) {
      unit(w.transitions[j], "transition" + tag);
    }
    unit(w.extract[j], "extract" + tag);
  }
  unit(w.fusion.front(), "fusion");
  return r;
}

}  // namespace d3kit
