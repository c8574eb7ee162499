#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "d3kit/dense_blocks.hpp"
#include "d3kit/rf_analyzer.hpp"

namespace d3kit {

struct StemLayer {
  std::size_t channels = 64;
  std::size_t kernel = 3;
  std::size_t stride = 1;  // 1 or 2
};

// stem -> D3 -> transition -> D3 -> transition -> D3 -> transition -> D3,
// then a psi + 1x1 extraction conv per scale, bilinear upsampling of every
// extracted map to the first scale, concatenation and a psi + 1x1 fusion conv.
struct BackboneConfig {
  static constexpr std::size_t kScales = 4;

  std::size_t in_channels = 3;
  std::vector<StemLayer> stem;
  std::array<D3Config, kScales> scales;
  std::array<std::size_t, kScales> extract{};
  std::size_t fusion_channels = 0;  // 0: sum of extract

  void validate() const;
  std::size_t fusion_out_channels() const;
  std::size_t stem_out_channels() const;
  std::size_t total_stride() const;  // product of stem strides
  // D3 input widths per scale.
  std::array<std::size_t, kScales> scale_in_channels() const;
};

// "d3net_s" or "d3net_l"; LookupError otherwise. Stem: two 3x3 convs with
// 64 channels and strides (2, 2).
BackboneConfig preset(const std::string& name,
                      DilationMode mode = DilationMode::Multi);
const std::vector<std::string>& preset_names();

struct ParamReport {
  std::vector<std::pair<std::string, std::size_t>> entries;
  std::size_t total = 0;

  void add(std::string name, std::size_t count);
};

// Conv weights (bias-free) plus gamma and beta of every normalized channel.
ParamReport param_count(const D2Config& cfg, std::size_t in_channels);
ParamReport param_count(const D3Config& cfg, std::size_t in_channels);
ParamReport param_count(const BackboneConfig& cfg);

struct BackboneWeights {
  Tensor stem_input;           // first stem conv, applied to the raw input
  std::vector<ConvUnit> stem;  // remaining stem layers
  std::vector<D3Weights> scales;
  std::vector<ConvUnit> transitions;
  std::vector<ConvUnit> extract;
  std::vector<ConvUnit> fusion;  // one unit
};

struct BackboneOutput {
  Tensor output;               // fused features at the first scale
  std::vector<Tensor> scales;  // D3 outputs
};

class Backbone {
 public:
  Backbone(BackboneConfig cfg, std::uint64_t seed,
           NormKind norm = NormKind::Batch);

  const BackboneConfig& config() const { return cfg_; }
  NormKind norm() const { return norm_; }
  BackboneWeights& weights() { return w_; }
  const BackboneWeights& weights() const { return w_; }

  // Input height and width must be divisible by total_stride() * 8.
  BackboneOutput forward(const Tensor& input) const;

  // Receptive-field graph along one axis. Nodes: "input", "stem<i>",
  // "s<j>.b<m>.*" per scale, "t<j>" after each transition, "e<j>" per
  // extraction, "u<j>" after upsampling, "fusion".
  LayerGraph graph(Axis axis = Axis::H) const;

  // Element count of every allocated weight array, by name.
  ParamReport allocated_params() const;

 private:
  BackboneConfig cfg_;
  NormKind norm_;
  BackboneWeights w_;
};

}  // namespace d3kit
