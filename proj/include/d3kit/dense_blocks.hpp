#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "d3kit/autograd.hpp"
#include "d3kit/conv.hpp"
#include "d3kit/ops.hpp"
#include "d3kit/tensor.hpp"

namespace d3kit {

// Dilation policy of a D2 layer.
//   Multi:           channels produced by layer i get dilation 2^i.
//   StandardDilated: every channel of layer l gets 2^(l-1).
//   None:            dilation 1 everywhere.
enum class DilationMode { Multi, StandardDilated, None };

std::string to_string(DilationMode mode);
DilationMode parse_dilation_mode(const std::string& name);

struct D2Config {
  std::size_t layers = 1;   // L
  std::size_t growth = 1;   // k
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  DilationMode mode = DilationMode::Multi;

  void validate() const;
  std::size_t output_channels(std::size_t in_channels) const {
    return in_channels + layers * growth;
  }
  // Input width of layer l (1-based).
  std::size_t layer_in_channels(std::size_t in_channels, std::size_t l) const {
    return in_channels + (l - 1) * growth;
  }
};

// Channel-reduction applied at the end of each D2 block inside a D3 block.
struct Reduction {
  enum class Kind { None, Compress, LastN };
  Kind kind = Kind::None;
  double rate = 0.0;         // Compress
  std::size_t last_n = 0;    // LastN

  static Reduction none() { return {}; }
  static Reduction compress(double c) { return {Kind::Compress, c, 0}; }
  static Reduction last(std::size_t n) { return {Kind::LastN, 0.0, n}; }

  // Channels after reduction of an m-channel D2 output.
  std::size_t output_channels(std::size_t m, std::size_t growth) const;
};

struct D3Config {
  std::size_t blocks = 1;               // M
  D2Config inner;
  std::size_t bottleneck_channels = 0;  // B; 0 disables the bottleneck
  Reduction reduction;

  void validate() const;
};

// Channel bookkeeping of one D2 block inside a D3 block.
struct BlockPlan {
  std::size_t in_channels = 0;      // concat(input, earlier reduced outputs)
  bool has_bottleneck = false;
  std::size_t d2_in_channels = 0;   // after the bottleneck
  std::size_t d2_out_channels = 0;  // d2_in + L * k
  std::size_t out_channels = 0;     // after reduction
};

std::vector<BlockPlan> plan_d3(const D3Config& cfg, std::size_t in_channels);
std::size_t d3_output_channels(const D3Config& cfg, std::size_t in_channels);

// Channel groups and dilations seen by layer l (1-based) of a D2 block whose
// input has in_channels channels.
std::vector<DilationGroup> layer_groups(const D2Config& cfg,
                                        std::size_t in_channels,
                                        std::size_t layer);

// gamma/beta as [1, c, 1, 1].
struct NormWeights {
  Tensor gamma;
  Tensor beta;
};

// psi followed by a bias-free convolution.
struct ConvUnit {
  NormWeights norm;
  Tensor conv;  // [out, in, kh, kw]

  std::size_t in_channels() const { return conv.shape().c; }
  std::size_t out_channels() const { return conv.shape().n; }
  std::size_t param_count() const { return conv.numel() + 2 * in_channels(); }
};

struct D2Weights {
  std::vector<ConvUnit> layers;
};

struct D2BlockWeights {
  std::optional<ConvUnit> bottleneck;
  D2Weights d2;
  std::optional<ConvUnit> compress;
};

struct D3Weights {
  std::vector<D2BlockWeights> blocks;
};

// Fan-in scaled normal init (variance 2 / fan_in), gamma = 1, beta = 0.
ConvUnit init_conv_unit(std::size_t in, std::size_t out, std::size_t kh,
                        std::size_t kw, std::mt19937_64& rng);
D2Weights init_d2(const D2Config& cfg, std::size_t in_channels,
                  std::mt19937_64& rng);
D3Weights init_d3(const D3Config& cfg, std::size_t in_channels,
                  std::mt19937_64& rng);

using ParamVisitor = std::function<void(const std::string& name, Tensor& t)>;
void for_each_param(ConvUnit& unit, const std::string& prefix,
                    const ParamVisitor& fn);
void for_each_param(D2Weights& w, const std::string& prefix,
                    const ParamVisitor& fn);
void for_each_param(D3Weights& w, const std::string& prefix,
                    const ParamVisitor& fn);

// Sets every conv weight and gamma to `value` and every beta to zero.
void fill_weights(D2Weights& w, double value);
void fill_weights(D3Weights& w, double value);

// The block input x_0 and layer outputs x_1..x_L.
struct BlockState {
  Tensor input;
  std::vector<Tensor> layers;
};

struct D2Result {
  Tensor output;  // [x_0, x_1, ..., x_L]
  BlockState state;
};

struct D3Result {
  Tensor output;                 // reduced output of the last D2 block
  std::vector<BlockState> blocks;
  std::vector<Tensor> reduced;   // per-block reduced outputs
};

D2Result d2_forward(const D2Config& cfg, const Tensor& input,
                    const D2Weights& weights, NormKind norm = NormKind::Batch);

// 1x1 reduction to `channels` when the input is wider, identity otherwise.
Tensor bottleneck(const Tensor& input, std::size_t channels,
                  const std::optional<ConvUnit>& weights,
                  NormKind norm = NormKind::Batch);

Tensor reduce_channels(const Tensor& block_output, const BlockState& state,
                       const Reduction& policy,
                       const std::optional<ConvUnit>& weights,
                       NormKind norm = NormKind::Batch);

D3Result d3_forward(const D3Config& cfg, const Tensor& input,
                    const D3Weights& weights, NormKind norm = NormKind::Batch);

// psi, 1x1 conv to floor(in / 2) channels, 2x2 average pooling.
Tensor transition(const Tensor& input, const ConvUnit& weights,
                  NormKind norm = NormKind::Batch);
std::size_t transition_channels(std::size_t in_channels);
ConvUnit init_transition(std::size_t in_channels, std::mt19937_64& rng);

// Recording variants used for gradients and by the backbone builder.
namespace ag {

struct D2Vars {
  Var input;
  std::vector<Var> layers;
  Var output;
};

struct D3Vars {
  std::vector<D2Vars> blocks;
  std::vector<Var> reduced;
  Var output;
};

Var conv_unit(Tape& tape, Var x, const ConvUnit& unit, NormKind norm,
              std::vector<DilationGroup> groups);
Var conv_unit(Tape& tape, Var x, const ConvUnit& unit, NormKind norm,
              std::size_t dilation = 1);

D2Vars d2_forward(Tape& tape, const D2Config& cfg, Var input,
                  const D2Weights& weights, NormKind norm);
D3Vars d3_forward(Tape& tape, const D3Config& cfg, Var input,
                  const D3Weights& weights, NormKind norm);
Var transition(Tape& tape, Var x, const ConvUnit& weights, NormKind norm);

}  // namespace ag

}  // namespace d3kit
