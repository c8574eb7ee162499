#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "d3kit/dense_blocks.hpp"

namespace d3kit {

// Long-range dense-prediction toy problem on 1-D sequences stored as
// [1, 2, n, 1] tensors. Channel 0 is +-1 noise; channel 1 holds +-1 markers
// every `period` positions (random phase) and zeros elsewhere. With
// bit(v) = v > 0 and out-of-range positions read as 0, the target is
//   y[p] = bit(noise[p-1]) ^ bit(noise[p]) ^ bit(noise[p+1]) ^ bit(marker[p-D]).
// Samples come in twins (2i, 2i+1) sharing the noise and marker positions
// with every marker value negated, so any model blind to p - D predicts the
// same value for both twins at p while their targets differ there.
struct ToySample {
  Tensor input;   // [1, 2, n, 1]
  Tensor target;  // [1, 1, n, 1], values in {0, 1}
};

struct ToyTask {
  std::uint64_t seed = 0;
  std::size_t length = 0;    // n
  std::size_t distance = 0;  // D
  std::size_t period = 0;
  std::vector<ToySample> samples;
};

// Throws ArgumentError unless 2 * distance < length, count is even and
// positive, and period >= 1.
ToyTask gen_task(std::uint64_t seed, std::size_t length, std::size_t distance,
                 std::size_t count, std::size_t period = 13);

// Lowest mean squared loss reachable by any model whose output at p ignores
// inputs farther than `half_width` from p. Counts the (twin, p) pairs where
// p - D carries a marker, D > half_width and no marker lies within
// [p - half_width, p + half_width]: there the twins' predictions coincide
// while their targets are 0 and 1, costing at least 1/2 for the pair.
double marker_floor(const ToyTask& task, std::size_t half_width);

struct ToyModelConfig {
  D2Config d2{5, 8, 3, 1, DilationMode::Multi};
};

// D2 block on the two input channels, then psi and a 1x1 conv to one logit
// per position. Normalization is the fixed per-channel affine kind, so the
// output at p depends only on inputs inside the block's receptive field.
class ToyModel {
 public:
  static constexpr std::size_t kInputChannels = 2;

  ToyModel(ToyModelConfig cfg, std::uint64_t seed);

  const ToyModelConfig& config() const { return cfg_; }
  D2Weights& d2() { return w_.d2; }
  const D2Weights& d2() const { return w_.d2; }
  ConvUnit& head() { return w_.head; }
  const ConvUnit& head() const { return w_.head; }

  // [N, 2, n, 1] -> [N, 1, n, 1]
  Tensor forward(const Tensor& input) const;
  void for_each_param(const ParamVisitor& fn);

 private:
  struct Weights {
    D2Weights d2;
    ConvUnit head;
  };
  static Weights init(const ToyModelConfig& cfg, std::uint64_t seed);

  ToyModelConfig cfg_;
  Weights w_;
};

struct TrainOptions {
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t epochs = 200;
  std::size_t batch = 16;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // full-dataset loss after each epoch
  double final_loss = 0.0;
  nlohmann::ordered_json config;
  std::uint64_t seed = 0;
  double wall_clock_s = 0.0;
};

// Mean over samples and positions of (logit - target)^2.
double dataset_loss(const ToyModel& model, const ToyTask& task);

// Minibatch SGD with momentum (v = mu * v + g; w -= lr * v) on the mean
// squared logit loss. The sample order of every epoch is drawn from `seed`.
// Throws NumericError naming the epoch if the loss stops being finite.
TrainReport train(ToyModel& model, const ToyTask& task, const TrainOptions& opt,
                  std::uint64_t seed);

// True iff the output at `position` of sample `input` stays bit-identical
// when the inputs at `region` (absolute positions; out-of-range entries are
// ignored) are replaced by random values, over `trials` seeded redraws.
bool perturb_independence(const ToyModel& model, const Tensor& input,
                          std::size_t position,
                          const std::vector<std::int64_t>& region,
                          std::uint64_t seed = 0, std::size_t trials = 8);

nlohmann::ordered_json to_json(const TrainReport& report, bool with_timing);

}  // namespace d3kit
