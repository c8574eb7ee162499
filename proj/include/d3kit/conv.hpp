#pragma once

#include <cstddef>
#include <vector>

#include "d3kit/tensor.hpp"

namespace d3kit {

// Bias-free convolution filters, layout [out_ch, in_ch, kh, kw]. Both
// spatial extents are odd so "same" padding is symmetric.
class ConvKernel {
 public:
  explicit ConvKernel(Tensor weights);

  const Tensor& weights() const { return weights_; }
  Tensor& weights() { return weights_; }
  std::size_t out_channels() const { return weights_.shape().n; }
  std::size_t in_channels() const { return weights_.shape().c; }
  std::size_t kh() const { return weights_.shape().h; }
  std::size_t kw() const { return weights_.shape().w; }

 private:
  Tensor weights_;
};

// Input channels [channel_start, channel_end) convolved with one dilation.
struct DilationGroup {
  std::size_t channel_start = 0;
  std::size_t channel_end = 0;
  std::size_t dilation = 1;

  std::size_t width() const { return channel_end - channel_start; }
  bool operator==(const DilationGroup&) const = default;
};

// One filter bank per channel group, all writing the same out_ch outputs.
// The groups of a valid kernel tile [0, in_channels) in order.
struct MultiDilatedKernel {
  std::vector<DilationGroup> groups;
  std::vector<ConvKernel> kernels;

  // Throws ConfigError unless the groups tile [0, in_channels) without gap
  // or overlap and every kernel matches its group.
  void validate(std::size_t in_channels) const;
  std::size_t in_channels() const;
  std::size_t out_channels() const { return kernels.front().out_channels(); }
};

struct ConvGrads {
  Tensor input;
  Tensor weights;
};

struct MultiDilatedGrads {
  Tensor input;
  std::vector<Tensor> weights;  // one per group, in group order
};

// Cross-correlation with zero same-padding of dilation * (k - 1) / 2 per
// axis, stride 1. Output is (n, out_ch, h, w).
Tensor conv2d(const Tensor& input, const ConvKernel& kernel,
              std::size_t dilation = 1);

ConvGrads conv2d_grads(const Tensor& input, const ConvKernel& kernel,
                       std::size_t dilation, const Tensor& grad_out);

// Sum over groups of conv2d(input[group channels], group kernel, group
// dilation).
Tensor multidilated_conv(const Tensor& input, const MultiDilatedKernel& kernel);

MultiDilatedGrads multidilated_grads(const Tensor& input,
                                     const MultiDilatedKernel& kernel,
                                     const Tensor& grad_out);

// Single-threaded direct loops, one output element at a time with explicit
// bounds checks. Kept as the ground truth for the OpenMP kernels above.
namespace reference {

Tensor conv2d(const Tensor& input, const ConvKernel& kernel,
              std::size_t dilation);
ConvGrads conv2d_grads(const Tensor& input, const ConvKernel& kernel,
                       std::size_t dilation, const Tensor& grad_out);

}  // namespace reference

}  // namespace d3kit
