#pragma once

#include <cstddef>
#include <vector>

#include "d3kit/tensor.hpp"

namespace d3kit {

// How the composite normalization + ReLU stage is evaluated.
//   Batch:    current-batch statistics, then affine, then ReLU.
//   Affine:   fixed per-channel affine, then ReLU. No statistics, so every
//             output position depends only on its own input position.
//   Identity: pass-through. Used by the impulse-footprint oracle only.
enum class NormKind { Batch, Affine, Identity };

struct NormParams {
  std::vector<double> gamma;
  std::vector<double> beta;
  double eps = 1e-5;

  static NormParams unit(std::size_t channels, double eps = 1e-5);
  std::size_t channels() const { return gamma.size(); }
  void validate(std::size_t expected_channels) const;
};

struct PsiGrads {
  Tensor input;
  std::vector<double> gamma;
  std::vector<double> beta;
};

// Pre-ReLU stage of composite_psi: gamma * (x - mean) / sqrt(var + eps) + beta
// with biased per-channel batch statistics over (n, h, w).
Tensor batch_norm_affine(const Tensor& input, const NormParams& params);

// psi(x) = max(0, batch_norm_affine(x)).
Tensor composite_psi(const Tensor& input, const NormParams& params);
PsiGrads composite_psi_grads(const Tensor& input, const NormParams& params,
                             const Tensor& grad_out);

// max(0, gamma * x + beta) per channel.
Tensor affine_psi(const Tensor& input, const NormParams& params);
PsiGrads affine_psi_grads(const Tensor& input, const NormParams& params,
                          const Tensor& grad_out);

Tensor psi(NormKind kind, const Tensor& input, const NormParams& params);
PsiGrads psi_grads(NormKind kind, const Tensor& input, const NormParams& params,
                   const Tensor& grad_out);

// Smallest |pre-activation| entering the ReLU; infinity for Identity.
double psi_kink_margin(NormKind kind, const Tensor& input,
                       const NormParams& params);

// 2x2 mean pooling with stride 2. Odd spatial sizes are rejected.
Tensor avg_pool_2x2(const Tensor& input);
Tensor avg_pool_2x2_grads(const Shape& input_shape, const Tensor& grad_out);

// Keeps rows/cols 0, 2, 4, ... . Together with a stride-1 same-padded
// convolution this is a stride-2 convolution.
Tensor subsample_2(const Tensor& input);
Tensor subsample_2_grads(const Shape& input_shape, const Tensor& grad_out);

// Bilinear resize with align_corners=false. Per axis, destination index i
// maps to src = max(0, (i + 0.5) * in / out - 0.5); i0 = floor(src),
// i1 = min(i0 + 1, in - 1), weights (1 - t, t) with t = src - i0.
Tensor upsample_bilinear(const Tensor& input, std::size_t out_h,
                         std::size_t out_w);
Tensor upsample_bilinear_grads(const Shape& input_shape, const Tensor& grad_out);

}  // namespace d3kit
