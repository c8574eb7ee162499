#include "d3kit/conv.hpp"

#include <algorithm>
#include <string>

#include "d3kit/errors.hpp"

namespace d3kit {

ConvKernel::ConvKernel(Tensor weights) : weights_(std::move(weights)) {
  if (kh() % 2 == 0 || kw() % 2 == 0) {
    throw ConfigError("conv kernel extents must be odd, got " +
                      weights_.shape().str());
  }
}

void MultiDilatedKernel::validate(std::size_t in_ch) const {
  if (groups.empty()) throw ConfigError("multidilated kernel has no groups");
  if (groups.size() != kernels.size()) {
    throw ConfigError("multidilated kernel: " + std::to_string(groups.size()) +
                      " groups but " + std::to_string(kernels.size()) +
                      " filter banks");
  }
  std::size_t next = 0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const DilationGroup& g = groups[i];
    if (g.channel_start != next || g.channel_end <= g.channel_start) {
      throw ConfigError("dilation groups do not tile the input channels: group " +
                        std::to_string(i) + " is [" +
                        std::to_string(g.channel_start) + "," +
                        std::to_string(g.channel_end) + "), expected start " +
                        std::to_string(next));
    }
    if (g.dilation == 0) throw ConfigError("dilation must be positive");
    const ConvKernel& k = kernels[i];
    if (k.in_channels() != g.width()) {
      throw ConfigError("group " + std::to_string(i) + " kernel has " +
                        std::to_string(k.in_channels()) +
                        " input channels, group width is " +
                        std::to_string(g.width()));
    }
    if (k.out_channels() != kernels.front().out_channels() ||
        k.kh() != kernels.front().kh() || k.kw() != kernels.front().kw()) {
      throw ConfigError("group kernels must share out_ch, kh and kw");
    }
    next = g.channel_end;
  }
  if (next != in_ch) {
    throw ConfigError("dilation groups cover " + std::to_string(next) +
                      " channels, input has " + std::to_string(in_ch));
  }
}

std::size_t MultiDilatedKernel::in_channels() const {
  return groups.empty() ? 0 : groups.back().channel_end;
}

namespace {

using Index = std::ptrdiff_t;

struct Span1 {
  Index begin;
  Index end;
};

// Output indices y in [0, extent) with 0 <= y + offset < extent.
Span1 valid_range(Index extent, Index offset) {
  return Span1{std::max<Index>(0, -offset),
               std::min<Index>(extent, extent - offset)};
}

// out[n, oc] += sum_ic sum_taps w[oc, ic, tap] * in[n, channel_offset + ic,
// shifted]. Each (n, oc) plane is owned by one thread and accumulated in
// (ic, ky, kx) order, so the result does not depend on the schedule.
void forward_accumulate(const Tensor& input, std::size_t channel_offset,
                        const Tensor& weights, std::size_t dilation,
                        Tensor& out) {
  const Shape& s = input.shape();
  const Shape& ws = weights.shape();
  const Index H = static_cast<Index>(s.h);
  const Index W = static_cast<Index>(s.w);
  const Index rh = static_cast<Index>(ws.h / 2);
  const Index rw = static_cast<Index>(ws.w / 2);
  const Index d = static_cast<Index>(dilation);
  const Index batch = static_cast<Index>(s.n);
  const Index out_ch = static_cast<Index>(ws.n);

#pragma omp parallel for collapse(2) schedule(static)
  for (Index n = 0; n < batch; ++n) {
    for (Index oc = 0; oc < out_ch; ++oc) {
      double* dst = out.plane(static_cast<std::size_t>(n),
                              static_cast<std::size_t>(oc));
      for (std::size_t ic = 0; ic < ws.c; ++ic) {
        const double* src =
            input.plane(static_cast<std::size_t>(n), channel_offset + ic);
        for (Index ky = 0; ky < static_cast<Index>(ws.h); ++ky) {
          const Index dy = (ky - rh) * d;
          const Span1 ys = valid_range(H, dy);
          for (Index kx = 0; kx < static_cast<Index>(ws.w); ++kx) {
            const Index dx = (kx - rw) * d;
            const Span1 xs = valid_range(W, dx);
            const double wv = weights(static_cast<std::size_t>(oc), ic,
                                      static_cast<std::size_t>(ky),
                                      static_cast<std::size_t>(kx));
            for (Index y = ys.begin; y < ys.end; ++y) {
              double* row = dst + y * W;
              const double* in_row = src + (y + dy) * W + dx;
              for (Index x = xs.begin; x < xs.end; ++x) row[x] += wv * in_row[x];
            }
          }
        }
      }
    }
  }
}

// grad_in[n, channel_offset + ic] += correlation of grad_out with the
// flipped taps. One thread per (n, ic) plane.
void grad_input_accumulate(const Tensor& grad_out, const Tensor& weights,
                           std::size_t dilation, std::size_t channel_offset,
                           Tensor& grad_in) {
  const Shape& s = grad_out.shape();
  const Shape& ws = weights.shape();
  const Index H = static_cast<Index>(s.h);
  const Index W = static_cast<Index>(s.w);
  const Index rh = static_cast<Index>(ws.h / 2);
  const Index rw = static_cast<Index>(ws.w / 2);
  const Index d = static_cast<Index>(dilation);
  const Index batch = static_cast<Index>(s.n);
  const Index in_ch = static_cast<Index>(ws.c);

#pragma omp parallel for collapse(2) schedule(static)
  for (Index n = 0; n < batch; ++n) {
    for (Index ic = 0; ic < in_ch; ++ic) {
      double* dst = grad_in.plane(static_cast<std::size_t>(n),
                                  channel_offset + static_cast<std::size_t>(ic));
      for (std::size_t oc = 0; oc < ws.n; ++oc) {
        const double* go = grad_out.plane(static_cast<std::size_t>(n), oc);
        for (Index ky = 0; ky < static_cast<Index>(ws.h); ++ky) {
          const Index dy = (ky - rh) * d;
          // input row r receives from output row r - dy
          const Span1 rs = valid_range(H, -dy);
          for (Index kx = 0; kx < static_cast<Index>(ws.w); ++kx) {
            const Index dx = (kx - rw) * d;
            const Span1 cs = valid_range(W, -dx);
            const double wv = weights(oc, static_cast<std::size_t>(ic),
                                      static_cast<std::size_t>(ky),
                                      static_cast<std::size_t>(kx));
            for (Index r = rs.begin; r < rs.end; ++r) {
              double* row = dst + r * W;
              const double* go_row = go + (r - dy) * W - dx;
              for (Index c = cs.begin; c < cs.end; ++c) row[c] += wv * go_row[c];
            }
          }
        }
      }
    }
  }
}

// dW[oc, ic, ky, kx] = sum_n sum_(y,x) grad_out[n, oc, y, x] *
// in[n, channel_offset + ic, y + dy, x + dx]. One thread per (oc, ic).
Tensor grad_weights(const Tensor& input, std::size_t channel_offset,
                    const Shape& weight_shape, std::size_t dilation,
                    const Tensor& grad_out) {
  const Shape& s = input.shape();
  const Shape& ws = weight_shape;
  Tensor gw(ws);
  const Index H = static_cast<Index>(s.h);
  const Index W = static_cast<Index>(s.w);
  const Index rh = static_cast<Index>(ws.h / 2);
  const Index rw = static_cast<Index>(ws.w / 2);
  const Index d = static_cast<Index>(dilation);
  const Index out_ch = static_cast<Index>(ws.n);
  const Index in_ch = static_cast<Index>(ws.c);

#pragma omp parallel for collapse(2) schedule(static)
  for (Index oc = 0; oc < out_ch; ++oc) {
    for (Index ic = 0; ic < in_ch; ++ic) {
      for (Index ky = 0; ky < static_cast<Index>(ws.h); ++ky) {
        const Index dy = (ky - rh) * d;
        const Span1 ys = valid_range(H, dy);
        for (Index kx = 0; kx < static_cast<Index>(ws.w); ++kx) {
          const Index dx = (kx - rw) * d;
          const Span1 xs = valid_range(W, dx);
          double acc = 0.0;
          for (std::size_t n = 0; n < s.n; ++n) {
            const double* go = grad_out.plane(n, static_cast<std::size_t>(oc));
            const double* src =
                input.plane(n, channel_offset + static_cast<std::size_t>(ic));
            for (Index y = ys.begin; y < ys.end; ++y) {
              const double* go_row = go + y * W;
              const double* in_row = src + (y + dy) * W + dx;
              for (Index x = xs.begin; x < xs.end; ++x) {
                acc += go_row[x] * in_row[x];
              }
            }
          }
          gw(static_cast<std::size_t>(oc), static_cast<std::size_t>(ic),
             static_cast<std::size_t>(ky), static_cast<std::size_t>(kx)) = acc;
        }
      }
    }
  }
  return gw;
}

void check_conv_args(const Tensor& input, const ConvKernel& kernel,
                     std::size_t dilation, const char* what) {
  if (input.shape().c != kernel.in_channels()) {
    throw DimensionError(std::string(what) + ": input has " +
                         std::to_string(input.shape().c) +
                         " channels, kernel expects " +
                         std::to_string(kernel.in_channels()));
  }
  if (dilation == 0) throw ConfigError(std::string(what) + ": dilation must be >= 1");
}

Shape conv_output_shape(const Tensor& input, std::size_t out_ch) {
  const Shape& s = input.shape();
  return Shape{s.n, out_ch, s.h, s.w};
}

void check_grad_out(const Tensor& grad_out, const Shape& expected,
                    const char* what) {
  if (grad_out.shape() != expected) {
    throw DimensionError(std::string(what) + ": grad_out " +
                         grad_out.shape().str() + ", expected " +
                         expected.str());
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const ConvKernel& kernel,
              std::size_t dilation) {
  check_conv_args(input, kernel, dilation, "conv2d");
  Tensor out(conv_output_shape(input, kernel.out_channels()));
  forward_accumulate(input, 0, kernel.weights(), dilation, out);
  return out;
}

ConvGrads conv2d_grads(const Tensor& input, const ConvKernel& kernel,
                       std::size_t dilation, const Tensor& grad_out) {
  check_conv_args(input, kernel, dilation, "conv2d_grads");
  check_grad_out(grad_out, conv_output_shape(input, kernel.out_channels()),
                 "conv2d_grads");
  Tensor gi(input.shape());
  grad_input_accumulate(grad_out, kernel.weights(), dilation, 0, gi);
  Tensor gw = grad_weights(input, 0, kernel.weights().shape(), dilation,
                           grad_out);
  return ConvGrads{std::move(gi), std::move(gw)};
}

Tensor multidilated_conv(const Tensor& input, const MultiDilatedKernel& kernel) {
  kernel.validate(input.shape().c);
  Tensor out(conv_output_shape(input, kernel.out_channels()));
  for (std::size_t i = 0; i < kernel.groups.size(); ++i) {
    const DilationGroup& g = kernel.groups[i];
    forward_accumulate(input, g.channel_start, kernel.kernels[i].weights(),
                       g.dilation, out);
  }
  return out;
}

MultiDilatedGrads multidilated_grads(const Tensor& input,
                                     const MultiDilatedKernel& kernel,
                                     const Tensor& grad_out) {
  kernel.validate(input.shape().c);
  check_grad_out(grad_out, conv_output_shape(input, kernel.out_channels()),
                 "multidilated_grads");
  MultiDilatedGrads grads{Tensor(input.shape()), {}};
  grads.weights.reserve(kernel.groups.size());
  for (std::size_t i = 0; i < kernel.groups.size(); ++i) {
    const DilationGroup& g = kernel.groups[i];
    const Tensor& w = kernel.kernels[i].weights();
    grad_input_accumulate(grad_out, w, g.dilation, g.channel_start,
                          grads.input);
    grads.weights.push_back(
        grad_weights(input, g.channel_start, w.shape(), g.dilation, grad_out));
  }
  return grads;
}

}  // namespace d3kit
