#include <string>

#include "d3kit/conv.hpp"
#include "d3kit/errors.hpp"

namespace d3kit::reference {

namespace {

using Index = std::ptrdiff_t;

bool inside(Index v, std::size_t extent) {
  return v >= 0 && v < static_cast<Index>(extent);
}

}  // namespace

Tensor conv2d(const Tensor& input, const ConvKernel& kernel,
              std::size_t dilation) {
  const Shape& s = input.shape();
  if (s.c != kernel.in_channels()) {
    throw DimensionError("reference::conv2d: channel mismatch");
  }
  const Index d = static_cast<Index>(dilation);
  const Index rh = static_cast<Index>(kernel.kh() / 2);
  const Index rw = static_cast<Index>(kernel.kw() / 2);
  Tensor out(Shape{s.n, kernel.out_channels(), s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t oc = 0; oc < kernel.out_channels(); ++oc) {
      for (std::size_t y = 0; y < s.h; ++y) {
        for (std::size_t x = 0; x < s.w; ++x) {
          double acc = 0.0;
          for (std::size_t ic = 0; ic < s.c; ++ic) {
            for (std::size_t ky = 0; ky < kernel.kh(); ++ky) {
              for (std::size_t kx = 0; kx < kernel.kw(); ++kx) {
                const Index iy = static_cast<Index>(y) +
                                 (static_cast<Index>(ky) - rh) * d;
                const Index ix = static_cast<Index>(x) +
                                 (static_cast<Index>(kx) - rw) * d;
                if (!inside(iy, s.h) || !inside(ix, s.w)) continue;
                acc += kernel.weights()(oc, ic, ky, kx) *
                       input(n, ic, static_cast<std::size_t>(iy),
                             static_cast<std::size_t>(ix));
              }
            }
          }
          out(n, oc, y, x) = acc;
        }
      }
    }
  }
  return out;
}

// Scatter form: each (output element, tap) pair routes grad_out into the
// input element and the weight it touched in the forward pass.
ConvGrads conv2d_grads(const Tensor& input, const ConvKernel& kernel,
                       std::size_t dilation, const Tensor& grad_out) {
  const Shape& s = input.shape();
  if (s.c != kernel.in_channels() ||
      grad_out.shape() != Shape{s.n, kernel.out_channels(), s.h, s.w}) {
    throw DimensionError("reference::conv2d_grads: shape mismatch");
  }
  const Index d = static_cast<Index>(dilation);
  const Index rh = static_cast<Index>(kernel.kh() / 2);
  const Index rw = static_cast<Index>(kernel.kw() / 2);
  ConvGrads g{Tensor(s), Tensor(kernel.weights().shape())};
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t oc = 0; oc < kernel.out_channels(); ++oc) {
      for (std::size_t y = 0; y < s.h; ++y) {
        for (std::size_t x = 0; x < s.w; ++x) {
          const double go = grad_out(n, oc, y, x);
          for (std::size_t ic = 0; ic < s.c; ++ic) {
            for (std::size_t ky = 0; ky < kernel.kh(); ++ky) {
              for (std::size_t kx = 0; kx < kernel.kw(); ++kx) {
                const Index iy = static_cast<Index>(y) +
                                 (static_cast<Index>(ky) - rh) * d;
                const Index ix = static_cast<Index>(x) +
                                 (static_cast<Index>(kx) - rw) * d;
                if (!inside(iy, s.h) || !inside(ix, s.w)) continue;
                const auto uy = static_cast<std::size_t>(iy);
                const auto ux = static_cast<std::size_t>(ix);
                g.input(n, ic, uy, ux) += kernel.weights()(oc, ic, ky, kx) * go;
                g.weights(oc, ic, ky, kx) += input(n, ic, uy, ux) * go;
              }
            }
          }
        }
      }
    }
  }
  return g;
}

}  // namespace d3kit::reference
