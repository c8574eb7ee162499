#include "d3kit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "d3kit/errors.hpp"

namespace d3kit {

NormParams NormParams::unit(std::size_t channels, double eps) {
  return NormParams{std::vector<double>(channels, 1.0),
                    std::vector<double>(channels, 0.0), eps};
}

void NormParams::validate(std::size_t expected_channels) const {
  if (gamma.size() != expected_channels || beta.size() != expected_channels) {
    throw DimensionError("norm params sized for " +
                         std::to_string(gamma.size()) + "/" +
                         std::to_string(beta.size()) + " channels, input has " +
                         std::to_string(expected_channels));
  }
  if (!(eps > 0.0)) throw ArgumentError("norm eps must be > 0");
}

namespace {

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> inv_std;
};

ChannelStats batch_stats(const Tensor& input, double eps) {
  const Shape& s = input.shape();
  const double count = static_cast<double>(s.n * s.plane());
  ChannelStats stats{std::vector<double>(s.c), std::vector<double>(s.c)};
  for (std::size_t c = 0; c < s.c; ++c) {
    double acc = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* p = input.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
    }
    const double mean = acc / count;
    double var = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* p = input.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const double d = p[i] - mean;
        var += d * d;
      }
    }
    var /= count;
    stats.mean[c] = mean;
    stats.inv_std[c] = 1.0 / std::sqrt(var + eps);
  }
  return stats;
}

Tensor relu(Tensor t) {
  for (double& v : t.data()) v = v > 0.0 ? v : 0.0;
  return t;
}

Tensor affine_pre(const Tensor& input, const NormParams& params) {
  const Shape& s = input.shape();
  Tensor out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* src = input.plane(n, c);
      double* dst = out.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        dst[i] = params.gamma[c] * src[i] + params.beta[c];
      }
    }
  }
  return out;
}

void require_even(const Shape& s, const char* what) {
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw DimensionError(std::string(what) + ": odd spatial size " + s.str());
  }
}

}  // namespace

Tensor batch_norm_affine(const Tensor& input, const NormParams& params) {
  const Shape& s = input.shape();
  params.validate(s.c);
  const ChannelStats stats = batch_stats(input, params.eps);
  Tensor out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* src = input.plane(n, c);
      double* dst = out.plane(n, c);
      const double scale = params.gamma[c] * stats.inv_std[c];
      for (std::size_t i = 0; i < s.plane(); ++i) {
        dst[i] = (src[i] - stats.mean[c]) * scale + params.beta[c];
      }
    }
  }
  return out;
}

Tensor composite_psi(const Tensor& input, const NormParams& params) {
  return relu(batch_norm_affine(input, params));
}

PsiGrads composite_psi_grads(const Tensor& input, const NormParams& params,
                             const Tensor& grad_out) {
  const Shape& s = input.shape();
  params.validate(s.c);
  if (grad_out.shape() != s) {
    throw DimensionError("composite_psi_grads: grad_out " +
                         grad_out.shape().str() + " vs input " + s.str());
  }
  const ChannelStats stats = batch_stats(input, params.eps);
  const double count = static_cast<double>(s.n * s.plane());
  PsiGrads g{Tensor(s), std::vector<double>(s.c, 0.0),
             std::vector<double>(s.c, 0.0)};
  for (std::size_t c = 0; c < s.c; ++c) {
    const double mean = stats.mean[c];
    const double inv_std = stats.inv_std[c];
    // First pass: d(beta), d(gamma), and the two reductions of d(xhat).
    double sum_dxhat = 0.0;
    double sum_dxhat_xhat = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* x = input.plane(n, c);
      const double* go = grad_out.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const double xhat = (x[i] - mean) * inv_std;
        const double pre = params.gamma[c] * xhat + params.beta[c];
        const double gy = pre > 0.0 ? go[i] : 0.0;
        g.beta[c] += gy;
        g.gamma[c] += gy * xhat;
        const double dxhat = gy * params.gamma[c];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
      }
    }
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* x = input.plane(n, c);
      const double* go = grad_out.plane(n, c);
      double* gi = g.input.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const double xhat = (x[i] - mean) * inv_std;
        const double pre = params.gamma[c] * xhat + params.beta[c];
        const double dxhat = pre > 0.0 ? go[i] * params.gamma[c] : 0.0;
        gi[i] = inv_std / count *
                (count * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
      }
    }
  }
  return g;
}

Tensor affine_psi(const Tensor& input, const NormParams& params) {
  params.validate(input.shape().c);
  return relu(affine_pre(input, params));
}

PsiGrads affine_psi_grads(const Tensor& input, const NormParams& params,
                          const Tensor& grad_out) {
  const Shape& s = input.shape();
  params.validate(s.c);
  if (grad_out.shape() != s) {
    throw DimensionError("affine_psi_grads: grad_out " +
                         grad_out.shape().str() + " vs input " + s.str());
  }
  PsiGrads g{Tensor(s), std::vector<double>(s.c, 0.0),
             std::vector<double>(s.c, 0.0)};
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* x = input.plane(n, c);
      const double* go = grad_out.plane(n, c);
      double* gi = g.input.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const double pre = params.gamma[c] * x[i] + params.beta[c];
        const double gy = pre > 0.0 ? go[i] : 0.0;
        gi[i] = gy * params.gamma[c];
        g.gamma[c] += gy * x[i];
        g.beta[c] += gy;
      }
    }
  }
  return g;
}

Tensor psi(NormKind kind, const Tensor& input, const NormParams& params) {
  switch (kind) {
    case NormKind::Batch:
      return composite_psi(input, params);
    case NormKind::Affine:
      return affine_psi(input, params);
    case NormKind::Identity:
      return input;
  }
  return input;
}

PsiGrads psi_grads(NormKind kind, const Tensor& input, const NormParams& params,
                   const Tensor& grad_out) {
  switch (kind) {
    case NormKind::Batch:
      return composite_psi_grads(input, params, grad_out);
    case NormKind::Affine:
      return affine_psi_grads(input, params, grad_out);
    case NormKind::Identity:
      break;
  }
  const std::size_t c = input.shape().c;
  return PsiGrads{grad_out, std::vector<double>(c, 0.0),
                  std::vector<double>(c, 0.0)};
}

double psi_kink_margin(NormKind kind, const Tensor& input,
                       const NormParams& params) {
  if (kind == NormKind::Identity) return std::numeric_limits<double>::infinity();
  const Tensor pre = kind == NormKind::Batch ? batch_norm_affine(input, params)
                                             : affine_pre(input, params);
  double margin = std::numeric_limits<double>::infinity();
  for (double v : pre.data()) margin = std::min(margin, std::abs(v));
  return margin;
}

Tensor avg_pool_2x2(const Tensor& input) {
  const Shape& s = input.shape();
  require_even(s, "avg_pool_2x2");
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Tensor out(os);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* src = input.plane(n, c);
      double* dst = out.plane(n, c);
      for (std::size_t y = 0; y < os.h; ++y) {
        const double* r0 = src + 2 * y * s.w;
        const double* r1 = r0 + s.w;
        for (std::size_t x = 0; x < os.w; ++x) {
          dst[y * os.w + x] =
              0.25 * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]);
        }
      }
    }
  }
  return out;
}

Tensor avg_pool_2x2_grads(const Shape& input_shape, const Tensor& grad_out) {
  require_even(input_shape, "avg_pool_2x2_grads");
  const Shape os{input_shape.n, input_shape.c, input_shape.h / 2,
                 input_shape.w / 2};
  if (grad_out.shape() != os) {
    throw DimensionError("avg_pool_2x2_grads: grad_out " +
                         grad_out.shape().str() + ", expected " + os.str());
  }
  Tensor gi(input_shape);
  for (std::size_t n = 0; n < os.n; ++n) {
    for (std::size_t c = 0; c < os.c; ++c) {
      const double* go = grad_out.plane(n, c);
      double* dst = gi.plane(n, c);
      for (std::size_t y = 0; y < os.h; ++y) {
        for (std::size_t x = 0; x < os.w; ++x) {
          const double v = 0.25 * go[y * os.w + x];
          double* r0 = dst + 2 * y * input_shape.w;
          double* r1 = r0 + input_shape.w;
          r0[2 * x] = v;
          r0[2 * x + 1] = v;
          r1[2 * x] = v;
          r1[2 * x + 1] = v;
        }
      }
    }
  }
  return gi;
}

Tensor subsample_2(const Tensor& input) {
  const Shape& s = input.shape();
  const Shape os{s.n, s.c, (s.h + 1) / 2, (s.w + 1) / 2};
  Tensor out(os);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* src = input.plane(n, c);
      double* dst = out.plane(n, c);
      for (std::size_t y = 0; y < os.h; ++y) {
        for (std::size_t x = 0; x < os.w; ++x) {
          dst[y * os.w + x] = src[2 * y * s.w + 2 * x];
        }
      }
    }
  }
  return out;
}

Tensor subsample_2_grads(const Shape& input_shape, const Tensor& grad_out) {
  const Shape os{input_shape.n, input_shape.c, (input_shape.h + 1) / 2,
                 (input_shape.w + 1) / 2};
  if (grad_out.shape() != os) {
    throw DimensionError("subsample_2_grads: grad_out " +
                         grad_out.shape().str() + ", expected " + os.str());
  }
  Tensor gi(input_shape);
  for (std::size_t n = 0; n < os.n; ++n) {
    for (std::size_t c = 0; c < os.c; ++c) {
      const double* go = grad_out.plane(n, c);
      double* dst = gi.plane(n, c);
      for (std::size_t y = 0; y < os.h; ++y) {
        for (std::size_t x = 0; x < os.w; ++x) {
          dst[2 * y * input_shape.w + 2 * x] = go[y * os.w + x];
        }
      }
    }
  }
  return gi;
}

namespace {

struct Lerp {
  std::size_t i0;
  std::size_t i1;
  double t;
};

std::vector<Lerp> lerp_table(std::size_t in, std::size_t out) {
  std::vector<Lerp> table(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    const auto i0 = static_cast<std::size_t>(src);
    const std::size_t i1 = i0 + 1 < in ? i0 + 1 : in - 1;
    table[i] = Lerp{i0, i1, src - static_cast<double>(i0)};
  }
  return table;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& input, std::size_t out_h,
                         std::size_t out_w) {
  const Shape& s = input.shape();
  const Shape os{s.n, s.c, out_h, out_w};
  Tensor out(os);
  const auto ty = lerp_table(s.h, out_h);
  const auto tx = lerp_table(s.w, out_w);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* src = input.plane(n, c);
      double* dst = out.plane(n, c);
      for (std::size_t y = 0; y < out_h; ++y) {
        const Lerp& ly = ty[y];
        for (std::size_t x = 0; x < out_w; ++x) {
          const Lerp& lx = tx[x];
          const double top = (1.0 - lx.t) * src[ly.i0 * s.w + lx.i0] +
                             lx.t * src[ly.i0 * s.w + lx.i1];
          const double bottom = (1.0 - lx.t) * src[ly.i1 * s.w + lx.i0] +
                                lx.t * src[ly.i1 * s.w + lx.i1];
          dst[y * out_w + x] = (1.0 - ly.t) * top + ly.t * bottom;
        }
      }
    }
  }
  return out;
}

Tensor upsample_bilinear_grads(const Shape& input_shape,
                               const Tensor& grad_out) {
  const Shape& os = grad_out.shape();
  if (os.n != input_shape.n || os.c != input_shape.c) {
    throw DimensionError("upsample_bilinear_grads: grad_out " + os.str() +
                         " vs input " + input_shape.str());
  }
  const auto ty = lerp_table(input_shape.h, os.h);
  const auto tx = lerp_table(input_shape.w, os.w);
  Tensor gi(input_shape);
  const std::size_t w = input_shape.w;
  for (std::size_t n = 0; n < os.n; ++n) {
    for (std::size_t c = 0; c < os.c; ++c) {
      const double* go = grad_out.plane(n, c);
      double* dst = gi.plane(n, c);
      for (std::size_t y = 0; y < os.h; ++y) {
        const Lerp& ly = ty[y];
        for (std::size_t x = 0; x < os.w; ++x) {
          const Lerp& lx = tx[x];
          const double g = go[y * os.w + x];
          dst[ly.i0 * w + lx.i0] += (1.0 - ly.t) * (1.0 - lx.t) * g;
          dst[ly.i0 * w + lx.i1] += (1.0 - ly.t) * lx.t * g;
          dst[ly.i1 * w + lx.i0] += ly.t * (1.0 - lx.t) * g;
          dst[ly.i1 * w + lx.i1] += ly.t * lx.t * g;
        }
      }
    }
  }
  return gi;
}

}  // namespace d3kit
