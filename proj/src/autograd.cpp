#include "d3kit/autograd.hpp"

#include <algorithm>

#include "d3kit/errors.hpp"

namespace d3kit::ag {

Var Tape::input(Tensor value) {
  nodes_.push_back(Node{std::move(value), std::nullopt, {}, nullptr});
  return Var{nodes_.size() - 1};
}

Var Tape::param(const Tensor& storage) {
  if (auto it = params_.find(&storage); it != params_.end()) {
    return Var{it->second};
  }
  Var v = input(storage);
  params_.emplace(&storage, v.id);
  return v;
}

Var Tape::record(Tensor value, std::vector<Var> parents, Backward backward) {
  nodes_.push_back(
      Node{std::move(value), std::nullopt, std::move(parents), std::move(backward)});
  return Var{nodes_.size() - 1};
}

const Tensor* Tape::grad(Var v) const {
  const auto& g = nodes_[v.id].grad;
  return g ? &*g : nullptr;
}

const Tensor* Tape::param_grad(const Tensor& storage) const {
  auto it = params_.find(&storage);
  if (it == params_.end()) return nullptr;
  return grad(Var{it->second});
}

void Tape::backward(Var out, const Tensor& seed) {
  if (seed.shape() != nodes_[out.id].value.shape()) {
    throw DimensionError("backward seed " + seed.shape().str() +
                         " does not match output " +
                         nodes_[out.id].value.shape().str());
  }
  for (auto& node : nodes_) node.grad.reset();
  nodes_[out.id].grad = seed;
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.grad || !node.backward) continue;
    std::vector<Tensor> parent_grads = node.backward(*node.grad);
    for (std::size_t p = 0; p < node.parents.size(); ++p) {
      auto& target = nodes_[node.parents[p].id].grad;
      if (target) {
        add_inplace(*target, parent_grads[p]);
      } else {
        target = std::move(parent_grads[p]);
      }
    }
  }
}

Var concat(Tape& tape, std::span<const Var> parts) {
  std::vector<Tensor> values;
  values.reserve(parts.size());
  std::vector<std::size_t> widths;
  for (Var p : parts) {
    values.push_back(tape.value(p));
    widths.push_back(tape.value(p).shape().c);
  }
  Tensor out = concat_channels(values);
  return tape.record(std::move(out), {parts.begin(), parts.end()},
                     [widths](const Tensor& g) {
                       std::vector<Tensor> grads;
                       std::size_t start = 0;
                       for (std::size_t w : widths) {
                         grads.push_back(slice_channels(g, start, start + w));
                         start += w;
                       }
                       return grads;
                     });
}

Var slice(Tape& tape, Var x, std::size_t begin, std::size_t end) {
  const Shape in_shape = tape.value(x).shape();
  Tensor out = slice_channels(tape.value(x), begin, end);
  return tape.record(std::move(out), {x}, [in_shape, begin](const Tensor& g) {
    Tensor gi(in_shape);
    for (std::size_t n = 0; n < in_shape.n; ++n) {
      std::copy_n(g.plane(n, 0), g.shape().c * in_shape.plane(),
                  gi.plane(n, begin));
    }
    return std::vector<Tensor>{std::move(gi)};
  });
}

Var add(Tape& tape, Var a, Var b) {
  Tensor out = d3kit::add(tape.value(a), tape.value(b));
  return tape.record(std::move(out), {a, b}, [](const Tensor& g) {
    return std::vector<Tensor>{g, g};
  });
}

namespace {

NormParams norm_params(const Tensor& gamma, const Tensor& beta, double eps) {
  return NormParams{gamma.values(), beta.values(), eps};
}

Tensor as_channel_tensor(std::vector<double> v) {
  const std::size_t c = v.size();
  return Tensor(Shape{1, c, 1, 1}, std::move(v));
}

}  // namespace

Var psi(Tape& tape, Var x, Var gamma, Var beta, NormKind kind, double eps) {
  const NormParams params =
      norm_params(tape.value(gamma), tape.value(beta), eps);
  const Tensor& input = tape.value(x);
  if (kind != NormKind::Identity) {
    tape.note_kink_margin(psi_kink_margin(kind, input, params));
  }
  Tensor out = d3kit::psi(kind, input, params);
  return tape.record(std::move(out), {x, gamma, beta},
                     [input, params, kind](const Tensor& g) {
                       PsiGrads pg = psi_grads(kind, input, params, g);
                       return std::vector<Tensor>{
                           std::move(pg.input),
                           as_channel_tensor(std::move(pg.gamma)),
                           as_channel_tensor(std::move(pg.beta))};
                     });
}

Var conv(Tape& tape, Var x, Var weights, std::size_t dilation) {
  const Tensor& input = tape.value(x);
  ConvKernel kernel(tape.value(weights));
  Tensor out = conv2d(input, kernel, dilation);
  return tape.record(std::move(out), {x, weights},
                     [input, kernel, dilation](const Tensor& g) {
                       ConvGrads cg = conv2d_grads(input, kernel, dilation, g);
                       return std::vector<Tensor>{std::move(cg.input),
                                                  std::move(cg.weights)};
                     });
}

Var multidilated(Tape& tape, Var x, Var weights,
                 std::vector<DilationGroup> groups) {
  const Tensor& input = tape.value(x);
  const Tensor& w = tape.value(weights);
  if (groups.empty() || groups.back().channel_end != w.shape().c) {
    throw ConfigError("multidilated: groups must cover all weight channels");
  }
  MultiDilatedKernel kernel;
  kernel.groups = std::move(groups);
  for (const DilationGroup& g : kernel.groups) {
    if (g.channel_end > w.shape().c || g.channel_start >= g.channel_end) {
      throw ConfigError("multidilated: group range exceeds weight channels");
    }
    kernel.kernels.emplace_back(slice_channels(w, g.channel_start, g.channel_end));
  }
  Tensor out = multidilated_conv(input, kernel);
  return tape.record(std::move(out), {x, weights},
                     [input, kernel](const Tensor& g) {
                       MultiDilatedGrads mg = multidilated_grads(input, kernel, g);
                       return std::vector<Tensor>{
                           std::move(mg.input), concat_channels(mg.weights)};
                     });
}

Var avg_pool(Tape& tape, Var x) {
  const Shape in_shape = tape.value(x).shape();
  Tensor out = avg_pool_2x2(tape.value(x));
  return tape.record(std::move(out), {x}, [in_shape](const Tensor& g) {
    return std::vector<Tensor>{avg_pool_2x2_grads(in_shape, g)};
  });
}

Var subsample(Tape& tape, Var x) {
  const Shape in_shape = tape.value(x).shape();
  Tensor out = subsample_2(tape.value(x));
  return tape.record(std::move(out), {x}, [in_shape](const Tensor& g) {
    return std::vector<Tensor>{subsample_2_grads(in_shape, g)};
  });
}

Var upsample(Tape& tape, Var x, std::size_t out_h, std::size_t out_w) {
  const Shape in_shape = tape.value(x).shape();
  Tensor out = upsample_bilinear(tape.value(x), out_h, out_w);
  return tape.record(std::move(out), {x}, [in_shape](const Tensor& g) {
    return std::vector<Tensor>{upsample_bilinear_grads(in_shape, g)};
  });
}

}  // namespace d3kit::ag
