#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "d3kit/conv.hpp"
#include "d3kit/ops.hpp"
#include "d3kit/tensor.hpp"

// Reverse-mode recording of the tensor ops used by the block and backbone
// builders. Each op's backward delegates to the analytic gradient functions
// of conv.hpp / ops.hpp, so the tape adds bookkeeping only.
namespace d3kit::ag {

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  // Returns one gradient per parent, in parent order.
  using Backward = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

  Var input(Tensor value);

  // Leaf bound to caller-owned storage. Binding the same storage twice
  // returns the same Var, and param_grad() looks gradients up by address.
  Var param(const Tensor& storage);

  Var record(Tensor value, std::vector<Var> parents, Backward backward);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Tensor* grad(Var v) const;
  const Tensor* param_grad(const Tensor& storage) const;

  void backward(Var out, const Tensor& seed);

  // Smallest |pre-activation| seen by any psi op with a ReLU.
  double kink_margin() const { return kink_margin_; }
  void note_kink_margin(double m) {
    if (m < kink_margin_) kink_margin_ = m;
  }

 private:
  struct Node {
    Tensor value;
    std::optional<Tensor> grad;
    std::vector<Var> parents;
    Backward backward;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> params_;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

Var concat(Tape& tape, std::span<const Var> parts);
Var slice(Tape& tape, Var x, std::size_t begin, std::size_t end);
Var add(Tape& tape, Var a, Var b);

// gamma and beta are [1, c, 1, 1] tensors.
Var psi(Tape& tape, Var x, Var gamma, Var beta, NormKind kind,
        double eps = 1e-5);

// weights is [out, in, kh, kw].
Var conv(Tape& tape, Var x, Var weights, std::size_t dilation = 1);

// weights is [out, in_total, kh, kw]; groups partition in_total.
Var multidilated(Tape& tape, Var x, Var weights,
                 std::vector<DilationGroup> groups);

Var avg_pool(Tape& tape, Var x);
Var subsample(Tape& tape, Var x);
Var upsample(Tape& tape, Var x, std::size_t out_h, std::size_t out_w);

}  // namespace d3kit::ag
