#pragma once

#include "fsdiff/tensor.hpp"

#include <functional>
#include <span>
#include <vector>

namespace fsdiff::ad {

class Tape;

// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Reverse-mode tape over dense tensors. Every op appends one node; backward()
// walks the nodes in reverse and runs each node's adjoint. With gradients
// disabled the same op code runs as a plain forward evaluator.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value);
  Var parameter(Tensor value);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient of the last backward() root w.r.t. v; zeros if v was unreachable.
  Tensor grad(Var v) const;

  // v must be a scalar (one element).
  void backward(Var root);

  // Used by op implementations.
  Var push(Tensor value, std::vector<Var> inputs, std::function<void(const Tensor& grad_out)> adjoint);
  void accumulate(Var v, const Tensor& g);
  Tensor& grad_buffer(Var v);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::function<void(const Tensor&)> adjoint;
  };
  bool grad_enabled_;
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

// Elementwise.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
Var silu(Var a);
// x * mask, with mask a fixed tensor (dropout with pre-scaled keep mask).
Var mask_mul(Var x, const Tensor& mask);

// y[n] = alpha[n] * a[n] + beta[n] * b[n], per leading-axis item.
Var item_lincomb(Var a, Var b, std::span<const double> alpha, std::span<const double> beta);

// x: (N, in), w: (out, in), b: (out) -> (N, out). Pass bias_present=false to skip b.
Var linear(Var x, Var w, Var b);
Var linear_nobias(Var x, Var w);

// x: (N, Cin, H, W), w: (Cout, Cin, k, k), b: (Cout); stride 1, zero "same" padding, odd k.
Var conv2d(Var x, Var w, Var b);

// x: (N, C, H, W) + b: (N, C) broadcast over H, W.
Var add_channel_bias(Var x, Var b);
Var avg_pool2(Var x);
Var upsample2(Var x);
Var concat_channels(Var a, Var b);
Var slice_channels(Var x, std::size_t start, std::size_t count);

// Haar hf = LH + HL + HH over the last two axes.
Var high_frequency(Var x);

// Mean of squared differences -> scalar.
Var mse(Var a, Var b);

// Sum over anchors of KL(p_ada || p_src) of softmax-over-cosine distributions.
// Items are rows of the leading axis, flattened. Either side may be constant.
Var pairwise_similarity_kl(Var source, Var adapted);

// sum_k w_k * s_k over scalar nodes.
Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights);

}  // namespace fsdiff::ad
