#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dsr/tensor.h"

namespace dsr::nn {

// Reverse-mode tape. Each op returns a new node holding its value and a
// closure that routes the node's gradient to its parents. Graphs are DAGs
// rebuilt every step; parameters are long-lived leaves whose values the
// optimizer mutates in place.
class Node;
using Var = std::shared_ptr<Node>;

class Node {
public:
  Tensor val;
  Tensor grad;  // allocated on first accumulation
  bool needs_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> back;

  explicit Node(Tensor v) : val(std::move(v)) {}

  void accum_grad(const Tensor& g) {
    if (grad.numel() == 0) grad = Tensor::zeros(val.shape());
    grad += g;
  }
  Tensor& grad_buf() {
    if (grad.numel() == 0) grad = Tensor::zeros(val.shape());
    return grad;
  }
  void zero_grad() {
    if (grad.numel() != 0) grad.fill(0.0);
  }
};

Var leaf(Tensor v, bool needs_grad = false);
Var param(Tensor v);  // leaf with needs_grad = true

// Disables graph construction in scope (teacher forward, evaluation).
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

// Runs the tape backward from a scalar root (seeds grad with 1).
void backward(const Var& root);

// Factory for ops with bespoke backward passes (matching gather etc.).
// Respects NoGradGuard and skips graph capture when no parent needs grads.
Var custom_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> back);

// ---- elementwise / scalar ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var softplus(const Var& a);
Var sigmoid(const Var& a);
Var abs_val(const Var& a);
Var square(const Var& a);
Var sqrt_val(const Var& a);
Var log_clamped(const Var& a, double lo, double hi);

// ---- reductions / vectors ----
Var mean_all(const Var& a);  // -> shape [1]
Var sum_all(const Var& a);   // -> shape [1]
Var dot(const Var& a, const Var& b);
Var softmax_vec(const Var& a);
Var matvec(const Var& m, const Var& v);       // [R,C]x[C] -> [R]
Var linear(const Var& x, const Var& w, const Var& b);  // w:[O,I], b:[O]

// ---- structural (CHW) ----
Var concat_ch(const std::vector<Var>& xs);
Var concat_flat(const std::vector<Var>& xs);  // 1-D concatenation
Var pixel_shuffle(const Var& x, int r);
Var global_avg_pool(const Var& x);  // [C,H,W] -> [C]
Var channel_l2_pool(const Var& x);  // [C,H,W] -> [1,H,W], per-pixel L2 / C
Var bilinear_resize(const Var& x, int oh, int ow);
Var bicubic_resize_var(const Var& x, int oh, int ow);

// ---- convolution ----
// w: [Cout,Cin,k,k], b: [Cout]; zero padding.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
// w: [Cin,Cout,k,k]; out = (in-1)*stride - 2*pad + k + out_pad.
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad,
                     int out_pad);

// Scalar convenience for loss plumbing.
double scalar(const Var& v);

}  // namespace dsr::nn
