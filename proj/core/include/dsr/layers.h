#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dsr/autograd.h"
#include "dsr/rng.h"

namespace dsr::nn {

// Flat registry of named trainable tensors. Construction order is the
// serialization order, so checkpoints are stable for a fixed architecture.
class ParamStore {
public:
  Var add(const std::string& name, Tensor init);
  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
  Var find(const std::string& name) const;
  int64_t param_count() const;
  int64_t param_count_prefix(const std::string& prefix) const;
  void zero_grads();
  double grad_global_norm() const;

private:
  std::vector<std::pair<std::string, Var>> items_;
};

Tensor he_normal(std::vector<int> shape, int fan_in, Rng& rng, double gain = 1.0);

struct Conv2d {
  Var w, b;
  int cin = 0, cout = 0, k = 0, stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(ParamStore& ps, const std::string& name, int cin, int cout, int k, int stride,
         int pad, Rng& rng, double gain = 1.0);

  Var forward(const Var& x) const { return conv2d(x, w, b, stride, pad); }
  std::pair<int, int> out_dims(int h, int w) const {
    return {(h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1};
  }
  int64_t param_count() const { return static_cast<int64_t>(k) * k * cin * cout + cout; }
  int64_t macs(int oh, int ow) const {
    return static_cast<int64_t>(k) * k * cin * cout * oh * ow;
  }
};

struct ConvT2d {
  Var w, b;
  int cin = 0, cout = 0, k = 0, stride = 1, pad = 0, out_pad = 0;

  ConvT2d() = default;
  ConvT2d(ParamStore& ps, const std::string& name, int cin, int cout, int k, int stride,
          int pad, int out_pad, Rng& rng, double gain = 1.0);

  Var forward(const Var& x) const { return conv_transpose2d(x, w, b, stride, pad, out_pad); }
  std::pair<int, int> out_dims(int h, int w) const {
    return {(h - 1) * stride - 2 * pad + k + out_pad,
            (w - 1) * stride - 2 * pad + k + out_pad};
  }
  int64_t param_count() const { return static_cast<int64_t>(k) * k * cin * cout + cout; }
  // one MAC per kernel element per input position
  int64_t macs(int ih, int iw) const {
    return static_cast<int64_t>(k) * k * cin * cout * ih * iw;
  }
};

struct LinearLayer {
  Var w, b;
  int in = 0, out = 0;

  LinearLayer() = default;
  LinearLayer(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
              double gain = 1.0);

  Var forward(const Var& x) const { return linear(x, w, b); }
  int64_t param_count() const { return static_cast<int64_t>(in) * out + out; }
  int64_t macs() const { return static_cast<int64_t>(in) * out; }
};

// conv3x3 -> ReLU -> conv3x3 + identity, no normalization.
struct ResBlock {
  Conv2d c1, c2;

  ResBlock() = default;
  ResBlock(ParamStore& ps, const std::string& name, int ch, Rng& rng);

  Var forward(const Var& x) const { return add(x, c2.forward(relu(c1.forward(x)))); }
  int64_t param_count() const { return c1.param_count() + c2.param_count(); }
  int64_t macs(int h, int w) const { return c1.macs(h, w) + c2.macs(h, w); }
};

// Adam with cosine-annealed learning rate supplied per step by the caller.
class Adam {
public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Updates every parameter that accumulated a gradient this step; the
  // optional filter restricts the update to matching names (critic vs
  // generator alternation).
  void step(ParamStore& ps, double lr,
            const std::function<bool(const std::string&)>& filter = {});
  void reset() { m_.clear(); v_.clear(); t_ = 0; }

private:
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;  // indexed by position in the store
};

// Scales all gradients so the global L2 norm is at most max_norm.
void clip_grad_global_norm(ParamStore& ps, double max_norm);

}  // namespace dsr::nn
