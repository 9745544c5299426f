#include "dsr/layers.h"

#include <cmath>

#include "dsr/errors.h"

namespace dsr::nn {

Var ParamStore::add(const std::string& name, Tensor init) {
  for (const auto& [n, v] : items_)
    if (n == name) throw ConfigError("duplicate parameter name: " + name);
  Var p = param(std::move(init));
  items_.emplace_back(name, p);
  return p;
}

Var ParamStore::find(const std::string& name) const {
  for (const auto& [n, v] : items_)
    if (n == name) return v;
  throw ConfigError("unknown parameter: " + name);
}

int64_t ParamStore::param_count() const {
  int64_t n = 0;
  for (const auto& [name, v] : items_) n += v->val.numel();
  return n;
}

int64_t ParamStore::param_count_prefix(const std::string& prefix) const {
  int64_t n = 0;
  for (const auto& [name, v] : items_)
    if (name.rfind(prefix, 0) == 0) n += v->val.numel();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [name, v] : items_) v->zero_grad();
}

double ParamStore::grad_global_norm() const {
  double s = 0.0;
  for (const auto& [name, v] : items_) {
    if (v->grad.numel() == 0) continue;
    for (int64_t i = 0; i < v->grad.numel(); ++i) s += v->grad[i] * v->grad[i];
  }
  return std::sqrt(s);
}

Tensor he_normal(std::vector<int> shape, int fan_in, Rng& rng, double gain) {
  Tensor t(std::move(shape));
  const double std = gain * std::sqrt(2.0 / fan_in);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, std);
  return t;
}

Conv2d::Conv2d(ParamStore& ps, const std::string& name, int cin_, int cout_, int k_,
               int stride_, int pad_, Rng& rng, double gain)
    : cin(cin_), cout(cout_), k(k_), stride(stride_), pad(pad_) {
  w = ps.add(name + ".w", he_normal({cout, cin, k, k}, cin * k * k, rng, gain));
  b = ps.add(name + ".b", Tensor::zeros({cout}));
}

ConvT2d::ConvT2d(ParamStore& ps, const std::string& name, int cin_, int cout_, int k_,
                 int stride_, int pad_, int out_pad_, Rng& rng, double gain)
    : cin(cin_), cout(cout_), k(k_), stride(stride_), pad(pad_), out_pad(out_pad_) {
  w = ps.add(name + ".w", he_normal({cin, cout, k, k}, cin * k * k, rng, gain));
  b = ps.add(name + ".b", Tensor::zeros({cout}));
}

LinearLayer::LinearLayer(ParamStore& ps, const std::string& name, int in_, int out_,
                         Rng& rng, double gain)
    : in(in_), out(out_) {
  w = ps.add(name + ".w", he_normal({out, in}, in, rng, gain));
  b = ps.add(name + ".b", Tensor::zeros({out}));
}

ResBlock::ResBlock(ParamStore& ps, const std::string& name, int ch, Rng& rng)
    : c1(ps, name + ".c1", ch, ch, 3, 1, 1, rng),
      c2(ps, name + ".c2", ch, ch, 3, 1, 1, rng) {}

void Adam::step(ParamStore& ps, double lr,
                const std::function<bool(const std::string&)>& filter) {
  const auto& items = ps.items();
  if (m_.size() != items.size()) {
    m_.assign(items.size(), Tensor());
    v_.assign(items.size(), Tensor());
    for (size_t i = 0; i < items.size(); ++i) {
      m_[i] = Tensor::zeros(items[i].second->val.shape());
      v_[i] = Tensor::zeros(items[i].second->val.shape());
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < items.size(); ++i) {
    if (filter && !filter(items[i].first)) continue;
    Node& p = *items[i].second;
    if (p.grad.numel() == 0) continue;
    for (int64_t j = 0; j < p.val.numel(); ++j) {
      const double g = p.grad[j];
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      p.val[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void clip_grad_global_norm(ParamStore& ps, double max_norm) {
  const double norm = ps.grad_global_norm();
  if (norm <= max_norm || norm == 0.0) return;
  const double s = max_norm / norm;
  for (const auto& [name, v] : ps.items()) {
    if (v->grad.numel() == 0) continue;
    v->grad *= s;
  }
}

}  // namespace dsr::nn
