#include "dsr/losses.h"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace dsr::loss {

using nn::Var;

Var l1_mean(const Var& a, const Var& b) {
  check_same_shape(a->val, b->val, "l1_mean");
  return nn::mean_all(nn::abs_val(nn::sub(a, b)));
}

Var l2_mean(const Var& a, const Var& b) {
  check_same_shape(a->val, b->val, "l2_mean");
  return nn::sqrt_val(nn::mean_all(nn::square(nn::sub(a, b))));
}

Var depth_loss(const Var& d_lr, const Var& d_refdown, const Var& gt_lr,
               const Var& gt_refdown) {
  return nn::add(l1_mean(d_refdown, gt_refdown), l1_mean(d_lr, gt_lr));
}

Var reconstruction_loss(const Var& sr, const Var& hr) { return l1_mean(hr, sr); }

ConvExtractor::ConvExtractor(int channels, uint64_t seed) {
  Rng rng(seed);
  convs_.emplace_back(ps_, "fx.c0", 3, channels, 3, 1, 1, rng);
  convs_.emplace_back(ps_, "fx.c1", channels, channels, 3, 2, 1, rng);
  convs_.emplace_back(ps_, "fx.c2", channels, channels, 3, 1, 1, rng);
  // frozen: optional replacement blob, never trained
  if (const char* cache = std::getenv("DSRLAB_CACHE")) {
    const auto blob = std::filesystem::path(cache) / "feature_extractor.bin";
    if (std::filesystem::exists(blob)) {
      std::ifstream f(blob, std::ios::binary);
      for (const auto& [name, p] : ps_.items()) {
        std::vector<float> data(static_cast<size_t>(p->val.numel()));
        f.read(reinterpret_cast<char*>(data.data()),
               static_cast<std::streamsize>(data.size() * sizeof(float)));
        if (f.gcount() != static_cast<std::streamsize>(data.size() * sizeof(float))) break;
        for (int64_t i = 0; i < p->val.numel(); ++i) p->val[i] = data[static_cast<size_t>(i)];
      }
    }
  }
  for (const auto& [name, p] : ps_.items()) p->needs_grad = false;
}

std::vector<Var> ConvExtractor::extract(const Var& img) const {
  Var x = img;
  for (size_t i = 0; i < convs_.size(); ++i) x = nn::relu(convs_[i].forward(x));
  return {x};
}

Var perceptual_loss(const Var& sr, const Var& hr, const FeatureExtractor& fx) {
  check_same_shape(sr->val, hr->val, "perceptual_loss");
  auto fs = fx.extract(sr);
  auto fh = fx.extract(hr);
  std::vector<Var> terms;
  terms.reserve(fs.size());
  for (size_t i = 0; i < fs.size(); ++i) terms.push_back(l2_mean(fs[i], fh[i]));
  Var acc = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) acc = nn::add(acc, terms[i]);
  return nn::scale(acc, 1.0 / static_cast<double>(terms.size()));
}

AdvLosses adversarial_losses(const net::Critic& critic, const Var& hr, const Var& sr,
                             const LossWeights& w) {
  check_same_shape(hr->val, sr->val, "adversarial_losses");
  return adversarial_losses_from(critic.discriminate(hr, sr), critic.discriminate(sr, hr),
                                 w);
}

AdvLosses adversarial_losses_from(const Var& d_hs, const Var& d_sh, const LossWeights& w) {
  constexpr double kLo = 1e-7, kHi = 1.0 - 1e-7;
  auto one_minus = [](const Var& v) { return nn::add_scalar(nn::scale(v, -1.0), 1.0); };

  AdvLosses out;
  out.g = nn::scale(nn::add(nn::log_clamped(one_minus(d_hs), kLo, kHi),
                            nn::log_clamped(d_sh, kLo, kHi)),
                    -1.0);
  out.d = nn::scale(nn::add(nn::log_clamped(d_hs, kLo, kHi),
                            nn::log_clamped(one_minus(d_sh), kLo, kHi)),
                    -1.0);
  out.adv = nn::add(nn::scale(out.g, w.g), nn::scale(out.d, w.d));
  return out;
}

Var total_loss(const Var& dep, const Var& rec, const Var& per, const Var& adv,
               const LossWeights& w) {
  for (const Var& v : {dep, rec, per, adv})
    if (!v->val.all_finite())
      throw NonFiniteLoss("loss component is not finite");
  Var acc = nn::scale(dep, w.dep);
  acc = nn::add(acc, nn::scale(rec, w.rec));
  acc = nn::add(acc, nn::scale(per, w.per));
  return nn::add(acc, nn::scale(adv, w.adv));
}

}  // namespace dsr::loss
