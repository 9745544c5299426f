#pragma once

#include <memory>
#include <vector>

#include "dsr/backbone.h"

namespace dsr::loss {

struct LossWeights {
  double dep = 1.0;
  double rec = 1.0;
  double per = 1e-2;
  double adv = 5e-3;
  double g = 1.0;
  double d = 1.0;

  void validate() const {
    if (dep < 0 || rec < 0 || per < 0 || adv < 0 || g < 0 || d < 0)
      throw ConfigError("loss weights must be nonnegative");
  }
};

nn::Var l1_mean(const nn::Var& a, const nn::Var& b);
nn::Var l2_mean(const nn::Var& a, const nn::Var& b);  // sqrt(mean((a-b)^2))

// Mean-absolute difference of both depth pairs, summed.
nn::Var depth_loss(const nn::Var& d_lr, const nn::Var& d_refdown, const nn::Var& gt_lr,
                   const nn::Var& gt_refdown);

nn::Var reconstruction_loss(const nn::Var& sr, const nn::Var& hr);

// Frozen feature taps for the perceptual distance. Never trained.
class FeatureExtractor {
public:
  virtual ~FeatureExtractor() = default;
  virtual std::vector<nn::Var> extract(const nn::Var& img) const = 0;
};

// Degenerate extractor: the image itself (perceptual distance becomes the
// RMS pixel distance).
class IdentityExtractor : public FeatureExtractor {
public:
  std::vector<nn::Var> extract(const nn::Var& img) const override { return {img}; }
};

// Fixed seeded conv stack standing in for a pretrained classifier tap.
// Weights can be overridden from a blob under DSRLAB_CACHE.
class ConvExtractor : public FeatureExtractor {
public:
  explicit ConvExtractor(int channels = 16, uint64_t seed = 0x5eedULL);
  std::vector<nn::Var> extract(const nn::Var& img) const override;

private:
  nn::ParamStore ps_;
  std::vector<nn::Conv2d> convs_;
};

nn::Var perceptual_loss(const nn::Var& sr, const nn::Var& hr, const FeatureExtractor& fx);

struct AdvLosses {
  nn::Var g, d, adv;
};

// Relativistic pair losses; logs clamped to [1e-7, 1-1e-7].
AdvLosses adversarial_losses(const net::Critic& critic, const nn::Var& hr,
                             const nn::Var& sr, const LossWeights& w);

// Same arithmetic on precomputed relativistic scores D(hr,sr), D(sr,hr).
AdvLosses adversarial_losses_from(const nn::Var& d_hs, const nn::Var& d_sh,
                                  const LossWeights& w);

// lambda_dep*dep + lambda_rec*rec + lambda_per*per + lambda_adv*adv.
nn::Var total_loss(const nn::Var& dep, const nn::Var& rec, const nn::Var& per,
                   const nn::Var& adv, const LossWeights& w);

}  // namespace dsr::loss
