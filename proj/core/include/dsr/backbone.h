#pragma once

#include <string>
#include <utility>

#include "dsr/layers.h"

namespace dsr::net {

struct EncoderConfig {
  int base_channels = 64;
  int res_blocks_per_stage = 4;  // teacher 4, student 2
  static constexpr int stages = 3;

  void validate() const {
    if (base_channels <= 0) throw ConfigError("base_channels must be positive");
    if (res_blocks_per_stage < 1 || res_blocks_per_stage > 8)
      throw ConfigError("res_blocks_per_stage must be in 1..8");
  }
};

struct DepthNetConfig {
  int unet_depth = 4;
  int base_channels = 32;

  void validate() const {
    if (unet_depth < 1 || unet_depth > 6) throw ConfigError("unet_depth must be in 1..6");
    if (base_channels <= 0) throw ConfigError("base_channels must be positive");
  }
};

// Three feature maps; f4 lives on the input grid, f2 and f1 at 1/2 and 1/4.
// For a reference image (4x the LR size) f1 lands on the LR grid; for an LR
// input f4 is the LR grid itself.
struct FeaturePyramid {
  nn::Var f1, f2, f4;
};

// Encoder-decoder depth extractor with skip connections; softplus output
// keeps predictions strictly positive.
class UNet {
public:
  UNet(nn::ParamStore& ps, const std::string& prefix, const DepthNetConfig& cfg, Rng& rng);

  nn::Var forward(const nn::Var& img) const;  // [3,H,W] -> [1,H,W]
  int64_t macs(int h, int w) const;
  int grid_divisor() const { return 1 << cfg_.unet_depth; }
  const DepthNetConfig& config() const { return cfg_; }

private:
  DepthNetConfig cfg_;
  nn::Conv2d conv_in_;
  std::vector<nn::Conv2d> down_, refine_, up_merge_;
  std::vector<nn::ConvT2d> up_;
  nn::Conv2d conv_out_;
};

// Shared depth extraction: one network applied to both inputs.
std::pair<nn::Var, nn::Var> depth_extract(const UNet& unet, const nn::Var& lr,
                                          const nn::Var& ref_down);

// Three stages of conv + res blocks; stages 2 and 3 downsample by 2.
class Encoder {
public:
  Encoder(nn::ParamStore& ps, const std::string& prefix, const EncoderConfig& cfg,
          int cin, Rng& rng);

  FeaturePyramid forward(const nn::Var& img) const;
  // stage outputs ordered f4, f2, f1 (distillation taps)
  std::vector<nn::Var> forward_taps(const nn::Var& img) const;
  int64_t macs(int h, int w) const;
  const EncoderConfig& config() const { return cfg_; }
  int cin() const { return cin_; }

private:
  EncoderConfig cfg_;
  int cin_;
  nn::Conv2d stage_conv_[3];
  std::vector<nn::ResBlock> blocks_[3];
};

struct MatchedPyramid {
  nn::Var s1, s2, s4;  // aligned to 1x / 2x / 4x of the LR grid
};

// Reconstruction head: two 2x sub-pixel stages plus a refinement stage, each
// consuming its matched reference level; global residual over bicubic x4.
class Decoder {
public:
  Decoder(nn::ParamStore& ps, const std::string& prefix, const EncoderConfig& cfg,
          Rng& rng);

  nn::Var forward(const nn::Var& fused_lr, const MatchedPyramid& matched,
                  const nn::Var& lr_img) const;
  int64_t macs(int lr_h, int lr_w) const;

private:
  EncoderConfig cfg_;
  nn::Conv2d merge_[3];
  std::vector<nn::ResBlock> blocks_[3];
  nn::Conv2d up_conv_[2];
  nn::Conv2d final_;
};

// Relativistic critic: shared scalar scorer C, D(a,b) = sigmoid(C(a)-C(b)).
class Critic {
public:
  Critic(nn::ParamStore& ps, const std::string& prefix, int base_channels, Rng& rng);

  nn::Var score(const nn::Var& img) const;  // scalar [1]
  nn::Var logit(const nn::Var& a, const nn::Var& b) const;
  nn::Var discriminate(const nn::Var& a, const nn::Var& b) const;
  int64_t macs(int h, int w) const;

private:
  std::vector<nn::Conv2d> convs_;
  nn::LinearLayer head_;
};

}  // namespace dsr::net
