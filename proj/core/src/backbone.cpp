#include "dsr/backbone.h"

#include <algorithm>

#include "dsr/image.h"

namespace dsr::net {

using nn::Var;

namespace {

int unet_channels(int base, int level) { return base * std::min(1 << level, 4); }

void require_img(const Var& v, int cin, const char* where) {
  if (v->val.rank() != 3 || v->val.dim(0) != cin)
    throw ShapeError(std::string(where) + ": expected [" + std::to_string(cin) +
                     ",H,W], got " + v->val.shape_str());
}

}  // namespace

UNet::UNet(nn::ParamStore& ps, const std::string& prefix, const DepthNetConfig& cfg,
           Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const int D = cfg_.unet_depth;
  conv_in_ = nn::Conv2d(ps, prefix + ".in", 3, cfg_.base_channels, 3, 1, 1, rng);
  for (int i = 0; i < D; ++i) {
    const int ci = unet_channels(cfg_.base_channels, i);
    const int co = unet_channels(cfg_.base_channels, i + 1);
    down_.emplace_back(ps, prefix + ".down" + std::to_string(i), ci, co, 3, 2, 1, rng);
    refine_.emplace_back(ps, prefix + ".ref" + std::to_string(i), co, co, 3, 1, 1, rng);
  }
  for (int i = D - 1; i >= 0; --i) {
    const int ci = unet_channels(cfg_.base_channels, i + 1);
    const int co = unet_channels(cfg_.base_channels, i);
    up_.emplace_back(ps, prefix + ".up" + std::to_string(i), ci, co, 3, 2, 1, 1, rng);
    up_merge_.emplace_back(ps, prefix + ".upm" + std::to_string(i), 2 * co, co, 3, 1, 1, rng);
  }
  conv_out_ = nn::Conv2d(ps, prefix + ".out", cfg_.base_channels, 1, 3, 1, 1, rng, 0.5);
}

Var UNet::forward(const Var& img) const {
  require_img(img, 3, "UNet::forward");
  const int H = img->val.dim(1), W = img->val.dim(2);
  const int div = grid_divisor();
  if (H % div != 0 || W % div != 0)
    throw ShapeError("UNet input " + img->val.shape_str() + " not divisible by " +
                     std::to_string(div));

  std::vector<Var> skips;
  Var x = nn::relu(conv_in_.forward(img));
  skips.push_back(x);
  for (size_t i = 0; i < down_.size(); ++i) {
    x = nn::relu(down_[i].forward(x));
    x = nn::relu(refine_[i].forward(x));
    if (i + 1 < down_.size()) skips.push_back(x);
  }
  for (size_t j = 0; j < up_.size(); ++j) {
    x = nn::relu(up_[j].forward(x));
    x = nn::concat_ch({x, skips[skips.size() - 1 - j]});
    x = nn::relu(up_merge_[j].forward(x));
  }
  return nn::softplus(conv_out_.forward(x));
}

int64_t UNet::macs(int h, int w) const {
  int64_t total = conv_in_.macs(h, w);
  int ch = h, cw = w;
  for (size_t i = 0; i < down_.size(); ++i) {
    ch /= 2;
    cw /= 2;
    total += down_[i].macs(ch, cw) + refine_[i].macs(ch, cw);
  }
  for (size_t j = 0; j < up_.size(); ++j) {
    total += up_[j].macs(ch, cw);
    ch *= 2;
    cw *= 2;
    total += up_merge_[j].macs(ch, cw);
  }
  total += conv_out_.macs(h, w);
  return total;
}

std::pair<Var, Var> depth_extract(const UNet& unet, const Var& lr, const Var& ref_down) {
  if (!lr->val.same_shape(ref_down->val))
    throw ShapeError("depth_extract: input dims differ, " + lr->val.shape_str() + " vs " +
                     ref_down->val.shape_str());
  return {unet.forward(lr), unet.forward(ref_down)};
}

Encoder::Encoder(nn::ParamStore& ps, const std::string& prefix, const EncoderConfig& cfg,
                 int cin, Rng& rng)
    : cfg_(cfg), cin_(cin) {
  cfg_.validate();
  const int C = cfg_.base_channels;
  for (int s = 0; s < 3; ++s) {
    const int in_ch = s == 0 ? cin : C;
    const int stride = s == 0 ? 1 : 2;
    stage_conv_[s] = nn::Conv2d(ps, prefix + ".s" + std::to_string(s) + ".conv", in_ch, C,
                                3, stride, 1, rng);
    for (int b = 0; b < cfg_.res_blocks_per_stage; ++b)
      blocks_[s].emplace_back(ps, prefix + ".s" + std::to_string(s) + ".rb" + std::to_string(b),
                              C, rng);
  }
}

std::vector<Var> Encoder::forward_taps(const Var& img) const {
  require_img(img, cin_, "Encoder::forward");
  if (img->val.dim(1) % 4 != 0 || img->val.dim(2) % 4 != 0)
    throw ShapeError("Encoder input " + img->val.shape_str() + " not divisible by 4");
  std::vector<Var> taps;
  Var x = img;
  for (int s = 0; s < 3; ++s) {
    x = nn::relu(stage_conv_[s].forward(x));
    for (const auto& rb : blocks_[s]) x = rb.forward(x);
    taps.push_back(x);
  }
  return taps;  // {f4, f2, f1}
}

FeaturePyramid Encoder::forward(const Var& img) const {
  auto taps = forward_taps(img);
  return FeaturePyramid{taps[2], taps[1], taps[0]};
}

int64_t Encoder::macs(int h, int w) const {
  int64_t total = 0;
  int ch = h, cw = w;
  for (int s = 0; s < 3; ++s) {
    if (s > 0) {
      ch /= 2;
      cw /= 2;
    }
    total += stage_conv_[s].macs(ch, cw);
    for (const auto& rb : blocks_[s]) total += rb.macs(ch, cw);
  }
  return total;
}

Decoder::Decoder(nn::ParamStore& ps, const std::string& prefix, const EncoderConfig& cfg,
                 Rng& rng)
    : cfg_(cfg) {
  const int C = cfg_.base_channels;
  for (int s = 0; s < 3; ++s) {
    merge_[s] = nn::Conv2d(ps, prefix + ".m" + std::to_string(s), 2 * C, C, 3, 1, 1, rng);
    for (int b = 0; b < cfg_.res_blocks_per_stage; ++b)
      blocks_[s].emplace_back(ps, prefix + ".st" + std::to_string(s) + ".rb" + std::to_string(b),
                              C, rng);
  }
  for (int s = 0; s < 2; ++s)
    up_conv_[s] = nn::Conv2d(ps, prefix + ".up" + std::to_string(s), C, 4 * C, 3, 1, 1, rng);
  // small-gain head so the initial output stays near the bicubic baseline
  final_ = nn::Conv2d(ps, prefix + ".final", C, 3, 3, 1, 1, rng, 0.02);
}

Var Decoder::forward(const Var& fused_lr, const MatchedPyramid& matched,
                     const Var& lr_img) const {
  const int h = fused_lr->val.dim(1), w = fused_lr->val.dim(2);
  auto expect = [&](const Var& v, int eh, int ew, const char* name) {
    if (v->val.dim(1) != eh || v->val.dim(2) != ew)
      throw ShapeError(std::string("Decoder: ") + name + " is " + v->val.shape_str() +
                       ", expected " + std::to_string(eh) + "x" + std::to_string(ew));
  };
  expect(matched.s1, h, w, "matched s1");
  expect(matched.s2, 2 * h, 2 * w, "matched s2");
  expect(matched.s4, 4 * h, 4 * w, "matched s4");
  expect(lr_img, h, w, "lr image");

  const MatchedPyramid& m = matched;
  Var x = fused_lr;
  const Var* levels[3] = {&m.s1, &m.s2, &m.s4};
  for (int s = 0; s < 3; ++s) {
    x = nn::relu(merge_[s].forward(nn::concat_ch({x, *levels[s]})));
    for (const auto& rb : blocks_[s]) x = rb.forward(x);
    if (s < 2) x = nn::pixel_shuffle(up_conv_[s].forward(x), 2);
  }
  Var base = nn::leaf(img::bicubic_resize(lr_img->val, 4 * h, 4 * w, false));
  return nn::add(final_.forward(x), base);
}

int64_t Decoder::macs(int lr_h, int lr_w) const {
  int64_t total = 0;
  int h = lr_h, w = lr_w;
  for (int s = 0; s < 3; ++s) {
    total += merge_[s].macs(h, w);
    for (const auto& rb : blocks_[s]) total += rb.macs(h, w);
    if (s < 2) {
      total += up_conv_[s].macs(h, w);
      h *= 2;
      w *= 2;
    }
  }
  total += final_.macs(h, w);
  return total;
}

Critic::Critic(nn::ParamStore& ps, const std::string& prefix, int base_channels, Rng& rng) {
  const int c = base_channels;
  const int chans[6] = {3, c, 2 * c, 4 * c, 4 * c, 4 * c};
  for (int i = 0; i < 5; ++i)
    convs_.emplace_back(ps, prefix + ".c" + std::to_string(i), chans[i], chans[i + 1], 3, 2,
                        1, rng);
  head_ = nn::LinearLayer(ps, prefix + ".head", 4 * c, 1, rng);
}

Var Critic::score(const Var& img) const {
  require_img(img, 3, "Critic::score");
  Var x = img;
  for (const auto& cv : convs_) x = nn::relu(cv.forward(x));
  return head_.forward(nn::global_avg_pool(x));
}

Var Critic::logit(const Var& a, const Var& b) const {
  check_same_shape(a->val, b->val, "Critic::logit");
  return nn::sub(score(a), score(b));
}

Var Critic::discriminate(const Var& a, const Var& b) const { return nn::sigmoid(logit(a, b)); }

int64_t Critic::macs(int h, int w) const {
  int64_t total = 0;
  int ch = h, cw = w;
  for (const auto& cv : convs_) {
    ch = (ch + 1) / 2;
    cw = (cw + 1) / 2;
    total += cv.macs(ch, cw);
  }
  total += head_.macs();
  return total;
}

}  // namespace dsr::net
