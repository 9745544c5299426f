#include "dsr/dsrnet.h"

namespace dsr::net {

using nn::Var;

ModelConfig ModelConfig::teacher_default() {
  ModelConfig cfg;
  cfg.encoder.base_channels = 64;
  cfg.encoder.res_blocks_per_stage = 4;
  cfg.depth_net.base_channels = 32;
  cfg.depth_net.unet_depth = 4;
  return cfg;
}

ModelConfig ModelConfig::student_default() {
  ModelConfig cfg = teacher_default();
  cfg.encoder.res_blocks_per_stage = 2;
  return cfg;
}

ModelConfig ModelConfig::toy(int base_channels, int res_blocks, uint64_t seed) {
  ModelConfig cfg;
  cfg.encoder.base_channels = base_channels;
  cfg.encoder.res_blocks_per_stage = res_blocks;
  cfg.depth_net.base_channels = base_channels;
  cfg.depth_net.unet_depth = 2;
  cfg.match.block_h = cfg.match.block_w = 4;
  cfg.critic_channels = base_channels;
  cfg.init_seed = seed;
  return cfg;
}

void ModelConfig::validate() const {
  encoder.validate();
  depth_net.validate();
  if (critic_channels <= 0) throw ConfigError("critic_channels must be positive");
}

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["encoder"]["base_channels"] = cfg.encoder.base_channels;
  j["encoder"]["res_blocks_per_stage"] = cfg.encoder.res_blocks_per_stage;
  j["depth_net"]["unet_depth"] = cfg.depth_net.unet_depth;
  j["depth_net"]["base_channels"] = cfg.depth_net.base_channels;
  j["match"]["patch"] = cfg.match.patch;
  j["match"]["block_w"] = cfg.match.block_w;
  j["match"]["block_h"] = cfg.match.block_h;
  j["match"]["stride"] = cfg.match.stride;
  j["match"]["eps"] = cfg.match.eps;
  j["match"]["coarse_search_stride"] = cfg.match.coarse_search_stride;
  j["critic_channels"] = cfg.critic_channels;
  j["init_seed"] = cfg.init_seed;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.encoder.base_channels = j.at("encoder").at("base_channels");
  cfg.encoder.res_blocks_per_stage = j.at("encoder").at("res_blocks_per_stage");
  cfg.depth_net.unet_depth = j.at("depth_net").at("unet_depth");
  cfg.depth_net.base_channels = j.at("depth_net").at("base_channels");
  cfg.match.patch = j.at("match").at("patch");
  cfg.match.block_w = j.at("match").at("block_w");
  cfg.match.block_h = j.at("match").at("block_h");
  cfg.match.stride = j.at("match").at("stride");
  cfg.match.eps = j.at("match").at("eps");
  cfg.match.coarse_search_stride = j.at("match").at("coarse_search_stride");
  cfg.critic_channels = j.at("critic_channels");
  cfg.init_seed = j.at("init_seed");
  return cfg;
}

DsrNet::DsrNet(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.init_seed);
  unet_ = std::make_unique<UNet>(ps_, "unet", cfg_.depth_net, rng);
  encoder_ = std::make_unique<Encoder>(ps_, "encoder", cfg_.encoder, 3, rng);
  dmm_ = std::make_unique<dmm::DMM>(ps_, "dmm", cfg_.encoder, cfg_.match, rng);
  decoder_ = std::make_unique<Decoder>(ps_, "decoder", cfg_.encoder, rng);
  critic_ = std::make_unique<Critic>(ps_, "critic", cfg_.critic_channels, rng);
}

DsrNet::Forward DsrNet::forward(const Tensor& lr, const Tensor& ref, const Tensor& ref_down,
                                DepthSource source, const Tensor* gt_d_lr,
                                const Tensor* gt_d_refdown) const {
  if (lr.rank() != 3 || lr.dim(0) != 3) throw ShapeError("forward: lr must be [3,H,W]");
  check_same_shape(lr, ref_down, "forward: lr vs ref_down");
  if (ref.dim(1) != 4 * lr.dim(1) || ref.dim(2) != 4 * lr.dim(2))
    throw ShapeError("forward: ref " + ref.shape_str() + " is not 4x of lr " +
                     lr.shape_str());

  Forward out;
  Var lr_v = nn::leaf(lr);
  Var ref_v = nn::leaf(ref);
  Var refdn_v = nn::leaf(ref_down);

  switch (source) {
    case DepthSource::network: {
      auto [dl, dr] = depth_extract(*unet_, lr_v, refdn_v);
      out.d_lr = dl;
      out.d_refdown = dr;
      break;
    }
    case DepthSource::ground_truth: {
      if (!gt_d_lr || !gt_d_refdown)
        throw ConfigError("forward: ground-truth depth source needs depth tensors");
      out.d_lr = nn::leaf(*gt_d_lr);
      out.d_refdown = nn::leaf(*gt_d_refdown);
      break;
    }
    case DepthSource::zeros: {
      out.d_lr = nn::leaf(Tensor({1, lr.dim(1), lr.dim(2)}));
      out.d_refdown = nn::leaf(Tensor({1, lr.dim(1), lr.dim(2)}));
      break;
    }
  }

  out.enc_taps = encoder_->forward_taps(lr_v);
  FeaturePyramid pyr_lr{out.enc_taps[2], out.enc_taps[1], out.enc_taps[0]};
  FeaturePyramid pyr_refdown = encoder_->forward(refdn_v);
  FeaturePyramid pyr_ref = encoder_->forward(ref_v);

  out.depth_taps = dmm_->depth_encoder().forward_taps(out.d_lr);
  FeaturePyramid dpyr_lr{out.depth_taps[2], out.depth_taps[1], out.depth_taps[0]};
  FeaturePyramid dpyr_ref = dmm_->depth_encoder().forward(out.d_refdown);

  out.dmm_out = dmm_->forward_with_depth(pyr_lr, pyr_refdown, pyr_ref, dpyr_lr, dpyr_ref);
  out.sr = decoder_->forward(out.dmm_out.fused_lr, out.dmm_out.matched, lr_v);
  return out;
}

ModelStats DsrNet::stats(int lr_h, int lr_w) const {
  ModelStats st;
  st.params = ps_.param_count() - ps_.param_count_prefix("critic.");
  st.macs = 2 * unet_->macs(lr_h, lr_w);                // lr and ref_down
  st.macs += 2 * encoder_->macs(lr_h, lr_w);            // lr and ref_down
  st.macs += encoder_->macs(4 * lr_h, 4 * lr_w);        // ref
  st.macs += dmm_->macs(lr_h, lr_w);
  st.macs += decoder_->macs(lr_h, lr_w);
  return st;
}

}  // namespace dsr::net
