#pragma once

#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "dsr/backbone.h"
#include "dsr/dmm.h"

namespace dsr::net {

struct ModelConfig {
  EncoderConfig encoder;      // teacher: 4 res blocks/stage, student: 2
  DepthNetConfig depth_net;
  dmm::MatchConfig match;
  int critic_channels = 32;
  uint64_t init_seed = 1;

  static ModelConfig teacher_default();
  static ModelConfig student_default();
  // small everything: fits the matching/oracle scales used in CI
  static ModelConfig toy(int base_channels, int res_blocks, uint64_t seed);

  void validate() const;
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Where the DMM's depth input comes from.
enum class DepthSource { network, ground_truth, zeros };

struct ModelStats {
  int64_t params = 0;  // inference path (depth net + encoders + dmm + decoder)
  int64_t macs = 0;    // multiply-accumulates at a given LR input
};

// The full network: depth extraction U-Net, shared image encoder, DMM,
// decoder, and the relativistic critic used only during adversarial training.
class DsrNet {
public:
  explicit DsrNet(const ModelConfig& cfg);

  struct Forward {
    nn::Var sr;
    nn::Var d_lr, d_refdown;  // depth maps fed to the DMM
    dmm::DmmOutput dmm_out;
    std::vector<nn::Var> enc_taps;    // encoder stage outputs on the LR input
    std::vector<nn::Var> depth_taps;  // depth-encoder stage outputs on d_lr
  };

  Forward forward(const Tensor& lr, const Tensor& ref, const Tensor& ref_down,
                  DepthSource source, const Tensor* gt_d_lr = nullptr,
                  const Tensor* gt_d_refdown = nullptr) const;

  const Critic& critic() const { return *critic_; }
  const UNet& unet() const { return *unet_; }
  const Encoder& encoder() const { return *encoder_; }
  const dmm::DMM& depth_matching() const { return *dmm_; }

  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }
  const ModelConfig& config() const { return cfg_; }

  // Symbolic parameter/MAC counts for the inference path at an LR input
  // (reference at 4x). The critic is training-only and excluded.
  ModelStats stats(int lr_h, int lr_w) const;

private:
  ModelConfig cfg_;
  nn::ParamStore ps_;
  std::unique_ptr<UNet> unet_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<dmm::DMM> dmm_;
  std::unique_ptr<Decoder> decoder_;
  std::unique_ptr<Critic> critic_;
};

}  // namespace dsr::net
