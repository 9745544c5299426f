#pragma once

#include <string>
#include <vector>

#include "dsr/backbone.h"

namespace dsr::dmm {

struct MatchConfig {
  int patch = 3;
  int block_w = 8;  // dx
  int block_h = 8;  // dy
  int stride = 1;
  double eps = 1e-12;
  int coarse_search_stride = 1;

  void validate(int grid_h, int grid_w) const;
  int anchors_h() const { return (block_h + stride - 1) / stride; }
  int anchors_w() const { return (block_w + stride - 1) / stride; }
};

// One matched block: where it sits in the LR grid, where its reference crop
// sits in F_Ref-down, and the per-patch argmax indices / cosine scores.
struct BlockMatch {
  int block_y = 0, block_x = 0;  // top-left in the matching grid
  int src_y = 0, src_x = 0;      // top-left of the reference crop
  std::vector<int> index_map;    // N^k, row-major over anchors
  Tensor score_map;              // R^k, [1, ny, nx]
};

struct MatchResult {
  MatchConfig cfg;
  int grid_h = 0, grid_w = 0;
  std::vector<BlockMatch> blocks;
};

// <p/||p||, q/||q||>, zero vectors score 0. Result clamped to [-1, 1].
double normalized_cosine(const std::vector<double>& p, const std::vector<double>& q,
                         double eps = 1e-12);

// Patch vector (length C*patch*patch) anchored top-left at (y0,x0); reads are
// clamped to the window [wy, wy+wh) x [wx, wx+ww).
std::vector<double> patch_vector(const Tensor& f, int y0, int x0, int patch, int wy,
                                 int wx, int wh, int ww);

Tensor crop_chw(const Tensor& f, int y0, int x0, int h, int w);

// Global center-patch search: partitions f_lr into blocks, matches each
// block's center patch against every patch of f_refdown, records the
// edge-clamped crop position around the argmax (ties -> lowest index).
std::vector<BlockMatch> coarse_block_select(const Tensor& f_lr, const Tensor& f_refdown,
                                            const MatchConfig& cfg);

// Exhaustive per-patch matching inside one block pair; fills index/score maps.
void fine_match(const Tensor& b_lr, const Tensor& b_refdown, const MatchConfig& cfg,
                BlockMatch& out);

MatchResult match_features(const Tensor& f_lr, const Tensor& f_refdown,
                           const MatchConfig& cfg);

// Reassembles one full map on the (scale * grid) lattice from the matched
// reference patches, averaging overlaps by fold counts, then weights by the
// bicubically upsampled score maps. Reference implementation without autograd.
Tensor gather_weight_fold_ref(const Tensor& ref_level, const MatchResult& match,
                              int scale, const Tensor& scores);

// Packs the per-block score maps into [K, ny, nx].
Tensor stacked_scores(const MatchResult& match);

// Differentiable selected scores: recomputes R^k at the frozen argmax indices
// so gradients reach the fused features. Values equal stacked_scores(match).
nn::Var selected_scores(const nn::Var& f_lr, const nn::Var& f_refdown,
                        const MatchResult& match);

// Autograd gather: routes gradients into the reference level and the scores.
nn::Var gather_weight_fold(const nn::Var& ref_level, const nn::Var& scores,
                           const MatchResult& match, int scale);

// conv3x3/s1 + ReLU + deconv3x3/s2 + ReLU on the channel-concatenated pair;
// doubles the grid.
class FusionSet {
public:
  FusionSet(nn::ParamStore& ps, const std::string& prefix, int ch, Rng& rng,
            bool upsample = true);
  nn::Var forward(const nn::Var& d_feat, const nn::Var& f_feat) const;
  int64_t macs(int h, int w) const;
  bool upsamples() const { return upsample_; }

private:
  bool upsample_;
  nn::Conv2d conv_;
  nn::ConvT2d deconv_;
};

struct DmmOutput {
  nn::Var fused_lr;       // F_LR on the matching grid
  nn::Var fused_refdown;  // F_Ref-down on the matching grid
  net::MatchedPyramid matched;
  MatchResult match;
};

// Depth encoder + per-level fusion cascade + DRIMM.
class DMM {
public:
  DMM(nn::ParamStore& ps, const std::string& prefix, const net::EncoderConfig& enc_cfg,
      const MatchConfig& match_cfg, Rng& rng);

  net::FeaturePyramid depth_encode(const nn::Var& depth) const;

  // Fusion cascade from the coarsest level down to the matching grid.
  nn::Var fuse_pyramids(const net::FeaturePyramid& d_pyr,
                        const net::FeaturePyramid& f_pyr) const;

  DmmOutput forward(const net::FeaturePyramid& pyr_lr,
                    const net::FeaturePyramid& pyr_refdown,
                    const net::FeaturePyramid& pyr_ref, const nn::Var& d_lr,
                    const nn::Var& d_refdown) const;

  // Same pipeline with precomputed depth pyramids (lets callers reuse the
  // depth-encoder taps).
  DmmOutput forward_with_depth(const net::FeaturePyramid& pyr_lr,
                               const net::FeaturePyramid& pyr_refdown,
                               const net::FeaturePyramid& pyr_ref,
                               const net::FeaturePyramid& dpyr_lr,
                               const net::FeaturePyramid& dpyr_ref) const;

  const MatchConfig& match_config() const { return match_cfg_; }
  const net::Encoder& depth_encoder() const { return depth_enc_; }
  int64_t macs(int lr_h, int lr_w) const;

private:
  MatchConfig match_cfg_;
  net::Encoder depth_enc_;
  nn::Conv2d adjust_[3];  // 1x1 projections of the encoder levels
  std::vector<FusionSet> sets_;
};

// Debug dump: match_k{k}.json per block plus optional raw feature blobs.
void dump_match(const MatchResult& match, const std::string& dir);
void dump_feature(const Tensor& f, const std::string& name, const std::string& dir);

}  // namespace dsr::dmm
