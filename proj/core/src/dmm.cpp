#include "dsr/dmm.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dsr/image.h"

namespace dsr::dmm {

using nn::Var;

void MatchConfig::validate(int grid_h, int grid_w) const {
  if (patch < 1 || patch % 2 == 0) throw ConfigError("match patch size must be odd");
  if (stride < 1 || stride > patch) throw ConfigError("match stride must be in 1..patch");
  if (eps <= 0.0) throw ConfigError("match eps must be positive");
  if (block_h <= 0 || block_w <= 0) throw ConfigError("block dims must be positive");
  if (grid_h % block_h != 0 || grid_w % block_w != 0)
    throw ShapeError("match blocks " + std::to_string(block_w) + "x" +
                     std::to_string(block_h) + " do not divide grid " +
                     std::to_string(grid_w) + "x" + std::to_string(grid_h));
}

double normalized_cosine(const std::vector<double>& p, const std::vector<double>& q,
                         double eps) {
  if (p.size() != q.size())
    throw ShapeError("normalized_cosine: length mismatch " + std::to_string(p.size()) +
                     " vs " + std::to_string(q.size()));
  double sp = 0.0, sq = 0.0, dot = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    sp += p[i] * p[i];
    sq += q[i] * q[i];
    dot += p[i] * q[i];
  }
  const double np = std::sqrt(sp), nq = std::sqrt(sq);
  if (np <= eps || nq <= eps) return 0.0;
  return std::clamp(dot / (np * nq), -1.0, 1.0);
}

std::vector<double> patch_vector(const Tensor& f, int y0, int x0, int patch, int wy,
                                 int wx, int wh, int ww) {
  const int C = f.dim(0);
  std::vector<double> out(static_cast<size_t>(C) * patch * patch);
  size_t idx = 0;
  for (int c = 0; c < C; ++c)
    for (int u = 0; u < patch; ++u) {
      const int y = std::clamp(y0 + u, wy, wy + wh - 1);
      for (int v = 0; v < patch; ++v) {
        const int x = std::clamp(x0 + v, wx, wx + ww - 1);
        out[idx++] = f.at(c, y, x);
      }
    }
  return out;
}

Tensor crop_chw(const Tensor& f, int y0, int x0, int h, int w) {
  const int C = f.dim(0);
  if (y0 < 0 || x0 < 0 || y0 + h > f.dim(1) || x0 + w > f.dim(2))
    throw ShapeError("crop out of range");
  Tensor out({C, h, w});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = f.at(c, y0 + y, x0 + x);
  return out;
}

namespace {

// Rows of normalized patch vectors for every anchor in a window of f.
// Anchors are top-left positions (wy + ay*stride, wx + ax*stride); reads are
// clamped to the window. Zero-norm rows stay zero so their dots score 0.
struct PatchRows {
  std::vector<double> rows;  // [n][len]
  int n = 0, len = 0, ny = 0, nx = 0;
};

PatchRows normalized_patches(const Tensor& f, int wy, int wx, int wh, int ww, int patch,
                             int stride, double eps) {
  PatchRows pr;
  pr.ny = (wh + stride - 1) / stride;
  pr.nx = (ww + stride - 1) / stride;
  pr.n = pr.ny * pr.nx;
  const int C = f.dim(0);
  pr.len = C * patch * patch;
  pr.rows.resize(static_cast<size_t>(pr.n) * pr.len);
  for (int ay = 0; ay < pr.ny; ++ay)
    for (int ax = 0; ax < pr.nx; ++ax) {
      auto v = patch_vector(f, wy + ay * stride, wx + ax * stride, patch, wy, wx, wh, ww);
      double s = 0.0;
      for (double x : v) s += x * x;
      const double norm = std::sqrt(s);
      double* row = &pr.rows[static_cast<size_t>(ay * pr.nx + ax) * pr.len];
      if (norm > eps)
        for (int i = 0; i < pr.len; ++i) row[i] = v[static_cast<size_t>(i)] / norm;
    }
  return pr;
}

}  // namespace

std::vector<BlockMatch> coarse_block_select(const Tensor& f_lr, const Tensor& f_refdown,
                                            const MatchConfig& cfg) {
  check_same_shape(f_lr, f_refdown, "coarse_block_select");
  const int H = f_lr.dim(1), W = f_lr.dim(2);
  cfg.validate(H, W);

  // all candidate patches of the reference-down map
  PatchRows q = normalized_patches(f_refdown, 0, 0, H, W, cfg.patch,
                                   cfg.coarse_search_stride, cfg.eps);

  std::vector<BlockMatch> blocks;
  const int off_y = (cfg.block_h - cfg.patch) / 2;
  const int off_x = (cfg.block_w - cfg.patch) / 2;
  for (int by = 0; by < H; by += cfg.block_h)
    for (int bx = 0; bx < W; bx += cfg.block_w) {
      auto center = patch_vector(f_lr, by + off_y, bx + off_x, cfg.patch, by, bx,
                                 cfg.block_h, cfg.block_w);
      double s = 0.0;
      for (double v : center) s += v * v;
      const double norm = std::sqrt(s);
      std::vector<double> chat(center.size(), 0.0);
      if (norm > cfg.eps)
        for (size_t i = 0; i < center.size(); ++i) chat[i] = center[i] / norm;

      int best = 0;
      double best_score = -2.0;
      for (int j = 0; j < q.n; ++j) {
        const double* row = &q.rows[static_cast<size_t>(j) * q.len];
        double dot = 0.0;
        for (int l = 0; l < q.len; ++l) dot += chat[static_cast<size_t>(l)] * row[l];
        if (dot > best_score) {
          best_score = dot;
          best = j;
        }
      }
      const int best_y = (best / q.nx) * cfg.coarse_search_stride;
      const int best_x = (best % q.nx) * cfg.coarse_search_stride;

      BlockMatch bm;
      bm.block_y = by;
      bm.block_x = bx;
      bm.src_y = std::clamp(best_y - off_y, 0, H - cfg.block_h);
      bm.src_x = std::clamp(best_x - off_x, 0, W - cfg.block_w);
      blocks.push_back(std::move(bm));
    }
  return blocks;
}

void fine_match(const Tensor& b_lr, const Tensor& b_refdown, const MatchConfig& cfg,
                BlockMatch& out) {
  check_same_shape(b_lr, b_refdown, "fine_match");
  const int bh = b_lr.dim(1), bw = b_lr.dim(2);
  PatchRows p = normalized_patches(b_lr, 0, 0, bh, bw, cfg.patch, cfg.stride, cfg.eps);
  PatchRows q = normalized_patches(b_refdown, 0, 0, bh, bw, cfg.patch, cfg.stride, cfg.eps);

  out.index_map.assign(static_cast<size_t>(p.n), 0);
  out.score_map = Tensor({1, p.ny, p.nx});
  for (int i = 0; i < p.n; ++i) {
    const double* pr = &p.rows[static_cast<size_t>(i) * p.len];
    int best = 0;
    double best_score = -2.0;
    for (int j = 0; j < q.n; ++j) {
      const double* qr = &q.rows[static_cast<size_t>(j) * q.len];
      double dot = 0.0;
      for (int l = 0; l < p.len; ++l) dot += pr[l] * qr[l];
      if (dot > best_score) {
        best_score = dot;
        best = j;
      }
    }
    out.index_map[static_cast<size_t>(i)] = best;
    out.score_map[i] = std::clamp(best_score, -1.0, 1.0);
  }
}

MatchResult match_features(const Tensor& f_lr, const Tensor& f_refdown,
                           const MatchConfig& cfg) {
  MatchResult res;
  res.cfg = cfg;
  res.grid_h = f_lr.dim(1);
  res.grid_w = f_lr.dim(2);
  res.blocks = coarse_block_select(f_lr, f_refdown, cfg);
  for (auto& bm : res.blocks) {
    Tensor b_lr = crop_chw(f_lr, bm.block_y, bm.block_x, cfg.block_h, cfg.block_w);
    Tensor b_ref = crop_chw(f_refdown, bm.src_y, bm.src_x, cfg.block_h, cfg.block_w);
    fine_match(b_lr, b_ref, cfg, bm);
  }
  return res;
}

namespace {

// Shared fold loop. For every slot/patch-cell contribution it calls
// visit(c, write_y, write_x, read_y, read_x) on scale-expanded coordinates
// local to the block (write) and global to the reference level (read).
template <typename F>
void for_each_contribution(const BlockMatch& bm, const MatchConfig& cfg, int scale,
                           F&& visit) {
  const int ny = cfg.anchors_h(), nx = cfg.anchors_w();
  for (int i = 0; i < ny * nx; ++i) {
    const int iy = i / nx, ix = i % nx;
    const int j = bm.index_map[static_cast<size_t>(i)];
    const int jy = j / nx, jx = j % nx;
    for (int u = 0; u < cfg.patch; ++u) {
      const int wy1 = std::clamp(iy * cfg.stride + u, 0, cfg.block_h - 1);
      const int ry1 = bm.src_y + std::clamp(jy * cfg.stride + u, 0, cfg.block_h - 1);
      for (int v = 0; v < cfg.patch; ++v) {
        const int wx1 = std::clamp(ix * cfg.stride + v, 0, cfg.block_w - 1);
        const int rx1 = bm.src_x + std::clamp(jx * cfg.stride + v, 0, cfg.block_w - 1);
        for (int du = 0; du < scale; ++du)
          for (int dv = 0; dv < scale; ++dv)
            visit(scale * wy1 + du, scale * wx1 + dv, scale * ry1 + du, scale * rx1 + dv);
      }
    }
  }
}

void check_match_indices(const MatchResult& match) {
  const int n = match.cfg.anchors_h() * match.cfg.anchors_w();
  for (const auto& bm : match.blocks)
    for (int idx : bm.index_map)
      if (idx < 0 || idx >= n)
        throw CorruptMatch("index " + std::to_string(idx) + " out of range 0.." +
                           std::to_string(n - 1));
}

}  // namespace

Tensor gather_weight_fold_ref(const Tensor& ref_level, const MatchResult& match, int scale,
                              const Tensor& scores) {
  check_match_indices(match);
  const MatchConfig& cfg = match.cfg;
  const int C = ref_level.dim(0);
  if (ref_level.dim(1) != scale * match.grid_h || ref_level.dim(2) != scale * match.grid_w)
    throw ShapeError("gather: reference level " + ref_level.shape_str() +
                     " does not sit on scale " + std::to_string(scale) + " of the grid");
  const int sbh = scale * cfg.block_h, sbw = scale * cfg.block_w;
  Tensor out({C, scale * match.grid_h, scale * match.grid_w});

  const int ny = cfg.anchors_h(), nx = cfg.anchors_w();
  if (scores.rank() != 3 || scores.dim(0) != static_cast<int>(match.blocks.size()) ||
      scores.dim(1) != ny || scores.dim(2) != nx)
    throw ShapeError("gather: scores " + scores.shape_str() + " do not match blocks");

  for (size_t k = 0; k < match.blocks.size(); ++k) {
    const BlockMatch& bm = match.blocks[k];
    Tensor accum({C, sbh, sbw});
    Tensor count({1, sbh, sbw});
    for_each_contribution(bm, cfg, scale, [&](int wy, int wx, int ry, int rx) {
      for (int c = 0; c < C; ++c) accum.at(c, wy, wx) += ref_level.at(c, ry, rx);
      count.at(0, wy, wx) += 1.0;
    });
    // R^k upsampled to the block footprint
    Tensor r_k({1, ny, nx});
    for (int64_t i = 0; i < r_k.numel(); ++i)
      r_k[i] = scores[static_cast<int64_t>(k) * r_k.numel() + i];
    Tensor r_up = img::bicubic_resize(r_k, sbh, sbw, false);
    for (int wy = 0; wy < sbh; ++wy)
      for (int wx = 0; wx < sbw; ++wx) {
        const double cnt = count.at(0, wy, wx);
        if (cnt == 0.0) continue;
        const double wgt = r_up.at(0, wy, wx) / cnt;
        for (int c = 0; c < C; ++c)
          out.at(c, scale * bm.block_y + wy, scale * bm.block_x + wx) =
              accum.at(c, wy, wx) * wgt;
      }
  }
  return out;
}

Tensor stacked_scores(const MatchResult& match) {
  const int ny = match.cfg.anchors_h(), nx = match.cfg.anchors_w();
  Tensor out({static_cast<int>(match.blocks.size()), ny, nx});
  int64_t off = 0;
  for (const auto& bm : match.blocks) {
    for (int64_t i = 0; i < bm.score_map.numel(); ++i) out[off + i] = bm.score_map[i];
    off += bm.score_map.numel();
  }
  return out;
}

namespace {

// Enumerates the clamped coordinates and flat index of every patch element,
// mirroring patch_vector's layout.
template <typename F>
void for_each_patch_elem(int C, int patch, int y0, int x0, int wy, int wx, int wh, int ww,
                         F&& visit) {
  int idx = 0;
  for (int c = 0; c < C; ++c)
    for (int u = 0; u < patch; ++u) {
      const int y = std::clamp(y0 + u, wy, wy + wh - 1);
      for (int v = 0; v < patch; ++v) {
        const int x = std::clamp(x0 + v, wx, wx + ww - 1);
        visit(idx++, c, y, x);
      }
    }
}

}  // namespace

namespace {

// Cosine at the frozen argmax index, arithmetic identical to fine_match
// (normalize rows, then dot).
double score_at(const Tensor& flr, const Tensor& fref, const BlockMatch& bm,
                const MatchConfig& cfg, int i) {
  const int nx = cfg.anchors_w();
  const int iy = i / nx, ix = i % nx;
  const int j = bm.index_map[static_cast<size_t>(i)];
  const int jy = j / nx, jx = j % nx;
  auto p = patch_vector(flr, bm.block_y + iy * cfg.stride, bm.block_x + ix * cfg.stride,
                        cfg.patch, bm.block_y, bm.block_x, cfg.block_h, cfg.block_w);
  auto q = patch_vector(fref, bm.src_y + jy * cfg.stride, bm.src_x + jx * cfg.stride,
                        cfg.patch, bm.src_y, bm.src_x, cfg.block_h, cfg.block_w);
  double sp = 0.0, sq = 0.0;
  for (size_t l = 0; l < p.size(); ++l) {
    sp += p[l] * p[l];
    sq += q[l] * q[l];
  }
  const double np = std::sqrt(sp), nq = std::sqrt(sq);
  if (np <= cfg.eps || nq <= cfg.eps) return 0.0;
  double dot = 0.0;
  for (size_t l = 0; l < p.size(); ++l) dot += (p[l] / np) * (q[l] / nq);
  return std::clamp(dot, -1.0, 1.0);
}

}  // namespace

Var selected_scores(const Var& f_lr, const Var& f_refdown, const MatchResult& match) {
  // recomputed from the live features so the node stays differentiable;
  // equals stacked_scores(match) as long as the features are unchanged
  const int ny = match.cfg.anchors_h(), nx = match.cfg.anchors_w();
  Tensor value({static_cast<int>(match.blocks.size()), ny, nx});
  for (size_t k = 0; k < match.blocks.size(); ++k)
    for (int i = 0; i < ny * nx; ++i)
      value[static_cast<int64_t>(k) * ny * nx + i] =
          score_at(f_lr->val, f_refdown->val, match.blocks[k], match.cfg, i);
  MatchResult m = match;  // indices frozen in the graph
  return nn::custom_op(std::move(value), {f_lr, f_refdown}, [m](nn::Node& n) {
    const Tensor& flr = n.parents[0]->val;
    const Tensor& fref = n.parents[1]->val;
    const MatchConfig& cfg = m.cfg;
    const int C = flr.dim(0);
    const int nx = cfg.anchors_w();
    const int64_t per_block = static_cast<int64_t>(cfg.anchors_h()) * nx;
    const bool need_lr = n.parents[0]->needs_grad;
    const bool need_ref = n.parents[1]->needs_grad;
    if (!need_lr && !need_ref) return;
    Tensor* g_lr = need_lr ? &n.parents[0]->grad_buf() : nullptr;
    Tensor* g_ref = need_ref ? &n.parents[1]->grad_buf() : nullptr;

    for (size_t k = 0; k < m.blocks.size(); ++k) {
      const BlockMatch& bm = m.blocks[k];
      for (int64_t i = 0; i < per_block; ++i) {
        const double g = n.grad[static_cast<int64_t>(k) * per_block + i];
        if (g == 0.0) continue;
        const int iy = static_cast<int>(i) / nx, ix = static_cast<int>(i) % nx;
        const int j = bm.index_map[static_cast<size_t>(i)];
        const int jy = j / nx, jx = j % nx;

        auto p = patch_vector(flr, bm.block_y + iy * cfg.stride, bm.block_x + ix * cfg.stride,
                              cfg.patch, bm.block_y, bm.block_x, cfg.block_h, cfg.block_w);
        auto q = patch_vector(fref, bm.src_y + jy * cfg.stride, bm.src_x + jx * cfg.stride,
                              cfg.patch, bm.src_y, bm.src_x, cfg.block_h, cfg.block_w);
        double sp = 0.0, sq = 0.0, dotpq = 0.0;
        for (size_t l = 0; l < p.size(); ++l) {
          sp += p[l] * p[l];
          sq += q[l] * q[l];
          dotpq += p[l] * q[l];
        }
        const double np = std::sqrt(sp), nq = std::sqrt(sq);
        if (np <= cfg.eps || nq <= cfg.eps) continue;  // score pinned to 0
        const double r = dotpq / (np * nq);

        // dr/dp = (q/|q| - r p/|p|)/|p|, symmetric for q
        if (need_lr)
          for_each_patch_elem(C, cfg.patch, bm.block_y + iy * cfg.stride,
                              bm.block_x + ix * cfg.stride, bm.block_y, bm.block_x,
                              cfg.block_h, cfg.block_w, [&](int idx, int c, int y, int x) {
                                const double d =
                                    (q[static_cast<size_t>(idx)] / nq -
                                     r * p[static_cast<size_t>(idx)] / np) / np;
                                g_lr->at(c, y, x) += g * d;
                              });
        if (need_ref)
          for_each_patch_elem(C, cfg.patch, bm.src_y + jy * cfg.stride,
                              bm.src_x + jx * cfg.stride, bm.src_y, bm.src_x, cfg.block_h,
                              cfg.block_w, [&](int idx, int c, int y, int x) {
                                const double d =
                                    (p[static_cast<size_t>(idx)] / np -
                                     r * q[static_cast<size_t>(idx)] / nq) / nq;
                                g_ref->at(c, y, x) += g * d;
                              });
      }
    }
  });
}

Var gather_weight_fold(const Var& ref_level, const Var& scores, const MatchResult& match,
                       int scale) {
  Tensor out = gather_weight_fold_ref(ref_level->val, match, scale, scores->val);
  MatchResult m = match;
  return nn::custom_op(std::move(out), {ref_level, scores}, [m, scale](nn::Node& n) {
    const Tensor& ref = n.parents[0]->val;
    const Tensor& sc = n.parents[1]->val;
    const MatchConfig& cfg = m.cfg;
    const int C = ref.dim(0);
    const int sbh = scale * cfg.block_h, sbw = scale * cfg.block_w;
    const int ny = cfg.anchors_h(), nx = cfg.anchors_w();
    const bool need_ref = n.parents[0]->needs_grad;
    const bool need_sc = n.parents[1]->needs_grad;
    if (!need_ref && !need_sc) return;
    Tensor* g_ref = need_ref ? &n.parents[0]->grad_buf() : nullptr;
    Tensor* g_sc = need_sc ? &n.parents[1]->grad_buf() : nullptr;

    for (size_t k = 0; k < m.blocks.size(); ++k) {
      const BlockMatch& bm = m.blocks[k];
      Tensor accum({C, sbh, sbw});
      Tensor count({1, sbh, sbw});
      for_each_contribution(bm, cfg, scale, [&](int wy, int wx, int ry, int rx) {
        for (int c = 0; c < C; ++c) accum.at(c, wy, wx) += ref.at(c, ry, rx);
        count.at(0, wy, wx) += 1.0;
      });
      Tensor r_k({1, ny, nx});
      for (int64_t i = 0; i < r_k.numel(); ++i)
        r_k[i] = sc[static_cast<int64_t>(k) * r_k.numel() + i];
      Tensor r_up = img::bicubic_resize(r_k, sbh, sbw, false);

      // out_block = (accum/count) * r_up
      Tensor dbm({C, sbh, sbw});     // d accum (already divided by count)
      Tensor drup({1, sbh, sbw});    // d r_up
      for (int wy = 0; wy < sbh; ++wy)
        for (int wx = 0; wx < sbw; ++wx) {
          const double cnt = count.at(0, wy, wx);
          if (cnt == 0.0) continue;
          double acc_dr = 0.0;
          for (int c = 0; c < C; ++c) {
            const double dw =
                n.grad.at(c, scale * bm.block_y + wy, scale * bm.block_x + wx);
            acc_dr += dw * (accum.at(c, wy, wx) / cnt);
            dbm.at(c, wy, wx) = dw * r_up.at(0, wy, wx) / cnt;
          }
          drup.at(0, wy, wx) = acc_dr;
        }
      if (need_sc) {
        Tensor dr = img::bicubic_resize_adjoint(drup, ny, nx);
        for (int64_t i = 0; i < dr.numel(); ++i)
          (*g_sc)[static_cast<int64_t>(k) * dr.numel() + i] += dr[i];
      }
      if (need_ref)
        for_each_contribution(bm, cfg, scale, [&](int wy, int wx, int ry, int rx) {
          for (int c = 0; c < C; ++c) g_ref->at(c, ry, rx) += dbm.at(c, wy, wx);
        });
    }
  });
}

// ---- fusion / DMM ----

FusionSet::FusionSet(nn::ParamStore& ps, const std::string& prefix, int ch, Rng& rng,
                     bool upsample)
    : upsample_(upsample),
      conv_(ps, prefix + ".conv", 2 * ch, ch, 3, 1, 1, rng),
      deconv_(ps, prefix + ".deconv", ch, ch, 3, upsample ? 2 : 1, 1, upsample ? 1 : 0,
              rng) {}

Var FusionSet::forward(const Var& d_feat, const Var& f_feat) const {
  if (d_feat->val.dim(1) != f_feat->val.dim(1) || d_feat->val.dim(2) != f_feat->val.dim(2))
    throw ShapeError("FusionSet: grids differ, " + d_feat->val.shape_str() + " vs " +
                     f_feat->val.shape_str());
  Var x = nn::relu(conv_.forward(nn::concat_ch({d_feat, f_feat})));
  return nn::relu(deconv_.forward(x));
}

int64_t FusionSet::macs(int h, int w) const {
  return conv_.macs(h, w) + deconv_.macs(h, w);
}

DMM::DMM(nn::ParamStore& ps, const std::string& prefix, const net::EncoderConfig& enc_cfg,
         const MatchConfig& match_cfg, Rng& rng)
    : match_cfg_(match_cfg), depth_enc_(ps, prefix + ".denc", enc_cfg, 1, rng) {
  const int C = enc_cfg.base_channels;
  for (int i = 0; i < 3; ++i)
    adjust_[i] = nn::Conv2d(ps, prefix + ".adj" + std::to_string(i), C, C, 1, 1, 0, rng);
  sets_.emplace_back(ps, prefix + ".set0", C, rng, true);
  sets_.emplace_back(ps, prefix + ".set1", C, rng, true);
  sets_.emplace_back(ps, prefix + ".set2", C, rng, false);
}

net::FeaturePyramid DMM::depth_encode(const Var& depth) const {
  if (depth->val.dim(0) != 1)
    throw ShapeError("depth_encode: expected single-channel input, got " +
                     depth->val.shape_str());
  return depth_enc_.forward(depth);
}

Var DMM::fuse_pyramids(const net::FeaturePyramid& d_pyr,
                       const net::FeaturePyramid& f_pyr) const {
  Var x = sets_[0].forward(d_pyr.f1, nn::relu(adjust_[0].forward(f_pyr.f1)));
  x = sets_[1].forward(d_pyr.f2, nn::add(nn::relu(adjust_[1].forward(f_pyr.f2)), x));
  return sets_[2].forward(d_pyr.f4, nn::add(nn::relu(adjust_[2].forward(f_pyr.f4)), x));
}

DmmOutput DMM::forward(const net::FeaturePyramid& pyr_lr,
                       const net::FeaturePyramid& pyr_refdown,
                       const net::FeaturePyramid& pyr_ref, const Var& d_lr,
                       const Var& d_refdown) const {
  return forward_with_depth(pyr_lr, pyr_refdown, pyr_ref, depth_encode(d_lr),
                            depth_encode(d_refdown));
}

DmmOutput DMM::forward_with_depth(const net::FeaturePyramid& pyr_lr,
                                  const net::FeaturePyramid& pyr_refdown,
                                  const net::FeaturePyramid& pyr_ref,
                                  const net::FeaturePyramid& dpyr_lr,
                                  const net::FeaturePyramid& dpyr_ref) const {
  DmmOutput out;
  out.fused_lr = fuse_pyramids(dpyr_lr, pyr_lr);
  out.fused_refdown = fuse_pyramids(dpyr_ref, pyr_refdown);

  const int gh = out.fused_lr->val.dim(1), gw = out.fused_lr->val.dim(2);
  auto expect = [&](const Var& v, int s, const char* name) {
    if (v->val.dim(1) != s * gh || v->val.dim(2) != s * gw)
      throw ShapeError(std::string("DMM: reference level ") + name + " is " +
                       v->val.shape_str() + ", expected scale " + std::to_string(s) +
                       " of " + std::to_string(gw) + "x" + std::to_string(gh));
  };
  expect(pyr_ref.f1, 1, "f1");
  expect(pyr_ref.f2, 2, "f2");
  expect(pyr_ref.f4, 4, "f4");

  out.match = match_features(out.fused_lr->val, out.fused_refdown->val, match_cfg_);
  Var scores = selected_scores(out.fused_lr, out.fused_refdown, out.match);
  out.matched.s1 = gather_weight_fold(pyr_ref.f1, scores, out.match, 1);
  out.matched.s2 = gather_weight_fold(pyr_ref.f2, scores, out.match, 2);
  out.matched.s4 = gather_weight_fold(pyr_ref.f4, scores, out.match, 4);
  return out;
}

int64_t DMM::macs(int lr_h, int lr_w) const {
  // depth encoder runs on both depth maps; fusion runs on both branches
  int64_t enc = depth_enc_.macs(lr_h, lr_w);
  int64_t adj = adjust_[0].macs(lr_h / 4, lr_w / 4) + adjust_[1].macs(lr_h / 2, lr_w / 2) +
                adjust_[2].macs(lr_h, lr_w);
  int64_t sets = sets_[0].macs(lr_h / 4, lr_w / 4) + sets_[1].macs(lr_h / 2, lr_w / 2) +
                 sets_[2].macs(lr_h, lr_w);
  return 2 * (enc + adj + sets);
}

void dump_match(const MatchResult& match, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (size_t k = 0; k < match.blocks.size(); ++k) {
    const auto& bm = match.blocks[k];
    nlohmann::json j;
    j["k"] = k;
    j["block_y"] = bm.block_y;
    j["block_x"] = bm.block_x;
    j["src_y"] = bm.src_y;
    j["src_x"] = bm.src_x;
    j["index_map"] = bm.index_map;
    std::vector<double> scores(bm.score_map.data(),
                               bm.score_map.data() + bm.score_map.numel());
    j["score_map"] = scores;
    std::ofstream(std::filesystem::path(dir) / ("match_k" + std::to_string(k) + ".json"))
        << j.dump(2) << "\n";
  }
}

void dump_feature(const Tensor& f, const std::string& name, const std::string& dir) {
  std::filesystem::create_directories(dir);
  img::write_f32((std::filesystem::path(dir) / (name + ".f32")).string(), f);
  nlohmann::json j;
  j["shape"] = f.shape();
  std::ofstream(std::filesystem::path(dir) / (name + ".json")) << j.dump() << "\n";
}

}  // namespace dsr::dmm
