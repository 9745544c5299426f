#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "dsr/dmm.h"
#include "match_oracle.h"
#include "oracles.h"

using namespace dsr;
using nn::Var;

namespace {

dmm::MatchConfig small_cfg(int block = 4, int patch = 3, int stride = 1) {
  dmm::MatchConfig cfg;
  cfg.block_h = cfg.block_w = block;
  cfg.patch = patch;
  cfg.stride = stride;
  return cfg;
}

// Synthetic match with chosen indices/scores for gather tests.
dmm::MatchResult manual_match(int grid_h, int grid_w, const dmm::MatchConfig& cfg,
                              bool identity_indices, double score) {
  dmm::MatchResult m;
  m.cfg = cfg;
  m.grid_h = grid_h;
  m.grid_w = grid_w;
  const int ny = cfg.anchors_h(), nx = cfg.anchors_w();
  for (int by = 0; by < grid_h; by += cfg.block_h)
    for (int bx = 0; bx < grid_w; bx += cfg.block_w) {
      dmm::BlockMatch bm;
      bm.block_y = by;
      bm.block_x = bx;
      bm.src_y = by;
      bm.src_x = bx;
      bm.score_map = Tensor({1, ny, nx}, score);
      for (int i = 0; i < ny * nx; ++i)
        bm.index_map.push_back(identity_indices ? i : (i + 1) % (ny * nx));
      m.blocks.push_back(std::move(bm));
    }
  return m;
}

}  // namespace

TEST_CASE("normalized_cosine hand values") {
  CHECK(dmm::normalized_cosine({3.0, -2.0, 0.5}, {3.0, -2.0, 0.5}) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(dmm::normalized_cosine({1.0, 0.0}, {1.0, 1.0}) ==
        doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(dmm::normalized_cosine({0.0, 0.0}, {5.0, -1.0}) == 0.0);
  CHECK(dmm::normalized_cosine({1.0, 2.0}, {-1.0, -2.0}) ==
        doctest::Approx(-1.0).epsilon(1e-12));
  CHECK_THROWS_AS(dmm::normalized_cosine({1.0}, {1.0, 2.0}), ShapeError);
}

TEST_CASE("fine_match identity: self-matching block") {
  Rng rng(5);
  Tensor b = oracle::random_tensor({4, 8, 8}, rng);
  dmm::BlockMatch bm;
  dmm::fine_match(b, b, small_cfg(8), bm);
  const int n = 64;
  for (int i = 0; i < n; ++i) {
    CHECK(bm.index_map[i] == i);
    CHECK(bm.score_map[i] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("fine_match equals the exhaustive oracle on random blocks") {
  Rng rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    const int c = rng.uniform_int(1, 6);
    Tensor a = oracle::random_tensor({c, 8, 8}, rng);
    Tensor b = oracle::random_tensor({c, 8, 8}, rng);
    auto cfg = small_cfg(8);
    dmm::BlockMatch bm;
    dmm::fine_match(a, b, cfg, bm);
    auto ref = oracle::fine_match_oracle(a, b, cfg);
    REQUIRE(bm.index_map.size() == ref.indices.size());
    for (size_t i = 0; i < ref.indices.size(); ++i) {
      CHECK(bm.index_map[i] == ref.indices[i]);
      CHECK(std::fabs(bm.score_map[static_cast<int64_t>(i)] - ref.scores[i]) <=
            1e-5 * std::max(1.0, std::fabs(ref.scores[i])));
    }
  }
}

TEST_CASE("fine_match range contract") {
  Rng rng(23);
  Tensor a = oracle::random_tensor({3, 8, 8}, rng, -5.0, 5.0);
  Tensor b = oracle::random_tensor({3, 8, 8}, rng, -5.0, 5.0);
  dmm::BlockMatch bm;
  dmm::fine_match(a, b, small_cfg(8), bm);
  for (int idx : bm.index_map) {
    CHECK(idx >= 0);
    CHECK(idx < 64);
  }
  CHECK(bm.score_map.min() >= -1.0);
  CHECK(bm.score_map.max() <= 1.0);
}

TEST_CASE("fine_match permutation equivariance on non-overlapping tiles") {
  Rng rng(29);
  auto cfg = small_cfg(6, 3, 3);  // 2x2 grid of non-overlapping 3x3 tiles
  Tensor a = oracle::random_tensor({2, 6, 6}, rng);
  Tensor b = oracle::random_tensor({2, 6, 6}, rng);
  dmm::BlockMatch base;
  dmm::fine_match(a, b, cfg, base);

  // permute b's tiles cyclically: tile j -> slot (j+1) % 4
  Tensor b2({2, 6, 6});
  auto tile_pos = [](int j) { return std::pair{(j / 2) * 3, (j % 2) * 3}; };
  for (int j = 0; j < 4; ++j) {
    auto [sy, sx] = tile_pos(j);
    auto [dy, dx] = tile_pos((j + 1) % 4);
    for (int c = 0; c < 2; ++c)
      for (int u = 0; u < 3; ++u)
        for (int v = 0; v < 3; ++v) b2.at(c, dy + u, dx + v) = b.at(c, sy + u, sx + v);
  }
  dmm::BlockMatch perm;
  dmm::fine_match(a, b2, cfg, perm);
  for (size_t i = 0; i < base.index_map.size(); ++i)
    CHECK(perm.index_map[i] == (base.index_map[i] + 1) % 4);
  std::multiset<double> s1(base.score_map.data(), base.score_map.data() + 4);
  std::multiset<double> s2(perm.score_map.data(), perm.score_map.data() + 4);
  auto it2 = s2.begin();
  for (auto v : s1) CHECK(*it2++ == doctest::Approx(v).epsilon(1e-9));
}

TEST_CASE("scores invariant to positive per-patch rescaling") {
  Rng rng(31);
  auto cfg = small_cfg(6, 3, 3);
  Tensor a = oracle::random_tensor({2, 6, 6}, rng);
  Tensor b = oracle::random_tensor({2, 6, 6}, rng);
  dmm::BlockMatch base;
  dmm::fine_match(a, b, cfg, base);

  Tensor b2 = b;
  for (int j = 0; j < 4; ++j) {
    const double s = rng.uniform(0.2, 4.0);
    const int ty = (j / 2) * 3, tx = (j % 2) * 3;
    for (int c = 0; c < 2; ++c)
      for (int u = 0; u < 3; ++u)
        for (int v = 0; v < 3; ++v) b2.at(c, ty + u, tx + v) *= s;
  }
  dmm::BlockMatch scaled;
  dmm::fine_match(a, b2, cfg, scaled);
  for (size_t i = 0; i < base.index_map.size(); ++i)
    CHECK(scaled.index_map[i] == base.index_map[i]);
  CHECK(scaled.score_map.max_abs_diff(base.score_map) < 1e-9);
}

TEST_CASE("coarse_block_select identity and oracle agreement") {
  Rng rng(37);
  auto cfg = small_cfg(4);
  SUBCASE("identity") {
    Tensor f = oracle::random_tensor({3, 8, 8}, rng);
    auto blocks = dmm::coarse_block_select(f, f, cfg);
    REQUIRE(blocks.size() == 4);
    for (const auto& bm : blocks) {
      CHECK(bm.src_y == bm.block_y);
      CHECK(bm.src_x == bm.block_x);
    }
  }
  SUBCASE("random oracle") {
    for (int trial = 0; trial < 20; ++trial) {
      const int c = rng.uniform_int(1, 4);
      Tensor a = oracle::random_tensor({c, 16, 16}, rng);
      Tensor b = oracle::random_tensor({c, 16, 16}, rng);
      auto got = dmm::coarse_block_select(a, b, cfg);
      auto want = oracle::coarse_oracle(a, b, cfg);
      REQUIRE(got.size() == want.size());
      for (size_t k = 0; k < got.size(); ++k) {
        CHECK(got[k].src_y == want[k].src_y);
        CHECK(got[k].src_x == want[k].src_x);
      }
    }
  }
  SUBCASE("grid not divisible by blocks") {
    Tensor a = oracle::random_tensor({2, 10, 10}, rng);
    CHECK_THROWS_AS(dmm::coarse_block_select(a, a, small_cfg(4)), ShapeError);
  }
}

TEST_CASE("crop triple shapes") {
  Rng rng(41);
  auto cfg = small_cfg(4);
  Tensor f_lr = oracle::random_tensor({3, 8, 8}, rng);
  Tensor f_ref = oracle::random_tensor({3, 8, 8}, rng);
  auto blocks = dmm::coarse_block_select(f_lr, f_ref, cfg);
  Tensor ref_s2 = oracle::random_tensor({3, 16, 16}, rng);
  for (const auto& bm : blocks) {
    Tensor b_lr = dmm::crop_chw(f_lr, bm.block_y, bm.block_x, 4, 4);
    Tensor b_ref = dmm::crop_chw(f_ref, bm.src_y, bm.src_x, 4, 4);
    Tensor b_s2 = dmm::crop_chw(ref_s2, 2 * bm.src_y, 2 * bm.src_x, 8, 8);
    CHECK(b_lr.shape() == std::vector<int>{3, 4, 4});
    CHECK(b_ref.shape() == std::vector<int>{3, 4, 4});
    CHECK(b_s2.shape() == std::vector<int>{3, 8, 8});
  }
}

TEST_CASE("gather identity reconstruction (non-overlapping, R=1)") {
  Rng rng(43);
  auto cfg = small_cfg(6, 3, 3);
  auto m = manual_match(6, 6, cfg, true, 1.0);
  for (int scale : {1, 2}) {
    Tensor ref = oracle::random_tensor({3, 6 * scale, 6 * scale}, rng);
    Tensor out = dmm::gather_weight_fold_ref(ref, m, scale, dmm::stacked_scores(m));
    CHECK(out.max_abs_diff(ref) < 1e-12);
  }
}

TEST_CASE("gather matches the scatter/accumulate oracle with overlap") {
  Rng rng(47);
  auto cfg = small_cfg(4, 3, 1);
  Tensor f_lr = oracle::random_tensor({2, 8, 8}, rng);
  Tensor f_ref = oracle::random_tensor({2, 8, 8}, rng);
  auto m = dmm::match_features(f_lr, f_ref, cfg);
  Tensor scores = dmm::stacked_scores(m);
  for (int scale : {1, 2, 4}) {
    Tensor ref = oracle::random_tensor({3, 8 * scale, 8 * scale}, rng);
    Tensor got = dmm::gather_weight_fold_ref(ref, m, scale, scores);
    Tensor want = oracle::scatter_fold_oracle(ref, m, scale, scores);
    CHECK(got.max_abs_diff(want) < 1e-6);
  }
}

TEST_CASE("two-patch toy fold average with R=0.5") {
  auto cfg = small_cfg(2, 3, 1);  // anchors overlap heavily in a 2x2 block
  auto m = manual_match(2, 2, cfg, true, 0.5);
  Tensor ref({1, 2, 2});
  ref[0] = 1.0; ref[1] = 2.0; ref[2] = 3.0; ref[3] = 4.0;
  Tensor out = dmm::gather_weight_fold_ref(ref, m, 1, dmm::stacked_scores(m));
  // identity indices + fold-average reproduce ref, then scaled by R
  Tensor expect = ref;
  expect *= 0.5;
  CHECK(out.max_abs_diff(expect) < 1e-12);
}

TEST_CASE("gather output is linear in the scores") {
  Rng rng(53);
  auto cfg = small_cfg(4, 3, 1);
  Tensor f_lr = oracle::random_tensor({2, 8, 8}, rng);
  Tensor f_ref = oracle::random_tensor({2, 8, 8}, rng);
  auto m = dmm::match_features(f_lr, f_ref, cfg);
  Tensor ref = oracle::random_tensor({2, 16, 16}, rng);
  Tensor s1 = dmm::stacked_scores(m);
  Tensor s3 = s1;
  s3 *= 3.0;
  Tensor out1 = dmm::gather_weight_fold_ref(ref, m, 2, s1);
  Tensor out3 = dmm::gather_weight_fold_ref(ref, m, 2, s3);
  out1 *= 3.0;
  CHECK(out1.max_abs_diff(out3) < 1e-9);
}

TEST_CASE("gather rejects out-of-range indices") {
  auto cfg = small_cfg(4, 3, 1);
  auto m = manual_match(4, 4, cfg, true, 1.0);
  m.blocks[0].index_map[3] = 99;
  Tensor ref({1, 4, 4});
  CHECK_THROWS_AS(dmm::gather_weight_fold_ref(ref, m, 1, dmm::stacked_scores(m)),
                  CorruptMatch);
}

TEST_CASE("gather gradients match finite differences (indices frozen)") {
  Rng rng(59);
  auto cfg = small_cfg(4, 3, 1);
  Tensor f_lr = oracle::random_tensor({2, 4, 4}, rng);
  Tensor f_ref = oracle::random_tensor({2, 4, 4}, rng);
  auto m = dmm::match_features(f_lr, f_ref, cfg);
  for (int scale : {1, 2}) {
    auto ref = nn::param(oracle::random_tensor({2, 4 * scale, 4 * scale}, rng));
    auto sc = nn::param(dmm::stacked_scores(m));
    const double err = oracle::max_rel_grad_error(
        [&] {
          return nn::mean_all(nn::square(dmm::gather_weight_fold(ref, sc, m, scale)));
        },
        {ref, sc});
    CAPTURE(scale);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("selected_scores gradients match finite differences") {
  Rng rng(61);
  auto cfg = small_cfg(4, 3, 1);
  auto f_lr = nn::param(oracle::random_tensor({2, 4, 4}, rng));
  auto f_ref = nn::param(oracle::random_tensor({2, 4, 4}, rng));
  auto m = dmm::match_features(f_lr->val, f_ref->val, cfg);
  CHECK(dmm::stacked_scores(m).max_abs_diff(
            dmm::selected_scores(f_lr, f_ref, m)->val) == 0.0);
  const double err = oracle::max_rel_grad_error(
      [&] { return nn::mean_all(nn::square(dmm::selected_scores(f_lr, f_ref, m))); },
      {f_lr, f_ref});
  CHECK(err < 1e-4);
}

TEST_CASE("FusionSet contract: stride arithmetic, nonnegativity, gradients") {
  Rng rng(67);
  nn::ParamStore ps;
  dmm::FusionSet fs(ps, "fuse", 3, rng);
  auto d = nn::param(oracle::random_tensor({3, 4, 5}, rng));
  auto f = nn::param(oracle::random_tensor({3, 4, 5}, rng));
  auto y = fs.forward(d, f);
  CHECK(y->val.dim(1) == 8);
  CHECK(y->val.dim(2) == 10);
  CHECK(y->val.min() >= 0.0);

  auto bad = nn::param(oracle::random_tensor({3, 6, 5}, rng));
  CHECK_THROWS_AS(fs.forward(d, bad), ShapeError);

  std::vector<nn::Var> inputs = {d, f};
  for (const auto& [name, p] : ps.items()) inputs.push_back(p);
  const double err = oracle::max_rel_grad_error(
      [&] { return nn::mean_all(nn::square(fs.forward(d, f))); }, inputs);
  CHECK(err < 1e-4);
}

TEST_CASE("depth_encode: shapes, single-channel contract, parameter count") {
  Rng rng(71);
  nn::ParamStore ps;
  net::EncoderConfig ec;
  ec.base_channels = 8;
  ec.res_blocks_per_stage = 2;
  dmm::MatchConfig mc = small_cfg(4);
  dmm::DMM m(ps, "dmm", ec, mc, rng);

  auto d = nn::leaf(oracle::random_tensor({1, 16, 12}, rng, 0.1, 2.0));
  auto pyr = m.depth_encode(d);
  CHECK(pyr.f4->val.shape() == std::vector<int>{8, 16, 12});
  CHECK(pyr.f2->val.shape() == std::vector<int>{8, 8, 6});
  CHECK(pyr.f1->val.shape() == std::vector<int>{8, 4, 3});

  auto rgb = nn::leaf(oracle::random_tensor({3, 16, 12}, rng));
  CHECK_THROWS_AS(m.depth_encode(rgb), ShapeError);

  // closed-form: stage conv (k*k*cin*cout + cout) + per-stage res blocks
  auto conv_params = [](int cin, int cout, int k) { return k * k * cin * cout + cout; };
  const int C = ec.base_channels;
  int64_t expect = 0;
  for (int s = 0; s < 3; ++s) {
    expect += conv_params(s == 0 ? 1 : C, C, 3);
    expect += ec.res_blocks_per_stage * 2 * conv_params(C, C, 3);
  }
  CHECK(ps.param_count_prefix("dmm.denc") == expect);
}

TEST_CASE("dmm_forward composed shapes and ref-feature gradients") {
  Rng rng(73);
  nn::ParamStore ps;
  net::EncoderConfig ec;
  ec.base_channels = 4;
  ec.res_blocks_per_stage = 1;
  dmm::MatchConfig mc = small_cfg(4);
  dmm::DMM m(ps, "dmm", ec, mc, rng);
  net::Encoder enc(ps, "enc", ec, 3, rng);

  const int lr_h = 8, lr_w = 8;
  auto lr = nn::leaf(oracle::random_tensor({3, lr_h, lr_w}, rng, 0.0, 1.0));
  auto refdn = nn::leaf(oracle::random_tensor({3, lr_h, lr_w}, rng, 0.0, 1.0));
  auto ref = nn::leaf(oracle::random_tensor({3, 4 * lr_h, 4 * lr_w}, rng, 0.0, 1.0));
  auto d_lr = nn::leaf(oracle::random_tensor({1, lr_h, lr_w}, rng, 0.5, 2.0));
  auto d_rd = nn::leaf(oracle::random_tensor({1, lr_h, lr_w}, rng, 0.5, 2.0));

  auto out = m.forward(enc.forward(lr), enc.forward(refdn), enc.forward(ref), d_lr, d_rd);
  CHECK(out.fused_lr->val.shape() == std::vector<int>{4, lr_h, lr_w});
  CHECK(out.matched.s1->val.shape() == std::vector<int>{4, lr_h, lr_w});
  CHECK(out.matched.s2->val.shape() == std::vector<int>{4, 2 * lr_h, 2 * lr_w});
  CHECK(out.matched.s4->val.shape() == std::vector<int>{4, 4 * lr_h, 4 * lr_w});

  // gradient w.r.t. the raw reference pyramid, indices frozen by construction:
  // matching depends only on the fused LR / Ref-down features
  auto pyr_lr = enc.forward(lr);
  auto pyr_rd = enc.forward(refdn);
  auto f1 = nn::param(oracle::random_tensor({4, lr_h, lr_w}, rng));
  auto f2 = nn::param(oracle::random_tensor({4, 2 * lr_h, 2 * lr_w}, rng));
  auto f4 = nn::param(oracle::random_tensor({4, 4 * lr_h, 4 * lr_w}, rng));
  const double err = oracle::max_rel_grad_error(
      [&] {
        auto o = m.forward(pyr_lr, pyr_rd, net::FeaturePyramid{f1, f2, f4}, d_lr, d_rd);
        auto s = nn::add(nn::mean_all(nn::square(o.matched.s1)),
                         nn::add(nn::mean_all(nn::square(o.matched.s2)),
                                 nn::mean_all(nn::square(o.matched.s4))));
        return s;
      },
      {f1, f2, f4});
  CHECK(err < 1e-4);
}

TEST_CASE("index maps are piecewise constant under tiny perturbations") {
  Rng rng(83);
  auto cfg = small_cfg(4);
  Tensor a = oracle::random_tensor({3, 8, 8}, rng);
  Tensor b = oracle::random_tensor({3, 8, 8}, rng);
  auto base = dmm::match_features(a, b, cfg);

  Tensor b2 = b;
  for (int64_t i = 0; i < b2.numel(); ++i) b2[i] += 1e-9 * rng.uniform(-1.0, 1.0);
  auto perturbed = dmm::match_features(a, b2, cfg);
  REQUIRE(perturbed.blocks.size() == base.blocks.size());
  for (size_t k = 0; k < base.blocks.size(); ++k) {
    CHECK(perturbed.blocks[k].src_y == base.blocks[k].src_y);
    CHECK(perturbed.blocks[k].src_x == base.blocks[k].src_x);
    CHECK(perturbed.blocks[k].index_map == base.blocks[k].index_map);
  }
}

TEST_CASE("match debug dump writes one json per block") {
  Rng rng(79);
  auto cfg = small_cfg(4);
  Tensor a = oracle::random_tensor({2, 8, 8}, rng);
  Tensor b = oracle::random_tensor({2, 8, 8}, rng);
  auto m = dmm::match_features(a, b, cfg);
  const std::string dir = "tmp_match_dump";
  std::filesystem::remove_all(dir);
  dmm::dump_match(m, dir);
  dmm::dump_feature(a, "f_lr", dir);
  CHECK(std::filesystem::exists(dir + "/match_k0.json"));
  CHECK(std::filesystem::exists(dir + "/match_k3.json"));
  CHECK(std::filesystem::exists(dir + "/f_lr.f32"));
  std::filesystem::remove_all(dir);
}
