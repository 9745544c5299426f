#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dsr/autograd.h"
#include "dsr/image.h"
#include "dsr/layers.h"
#include "dsr/rng.h"
#include "oracles.h"

using namespace dsr;
using nn::Var;

TEST_CASE("tensor basics") {
  Tensor t({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.shape_str() == "[2x3x4]");
  t.at(1, 2, 3) = 5.0;
  CHECK(t[23] == 5.0);
  CHECK_THROWS_AS(Tensor({0, 2}), ShapeError);
}

TEST_CASE("elementwise op gradients match finite differences") {
  Rng rng(42);
  auto x = nn::param(oracle::random_tensor({2, 4, 4}, rng, 0.2, 1.5));
  auto y = nn::param(oracle::random_tensor({2, 4, 4}, rng, 0.2, 1.5));

  auto check = [&](const std::function<Var()>& f) {
    CHECK(oracle::max_rel_grad_error(f, {x, y}) < 1e-6);
  };
  check([&] { return nn::mean_all(nn::mul(x, y)); });
  check([&] { return nn::mean_all(nn::add(nn::relu(x), nn::sigmoid(y))); });
  check([&] { return nn::mean_all(nn::softplus(nn::sub(x, y))); });
  check([&] { return nn::sum_all(nn::square(nn::scale(x, 0.7))); });
  check([&] { return nn::sqrt_val(nn::mean_all(nn::square(nn::sub(x, y)))); });
  check([&] { return nn::mean_all(nn::abs_val(nn::sub(x, y))); });
  check([&] { return nn::mean_all(nn::log_clamped(x, 1e-7, 2.0)); });
}

TEST_CASE("vector op gradients") {
  Rng rng(7);
  auto v = nn::param(oracle::random_tensor({5}, rng));
  auto m = nn::param(oracle::random_tensor({3, 5}, rng));
  auto u = nn::param(oracle::random_tensor({3}, rng));

  CHECK(oracle::max_rel_grad_error(
            [&] { return nn::dot(nn::matvec(m, v), u); }, {v, m, u}) < 1e-6);
  CHECK(oracle::max_rel_grad_error(
            [&] { return nn::dot(nn::softmax_vec(v), nn::relu(v)); }, {v}) < 1e-6);
}

TEST_CASE("softmax rows sum to one and shift invariance") {
  Rng rng(3);
  Tensor logits = oracle::random_tensor({6}, rng, -3.0, 3.0);
  auto a = nn::softmax_vec(nn::leaf(logits));
  double s = a->val.sum();
  CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  Tensor shifted = logits;
  for (int64_t i = 0; i < shifted.numel(); ++i) shifted[i] += 13.5;
  auto b = nn::softmax_vec(nn::leaf(shifted));
  CHECK(a->val.max_abs_diff(b->val) < 1e-12);
}

TEST_CASE("conv2d gradients (stride 1 and 2, k3 and k1)") {
  Rng rng(11);
  for (auto [k, s, p] : {std::tuple{3, 1, 1}, {3, 2, 1}, {1, 1, 0}}) {
    auto x = nn::param(oracle::random_tensor({3, 6, 6}, rng));
    auto w = nn::param(oracle::random_tensor({4, 3, k, k}, rng, -0.5, 0.5));
    auto b = nn::param(oracle::random_tensor({4}, rng, -0.1, 0.1));
    double err = oracle::max_rel_grad_error(
        [&] { return nn::mean_all(nn::square(nn::conv2d(x, w, b, s, p))); }, {x, w, b});
    CAPTURE(k);
    CAPTURE(s);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("conv_transpose2d gradients and output dims") {
  Rng rng(13);
  // stride 2 doubles dims with out_pad 1
  auto x = nn::param(oracle::random_tensor({3, 5, 4}, rng));
  auto w = nn::param(oracle::random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5));
  auto b = nn::param(oracle::random_tensor({2}, rng, -0.1, 0.1));
  auto y = nn::conv_transpose2d(x, w, b, 2, 1, 1);
  CHECK(y->val.dim(1) == 10);
  CHECK(y->val.dim(2) == 8);
  CHECK(oracle::max_rel_grad_error(
            [&] { return nn::mean_all(nn::square(nn::conv_transpose2d(x, w, b, 2, 1, 1))); },
            {x, w, b}) < 1e-6);
  // stride 1 keeps dims
  auto y1 = nn::conv_transpose2d(x, w, b, 1, 1, 0);
  CHECK(y1->val.dim(1) == 5);
  CHECK(y1->val.dim(2) == 4);
  CHECK(oracle::max_rel_grad_error(
            [&] { return nn::mean_all(nn::square(nn::conv_transpose2d(x, w, b, 1, 1, 0))); },
            {x, w, b}) < 1e-6);
}

TEST_CASE("conv stride-2 then transpose stride-2 round trips dims") {
  Rng rng(17);
  auto x = nn::leaf(oracle::random_tensor({2, 12, 8}, rng));
  auto w = nn::leaf(oracle::random_tensor({4, 2, 3, 3}, rng));
  auto b = nn::leaf(Tensor::zeros({4}));
  auto down = nn::conv2d(x, w, b, 2, 1);
  CHECK(down->val.dim(1) == 6);
  CHECK(down->val.dim(2) == 4);
  auto wt = nn::leaf(oracle::random_tensor({4, 2, 3, 3}, rng));
  auto bt = nn::leaf(Tensor::zeros({2}));
  auto up = nn::conv_transpose2d(down, wt, bt, 2, 1, 1);
  CHECK(up->val.dim(1) == 12);
  CHECK(up->val.dim(2) == 8);
}

TEST_CASE("structural op gradients") {
  Rng rng(19);
  auto a = nn::param(oracle::random_tensor({2, 3, 3}, rng));
  auto b = nn::param(oracle::random_tensor({3, 3, 3}, rng));
  CHECK(oracle::max_rel_grad_error(
            [&] { return nn::mean_all(nn::square(nn::concat_ch({a, b}))); }, {a, b}) < 1e-6);

  auto x = nn::param(oracle::random_tensor({8, 3, 2}, rng));
  CHECK(oracle::max_rel_grad_error(
            [&] { return nn::mean_all(nn::square(nn::pixel_shuffle(x, 2))); }, {x}) < 1e-6);

  CHECK(oracle::max_rel_grad_error(
            [&] { return nn::sum_all(nn::square(nn::global_avg_pool(x))); }, {x}) < 1e-6);

  CHECK(oracle::max_rel_grad_error(
            [&] { return nn::mean_all(nn::square(nn::channel_l2_pool(x))); }, {x}) < 1e-6);

  CHECK(oracle::max_rel_grad_error(
            [&] { return nn::mean_all(nn::square(nn::bilinear_resize(x, 6, 5))); }, {x}) < 1e-6);

  CHECK(oracle::max_rel_grad_error(
            [&] { return nn::mean_all(nn::square(nn::bicubic_resize_var(x, 6, 4))); }, {x}) <
        1e-6);
}

TEST_CASE("pixel_shuffle layout") {
  Tensor x({4, 1, 1});
  x[0] = 1.0; x[1] = 2.0; x[2] = 3.0; x[3] = 4.0;
  auto y = nn::pixel_shuffle(nn::leaf(x), 2);
  CHECK(y->val.dim(0) == 1);
  CHECK(y->val.at(0, 0, 0) == 1.0);
  CHECK(y->val.at(0, 0, 1) == 2.0);
  CHECK(y->val.at(0, 1, 0) == 3.0);
  CHECK(y->val.at(0, 1, 1) == 4.0);
}

TEST_CASE("channel_l2_pool value") {
  Tensor x({2, 1, 1});
  x[0] = 3.0;
  x[1] = 4.0;
  auto y = nn::channel_l2_pool(nn::leaf(x));
  CHECK(y->val[0] == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("no-grad guard suppresses graph building") {
  Rng rng(23);
  auto x = nn::param(oracle::random_tensor({2, 2, 2}, rng));
  nn::Var y;
  {
    nn::NoGradGuard g;
    y = nn::mean_all(nn::square(x));
  }
  CHECK_FALSE(y->needs_grad);
  CHECK(y->parents.empty());
}

TEST_CASE("bicubic resize: identity, constants, oracle agreement") {
  Rng rng(29);
  Tensor x = oracle::random_tensor({3, 8, 8}, rng, 0.0, 1.0);

  Tensor same = img::bicubic_resize(x, 8, 8, false);
  CHECK(same.max_abs_diff(x) == 0.0);

  Tensor c = Tensor::full({3, 5, 7}, 0.37);
  Tensor up = img::bicubic_resize(c, 15, 21, false);
  CHECK(std::fabs(up.max() - 0.37) < 1e-12);
  CHECK(std::fabs(up.min() - 0.37) < 1e-12);

  Tensor down = img::bicubic_resize(x, 2, 2, false);
  Tensor ref = oracle::bicubic_resize_oracle(x, 2, 2);
  CHECK(down.max_abs_diff(ref) < 1e-12);

  Tensor up4 = img::bicubic_resize(x, 32, 32, false);
  Tensor ref4 = oracle::bicubic_resize_oracle(x, 32, 32);
  CHECK(up4.max_abs_diff(ref4) < 1e-12);
}

TEST_CASE("bicubic_resample scale contract") {
  Tensor x = Tensor::full({3, 8, 8}, 0.5);
  CHECK_THROWS_AS(img::bicubic_resample(x, 1.0 / 3.0), InvalidScale);
  Tensor half = img::bicubic_resample(x, 0.25);
  CHECK(half.dim(1) == 2);
  CHECK(half.dim(2) == 2);
}

TEST_CASE("8x8 horizontal ramp downsampled 1/4 matches direct kernel sums") {
  Tensor x({1, 8, 8});
  for (int h = 0; h < 8; ++h)
    for (int w = 0; w < 8; ++w) x.at(0, h, w) = w / 7.0;
  Tensor out = img::bicubic_resample(x, 0.25, false);
  Tensor ref = oracle::bicubic_resize_oracle(x, 2, 2);
  CHECK(out.dim(1) == 2);
  CHECK(out.dim(2) == 2);
  CHECK(out.max_abs_diff(ref) < 1e-12);
  // ramp stays constant down columns
  CHECK(out.at(0, 0, 0) == doctest::Approx(out.at(0, 1, 0)).epsilon(1e-12));
  CHECK(out.at(0, 0, 1) == doctest::Approx(out.at(0, 1, 1)).epsilon(1e-12));
}

TEST_CASE("png round trip is exact on the u8 grid") {
  Rng rng(31);
  Tensor x = img::quantize_u8_grid(oracle::random_tensor({3, 12, 9}, rng, 0.0, 1.0));
  const std::string path = "test_roundtrip.png";
  img::write_png_rgb8(path, x);
  Tensor y = img::read_png_rgb8(path);
  CHECK(y.same_shape(x));
  CHECK(y.max_abs_diff(x) == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("f32 blob round trip") {
  Rng rng(37);
  Tensor x = oracle::random_tensor({1, 4, 5}, rng, 0.1, 9.0);
  // snap to float32 so the round trip is exact
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(x[i]);
  const std::string path = "test_blob.f32";
  img::write_f32(path, x);
  Tensor y = img::read_f32(path, {1, 4, 5});
  CHECK(y.max_abs_diff(x) == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("adam converges on a quadratic") {
  nn::ParamStore ps;
  Rng rng(41);
  auto x = ps.add("x", oracle::random_tensor({4}, rng, 2.0, 3.0));
  nn::Adam opt;
  for (int i = 0; i < 800; ++i) {
    ps.zero_grads();
    auto loss = nn::sum_all(nn::square(x));
    nn::backward(loss);
    opt.step(ps, 0.05);
  }
  CHECK(std::fabs(x->val.max()) < 1e-3);
}

TEST_CASE("gradient clipping caps the global norm") {
  nn::ParamStore ps;
  auto x = ps.add("x", Tensor::full({4}, 1.0));
  auto loss = nn::sum_all(nn::scale(x, 100.0));
  nn::backward(loss);
  CHECK(ps.grad_global_norm() == doctest::Approx(200.0));
  nn::clip_grad_global_norm(ps, 10.0);
  CHECK(ps.grad_global_norm() == doctest::Approx(10.0).epsilon(1e-9));
}
