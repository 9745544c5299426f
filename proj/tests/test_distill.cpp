#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dsr/distill.h"
#include "dsr/losses.h"
#include "oracles.h"

using namespace dsr;
using nn::Var;

namespace {

std::vector<Var> random_set(const std::vector<std::vector<int>>& shapes, Rng& rng) {
  std::vector<Var> out;
  for (const auto& s : shapes) out.push_back(nn::leaf(oracle::random_tensor(s, rng)));
  return out;
}

}  // namespace

TEST_CASE("attention rows are probability vectors") {
  Rng rng(3);
  nn::ParamStore ps;
  distill::ADM adm(ps, "adm", {4, 4, 4}, {4, 4, 4}, 8, rng);
  auto t = random_set({{4, 8, 8}, {4, 4, 4}, {4, 2, 2}}, rng);
  auto s = random_set({{4, 8, 8}, {4, 4, 4}, {4, 2, 2}}, rng);
  auto alpha = adm.attention_weights(t, s);
  REQUIRE(alpha.size() == 3);
  for (const auto& row : alpha) {
    CHECK(std::fabs(row->val.sum() - 1.0) < 1e-6);
    CHECK(row->val.min() >= 0.0);
  }
}

TEST_CASE("single teacher-student pair gives alpha = 1") {
  Rng rng(5);
  nn::ParamStore ps;
  distill::ADM adm(ps, "adm", {4}, {4}, 8, rng);
  auto t = random_set({{4, 6, 6}}, rng);
  auto s = random_set({{4, 6, 6}}, rng);
  auto alpha = adm.attention_weights(t, s);
  REQUIRE(alpha.size() == 1);
  CHECK(alpha[0]->val.numel() == 1);
  CHECK(alpha[0]->val[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("hand-set logits produce the expected softmax split") {
  Rng rng(7);
  const int c = 9;  // sqrt(c) = 3
  nn::ParamStore ps;
  distill::ADM adm(ps, "adm", {2}, {2, 2}, c, rng);

  // Rig the transforms: queries/keys become the (positive) bias vectors, the
  // pairing matrices scale the first coordinate, position embeddings are the
  // zero-initialized default.
  ps.find("adm.wq0.w")->val.fill(0.0);
  ps.find("adm.wq0.b")->val.fill(0.0);
  ps.find("adm.wq0.b")->val[0] = 1.0;  // q = e1
  for (int n = 0; n < 2; ++n) {
    ps.find("adm.wk" + std::to_string(n) + ".w")->val.fill(0.0);
    ps.find("adm.wk" + std::to_string(n) + ".b")->val.fill(0.0);
    ps.find("adm.wk" + std::to_string(n) + ".b")->val[0] = 1.0;  // k = e1
    ps.find("adm.wqk" + std::to_string(n) + ".w")->val.fill(0.0);
    ps.find("adm.wqk" + std::to_string(n) + ".b")->val.fill(0.0);
  }
  const double z = 0.7;
  const double root_c = std::sqrt(static_cast<double>(c));
  // q^T W k picks W[0][0]
  ps.find("adm.wqk0.w")->val[0] = z + root_c * std::log(3.0);
  ps.find("adm.wqk1.w")->val[0] = z;

  auto t = random_set({{2, 4, 4}}, rng);
  auto s = random_set({{2, 4, 4}, {2, 4, 4}}, rng);
  auto alpha = adm.attention_weights(t, s);
  CHECK(alpha[0]->val[0] == doctest::Approx(0.75).epsilon(1e-9));
  CHECK(alpha[0]->val[1] == doctest::Approx(0.25).epsilon(1e-9));

  // equal logits split evenly
  ps.find("adm.wqk0.w")->val[0] = z;
  auto even = adm.attention_weights(t, s);
  CHECK(even[0]->val[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(even[0]->val[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("alpha invariant to a constant shift of a row's logits") {
  Rng rng(9);
  nn::ParamStore ps;
  distill::ADM adm(ps, "adm", {3}, {3, 3, 3}, 4, rng);
  auto t = random_set({{3, 4, 4}}, rng);
  auto s = random_set({{3, 4, 4}, {3, 6, 6}, {3, 2, 2}}, rng);
  auto base = adm.attention_weights(t, s);

  // identical position embeddings for all students add the same constant to
  // every logit in the row
  for (int n = 0; n < 3; ++n) {
    auto p = ps.find("adm.ps" + std::to_string(n));
    p->val.fill(0.9);
  }
  ps.find("adm.pt0")->val.fill(1.3);
  auto shifted = adm.attention_weights(t, s);
  CHECK(shifted[0]->val.max_abs_diff(base[0]->val) < 1e-9);
}

TEST_CASE("channel pool hand values") {
  Tensor one({1, 2, 2});
  one[0] = -3.0; one[1] = 0.5; one[2] = 0.0; one[3] = 2.0;
  auto p1 = distill::channel_pool(nn::leaf(one));
  CHECK(p1->val[0] == doctest::Approx(3.0));
  CHECK(p1->val[1] == doctest::Approx(0.5));

  Tensor two({2, 1, 1});
  two[0] = 3.0;
  two[1] = 4.0;
  auto p2 = distill::channel_pool(nn::leaf(two));
  CHECK(p2->val[0] == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(p2->val.min() >= 0.0);
}

TEST_CASE("resize_student: identity, constants, bilinear ramp") {
  Rng rng(11);
  auto x = nn::leaf(oracle::random_tensor({1, 4, 4}, rng));
  CHECK(distill::resize_student(x, 4, 4).get() == x.get());

  auto c = nn::leaf(Tensor::full({1, 3, 3}, 0.42));
  auto up = distill::resize_student(c, 7, 5);
  CHECK(std::fabs(up->val.max() - 0.42) < 1e-12);
  CHECK(std::fabs(up->val.min() - 0.42) < 1e-12);

  // 1 x 1 x 4 ramp upsampled 2x: interior points interpolate linearly
  Tensor ramp({1, 1, 4});
  for (int i = 0; i < 4; ++i) ramp[i] = i;
  auto r2 = distill::resize_student(nn::leaf(ramp), 1, 8);
  // src = (o + 0.5)/2 - 0.5
  for (int o = 1; o < 7; ++o) {
    const double src = (o + 0.5) / 2.0 - 0.5;
    const int i0 = static_cast<int>(std::floor(src));
    const double f = src - i0;
    const double expect = ramp[std::clamp(i0, 0, 3)] * (1 - f) + ramp[std::clamp(i0 + 1, 0, 3)] * f;
    CHECK(r2->val[o] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("attention distill loss: zero case, hand value, exact halving") {
  Rng rng(13);
  nn::ParamStore ps;
  distill::ADM enc_adm(ps, "eadm", {3, 3}, {3, 3}, 4, rng);
  distill::ADM dep_adm(ps, "dadm", {3, 3}, {3, 3}, 4, rng);

  // equal pooled maps for all pairs give exactly zero: same-size sets whose
  // members are all the same feature map
  auto tf = nn::leaf(oracle::random_tensor({3, 4, 4}, rng));
  auto df = nn::leaf(oracle::random_tensor({3, 4, 4}, rng));
  std::vector<Var> tset = {tf, tf}, dset = {df, df};
  auto zero = distill::attention_distill_loss(tset, tset, dset, dset, enc_adm, dep_adm);
  CHECK(nn::scalar(zero) == 0.0);

  auto t = random_set({{3, 4, 4}, {3, 2, 2}}, rng);
  auto d = random_set({{3, 4, 4}, {3, 2, 2}}, rng);

  // single pair with constant pooled difference 0.5 and alpha = 1
  nn::ParamStore ps1;
  distill::ADM adm1(ps1, "a", {1}, {1}, 4, rng);
  auto ft = nn::leaf(Tensor::full({1, 4, 4}, 1.0));   // pooled: |1|/1 = 1
  auto fs = nn::leaf(Tensor::full({1, 4, 4}, 0.5));   // pooled: 0.5
  auto l_single = distill::attention_set_loss({ft}, {fs}, adm1);
  CHECK(nn::scalar(l_single) == doctest::Approx(0.5).epsilon(1e-12));

  // composite equals the exact half-sum of its parts
  auto s = random_set({{3, 4, 4}, {3, 2, 2}}, rng);
  auto ds = random_set({{3, 4, 4}, {3, 2, 2}}, rng);
  const double le = nn::scalar(distill::attention_set_loss(t, s, enc_adm));
  const double ld = nn::scalar(distill::attention_set_loss(d, ds, dep_adm));
  const double lad =
      nn::scalar(distill::attention_distill_loss(t, s, d, ds, enc_adm, dep_adm));
  CHECK(lad == doctest::Approx(0.5 * (le + ld)).epsilon(1e-12));
  CHECK(lad >= 0.0);
}

TEST_CASE("output distill loss hand values") {
  Rng rng(17);
  Tensor a = oracle::random_tensor({3, 4, 4}, rng, 0.0, 1.0);
  CHECK(nn::scalar(distill::output_distill_loss(nn::leaf(a), nn::leaf(a))) == 0.0);
  Tensor b = a;
  for (int64_t i = 0; i < b.numel(); ++i) b[i] += 0.2;
  CHECK(nn::scalar(distill::output_distill_loss(nn::leaf(b), nn::leaf(a))) ==
        doctest::Approx(0.2).epsilon(1e-12));
  CHECK(nn::scalar(distill::output_distill_loss(nn::leaf(a), nn::leaf(b))) ==
        doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("student objective: defaults and hand arithmetic") {
  auto c = [](double v) { return nn::leaf(Tensor({1}, v)); };
  distill::StudentWeights w;
  CHECK(w.rec == 1.0);
  CHECK(w.kd == 0.5);
  CHECK(w.ad == doctest::Approx(0.1));

  CHECK(nn::scalar(distill::student_objective(c(0.0), c(0.0), c(0.0), w)) == 0.0);
  CHECK(nn::scalar(distill::student_objective(c(0.2), c(0.1), c(0.05), w)) ==
        doctest::Approx(0.255).epsilon(1e-12));

  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(distill::student_objective(c(inf), c(0.0), c(0.0), w), NonFiniteLoss);
}

TEST_CASE("distill gradients match finite differences") {
  Rng rng(19);
  nn::ParamStore ps;
  distill::ADM enc_adm(ps, "eadm", {2, 2}, {2, 2}, 4, rng);
  distill::ADM dep_adm(ps, "dadm", {2, 2}, {2, 2}, 4, rng);

  // teacher features are constants; students and ADM params take gradients
  auto t = random_set({{2, 4, 4}, {2, 2, 2}}, rng);
  auto d = random_set({{2, 4, 4}, {2, 2, 2}}, rng);
  auto s0 = nn::param(oracle::random_tensor({2, 4, 4}, rng));
  auto s1 = nn::param(oracle::random_tensor({2, 2, 2}, rng));
  auto ds0 = nn::param(oracle::random_tensor({2, 4, 4}, rng));
  auto ds1 = nn::param(oracle::random_tensor({2, 2, 2}, rng));

  std::vector<Var> inputs = {s0, s1, ds0, ds1};
  for (const auto& [name, p] : ps.items()) inputs.push_back(p);
  const double err = oracle::max_rel_grad_error(
      [&] {
        return distill::attention_distill_loss(t, {s0, s1}, d, {ds0, ds1}, enc_adm,
                                               dep_adm);
      },
      inputs);
  CHECK(err < 1e-4);
}
