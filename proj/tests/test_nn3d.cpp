#include <cmath>
#include <random>

#include "doctest.h"
#include "oarseg/nn/adam.hpp"
#include "oarseg/nn/gradcheck.hpp"
#include "oarseg/nn/layers.hpp"
#include "oarseg/nn/unet.hpp"

using namespace oarseg;
using namespace oarseg::nn;

namespace {

template <typename T>
Tensor5<T> random_tensor(Shape5 s, uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor5<T> t(s);
  for (T& x : t.data) x = static_cast<T>(u(rng));
  return t;
}

template <typename T>
std::vector<T> random_vec(size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<T> v(n);
  for (T& x : v) x = static_cast<T>(u(rng));
  return v;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, double(std::abs(a[i] - b[i])));
  return m;
}

}  // namespace

TEST_CASE("conv3d examples") {
  SUBCASE("1x1x1 kernel is an affine map") {
    Tensor5<float> x(Shape5{1, 1, 2, 2, 2}, 3.0f);
    const std::vector<float> w{2.0f}, b{0.5f};
    const auto y = conv3d_forward<float>(x, w, b, 1, 1);
    for (float v : y.data) CHECK(v == 6.5f);
  }
  SUBCASE("centre delta is the identity") {
    const auto x = random_tensor<float>(Shape5{1, 1, 5, 4, 3}, 1);
    std::vector<float> w(27, 0.0f), b{0.0f};
    w[13] = 1.0f;
    CHECK(conv3d_forward<float>(x, w, b, 1, 3).data == x.data);
  }
  SUBCASE("all-ones kernel counts the support") {
    Tensor5<float> x(Shape5{1, 1, 8, 8, 8}, 1.0f);
    const std::vector<float> w(27, 1.0f), b{0.0f};
    const auto y = conv3d_forward<float>(x, w, b, 1, 3);
    CHECK(y.at(0, 0, 4, 4, 4) == 27.0f);
    CHECK(y.at(0, 0, 0, 0, 0) == 8.0f);
    CHECK(y.at(0, 0, 0, 3, 3) == 18.0f);
    CHECK(y.shape == x.shape);
  }
  SUBCASE("channel mismatch") {
    Tensor5<float> x(Shape5{1, 2, 4, 4, 4});
    const std::vector<float> w(27, 1.0f), b{0.0f};
    CHECK_THROWS_AS(conv3d_forward<float>(x, w, b, 1, 3), ShapeError);
    CHECK_THROWS_AS(conv3d_forward<float>(x, std::vector<float>(2 * 8, 1.0f), b, 1, 2), ShapeError);
  }
}

TEST_CASE("conv3d is linear in its input") {
  const Shape5 s{1, 3, 6, 5, 4};
  const auto x1 = random_tensor<double>(s, 2), x2 = random_tensor<double>(s, 3);
  const auto w = random_vec<double>(4 * 3 * 27, 4);
  const std::vector<double> b(4, 0.0);
  const double alpha = 0.7, beta = -1.3;
  Tensor5<double> mix(s);
  for (size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = alpha * x1.data[i] + beta * x2.data[i];
  const auto y = conv3d_forward<double>(mix, w, b, 4, 3);
  const auto y1 = conv3d_forward<double>(x1, w, b, 4, 3), y2 = conv3d_forward<double>(x2, w, b, 4, 3);
  for (size_t i = 0; i < y.data.size(); ++i) {
    const double e = alpha * y1.data[i] + beta * y2.data[i];
    CHECK(std::abs(y.data[i] - e) <= 1e-5 * std::max(1.0, std::abs(e)));
  }
}

TEST_CASE("parallel kernels agree with the serial reference") {
  for (int k : {1, 3}) {
    const Shape5 s{1, 3, 7, 6, 5};
    const auto x = random_tensor<float>(s, 10 + k);
    const int64_t cout = 5;
    const auto w = random_vec<float>(cout * 3 * k * k * k, 20 + k);
    const auto b = random_vec<float>(cout, 30 + k);
    const auto y = conv3d_forward<float>(x, w, b, cout, k);
    const auto yr = ref::conv3d_forward<float>(x, w, b, cout, k);
    CHECK(max_abs_diff(y.data, yr.data) <= 1e-5);

    const auto dy = random_tensor<float>(y.shape, 40 + k);
    Tensor5<float> dx, dxr;
    std::vector<float> dw(w.size()), dwr(w.size()), db(cout), dbr(cout);
    conv3d_backward<float>(x, w, dy, k, &dx, dw, db);
    ref::conv3d_backward<float>(x, w, dy, k, &dxr, dwr, dbr);
    CHECK(max_abs_diff(dx.data, dxr.data) <= 1e-5);
    CHECK(max_abs_diff(dw, dwr) <= 1e-4);
    CHECK(max_abs_diff(db, dbr) <= 1e-4);
  }
  {
    // Several column tiles, two samples, channel counts off the block sizes.
    const Shape5 s{2, 5, 13, 11, 9};
    const auto x = random_tensor<float>(s, 60);
    const int64_t cout = 6;
    const auto w = random_vec<float>(cout * 5 * 27, 61);
    const auto b = random_vec<float>(cout, 62);
    const auto y = conv3d_forward<float>(x, w, b, cout, 3);
    CHECK(max_abs_diff(y.data, ref::conv3d_forward<float>(x, w, b, cout, 3).data) <= 1e-4);
    const auto dy = random_tensor<float>(y.shape, 63);
    Tensor5<float> dx, dxr;
    std::vector<float> dw(w.size()), dwr(w.size()), db(cout), dbr(cout);
    conv3d_backward<float>(x, w, dy, 3, &dx, dw, db);
    ref::conv3d_backward<float>(x, w, dy, 3, &dxr, dwr, dbr);
    CHECK(max_abs_diff(dx.data, dxr.data) <= 1e-4);
    CHECK(max_abs_diff(dw, dwr) <= 1e-3);
    CHECK(max_abs_diff(db, dbr) <= 1e-3);
  }
  const auto x = random_tensor<float>(Shape5{1, 4, 3, 4, 2}, 50);
  const auto w = random_vec<float>(4 * 3 * 8, 51);
  const auto b = random_vec<float>(3, 52);
  CHECK(max_abs_diff(upconv2_forward<float>(x, w, b, 3).data, ref::upconv2_forward<float>(x, w, b, 3).data) <= 1e-6);
  std::vector<int64_t> am, amr;
  const auto px = random_tensor<float>(Shape5{1, 2, 6, 4, 8}, 53);
  CHECK(maxpool2_forward(px, am).data == ref::maxpool2_forward(px, amr).data);
  CHECK(am == amr);
}

TEST_CASE("maxpool2") {
  Tensor5<float> c(Shape5{1, 1, 2, 2, 2}, 4.0f);
  std::vector<int64_t> am;
  CHECK(maxpool2_forward(c, am).data[0] == 4.0f);
  CHECK(am[0] == 0);  // first occurrence on ties

  Tensor5<float> blk(Shape5{1, 1, 2, 2, 2});
  for (int i = 0; i < 8; ++i) blk.data[i] = static_cast<float>((i * 5) % 8 + 1);
  CHECK(maxpool2_forward(blk, am).data[0] == 8.0f);

  Tensor5<float> big(Shape5{1, 1, 96, 96, 56});
  const auto p = maxpool2_forward(big, am);
  CHECK(p.shape == Shape5{1, 1, 48, 48, 28});
  CHECK_THROWS_AS(maxpool2_forward(Tensor5<float>(Shape5{1, 1, 3, 2, 2}), am), ShapeError);

  const auto g = maxpool2_backward(Tensor5<float>(Shape5{1, 1, 1, 1, 1}, 2.0f), std::vector<int64_t>{5},
                                   Shape5{1, 1, 2, 2, 2});
  CHECK(g.data[5] == 2.0f);
  CHECK(g.data[0] == 0.0f);
}

TEST_CASE("upconv2") {
  Tensor5<float> x(Shape5{1, 1, 1, 1, 1}, 2.5f);
  const std::vector<float> ones(8, 1.0f), zero{0.0f};
  const auto y = upconv2_forward<float>(x, ones, zero, 1);
  CHECK(y.shape == Shape5{1, 1, 2, 2, 2});
  for (float v : y.data) CHECK(v == 2.5f);

  Tensor5<float> z(Shape5{1, 2, 48, 48, 28});
  const auto w = random_vec<float>(2 * 3 * 8, 1);
  const std::vector<float> b(3, 0.0f);
  const auto zy = upconv2_forward<float>(z, w, b, 3);
  CHECK(zy.shape == Shape5{1, 3, 96, 96, 56});
  for (float v : zy.data) REQUIRE(v == 0.0f);
  CHECK_THROWS_AS(upconv2_forward<float>(z, w, b, 2), ShapeError);
}

TEST_CASE("batchnorm") {
  const auto x = random_tensor<double>(Shape5{1, 2, 4, 3, 5}, 7, -3, 5);
  const std::vector<double> gamma{1, 1}, beta{0, 0};
  std::vector<double> rm{0, 0}, rv{1, 1};
  BatchNormCache<double> cache;

  SUBCASE("train mode standardizes each channel") {
    const auto y = batchnorm_forward<double>(x, gamma, beta, rm, rv, true, true, cache);
    for (int c = 0; c < 2; ++c) {
      const double* p = y.channel(0, c);
      double m = 0, v = 0;
      for (int64_t i = 0; i < 60; ++i) m += p[i];
      m /= 60;
      for (int64_t i = 0; i < 60; ++i) v += (p[i] - m) * (p[i] - m);
      v /= 60;
      CHECK(std::abs(m) <= 1e-4);
      CHECK(std::abs(v - 1) <= 1e-4);
      // running = 0.9 running + 0.1 batch
      const double* q = x.channel(0, c);
      double bm = 0, bv = 0;
      for (int64_t i = 0; i < 60; ++i) bm += q[i];
      bm /= 60;
      for (int64_t i = 0; i < 60; ++i) bv += (q[i] - bm) * (q[i] - bm);
      bv /= 60;
      CHECK(rm[c] == doctest::Approx(0.1 * bm).epsilon(1e-12));
      CHECK(rv[c] == doctest::Approx(0.9 + 0.1 * bv).epsilon(1e-12));
      CHECK(rv[c] >= 0);
    }
  }
  SUBCASE("eval mode with unit statistics is the identity up to epsilon") {
    const auto y = batchnorm_forward<double>(x, gamma, beta, rm, rv, false, false, cache);
    for (size_t i = 0; i < x.data.size(); ++i)
      CHECK(y.data[i] == doctest::Approx(x.data[i] / std::sqrt(1 + kBnEpsilon)).epsilon(1e-12));
  }
  SUBCASE("constant channel maps to the shift") {
    Tensor5<double> c(Shape5{1, 1, 3, 3, 3}, 4.0);
    const std::vector<double> g{2.0}, bt{0.25};
    std::vector<double> m1{0}, v1{1};
    const auto y = batchnorm_forward<double>(c, g, bt, m1, v1, true, true, cache);
    for (double v : y.data) CHECK(v == doctest::Approx(0.25));
  }
}

TEST_CASE("bce loss") {
  Tensor5<double> z(Shape5{1, 1, 2, 2, 2}, 0.0), y(Shape5{1, 1, 2, 2, 2}, 1.0);
  y.data[3] = 0;
  CHECK(bce_loss(z, y).loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor5<double> big(Shape5{1, 1, 1, 1, 1}, 60.0), one(Shape5{1, 1, 1, 1, 1}, 1.0);
  CHECK(bce_loss(big, one).loss < 1e-20);
  CHECK(bce_loss(big, one).loss >= 0.0);

  Tensor5<double> z1(Shape5{1, 1, 1, 1, 1}, 1.0), y0(Shape5{1, 1, 1, 1, 1}, 0.0);
  const auto r = bce_loss(z1, y0);
  CHECK(r.loss == doctest::Approx(1.313261687518223).epsilon(1e-12));
  CHECK(r.grad.data[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));

  // Extreme logits stay finite and non-negative.
  const auto zz = random_tensor<double>(Shape5{1, 1, 4, 4, 4}, 9, -800, 800);
  const auto yy = random_tensor<double>(Shape5{1, 1, 4, 4, 4}, 10, 0, 1);
  const auto rr = bce_loss(zz, yy);
  CHECK(std::isfinite(rr.loss));
  CHECK(rr.loss >= 0);
  for (size_t i = 0; i < zz.data.size(); ++i)
    CHECK(rr.grad.data[i] == doctest::Approx((sigmoid(zz.data[i]) - yy.data[i]) / 64.0).epsilon(1e-12));
}

TEST_CASE("adam") {
  std::vector<ParamTensor<double>> p(1);
  p[0].name = "w";
  p[0].shape = {3};
  p[0].value = {1.0, -2.0, 0.5};
  p[0].grad = {0.0, 0.0, 0.0};
  auto st = make_adam_state(p);
  adam_step(p, st);
  CHECK(p[0].value == std::vector<double>{1.0, -2.0, 0.5});
  CHECK(st.step == 1);

  p[0].grad = {3.0, -0.01, 1e-3};
  auto st2 = make_adam_state(p);
  const auto before = p[0].value;
  adam_step(p, st2);
  for (int i = 0; i < 3; ++i)
    CHECK(std::abs(before[i] - p[0].value[i]) == doctest::Approx(1e-3).epsilon(1e-4));
  CHECK(p[0].value[0] < before[0]);
  CHECK(p[0].value[1] > before[1]);

  // f(w) = (w - 3)^2
  std::vector<ParamTensor<double>> q(1);
  q[0].name = "q";
  q[0].shape = {1};
  q[0].value = {0.0};
  q[0].grad = {0.0};
  auto st3 = make_adam_state(q);
  double prev = 9.0;
  for (int i = 0; i < 2; ++i) {
    q[0].grad[0] = 2 * (q[0].value[0] - 3);
    adam_step(q, st3);
    const double f = (q[0].value[0] - 3) * (q[0].value[0] - 3);
    CHECK(f < prev);
    prev = f;
  }

  std::vector<ParamTensor<double>> other(2, p[0]);
  CHECK_THROWS_AS(adam_step(other, st), ShapeError);
}

TEST_CASE("unet shapes and topology") {
  UNet<float> net(UNetConfig{}, 1);
  CHECK(net.conv_layer_count() == 17);
  for (const Shape5 s : {Shape5{1, 1, 8, 8, 8}, Shape5{1, 1, 16, 24, 8}, Shape5{1, 1, 24, 16, 32}}) {
    const auto x = random_tensor<float>(s, 2);
    CHECK(net.forward(x, Mode::Eval).shape == s);
    CHECK(net.forward(x, Mode::Train).shape == s);
  }
  CHECK_THROWS_AS(net.forward(Tensor5<float>(Shape5{1, 1, 33, 32, 32}), Mode::Eval), ShapeError);
  CHECK_THROWS_AS(net.forward(Tensor5<float>(Shape5{1, 2, 8, 8, 8}), Mode::Eval), ShapeError);

  // Channel plan doubles per level.
  CHECK(net.param("enc0.conv1.w").shape == std::vector<int64_t>{8, 1, 3, 3, 3});
  CHECK(net.param("enc3.conv2.w").shape == std::vector<int64_t>{64, 64, 3, 3, 3});
  CHECK(net.param("dec2.up.w").shape == std::vector<int64_t>{64, 32, 2, 2, 2});
  CHECK(net.param("dec0.conv1.w").shape == std::vector<int64_t>{8, 16, 3, 3, 3});
  CHECK(net.param("final.w").shape == std::vector<int64_t>{1, 8, 1, 1, 1});
  CHECK_FALSE(net.param("enc1.bn2.var").trainable);
  CHECK_THROWS_AS(UNet<float>(UNetConfig{0, 8, 1, 1}, 0), ConfigError);
}

TEST_CASE("unet initialization") {
  UNet<double> a(UNetConfig{3, 4, 1, 1}, 42), b(UNetConfig{3, 4, 1, 1}, 42), c(UNetConfig{3, 4, 1, 1}, 43);
  CHECK(a.params()[0].value == b.params()[0].value);
  CHECK(a.params()[0].value != c.params()[0].value);
  for (const auto& p : a.params()) {
    if (p.name.ends_with(".b") || p.name.ends_with(".beta") || p.name.ends_with(".mean"))
      for (double v : p.value) CHECK(v == 0.0);
    if (p.name.ends_with(".gamma") || p.name.ends_with(".var"))
      for (double v : p.value) CHECK(v == 1.0);
  }
}

TEST_CASE("training steps are bitwise reproducible") {
  auto train = [](uint64_t seed) {
    UNet<float> net(UNetConfig{3, 4, 1, 1}, seed);
    auto st = make_adam_state(net.params());
    const auto x = random_tensor<float>(Shape5{1, 1, 8, 8, 8}, 5, 0, 1);
    Tensor5<float> y(x.shape);
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = x.data[i] > 0.5f;
    std::vector<double> losses;
    for (int i = 0; i < 4; ++i) {
      net.zero_grad();
      const auto l = bce_loss(net.forward(x, Mode::Train), y);
      net.backward(l.grad);
      adam_step(net.params(), st);
      losses.push_back(l.loss);
    }
    return std::make_pair(losses, net.params());
  };
  const auto [l1, p1] = train(3);
  const auto [l2, p2] = train(3);
  CHECK(l1 == l2);
  for (size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].value == p2[i].value);
}

TEST_CASE("gradient checks") {
  GradCheckOptions opts;
  SUBCASE("linear layers") {
    for (const auto& r : {check_conv3d(opts, 3), check_conv3d(opts, 1), check_upconv2(opts)}) {
      INFO(r.name);
      CHECK(r.linear);
      CHECK(r.checked > 0);
      CHECK(r.max_rel_error <= 1e-7);
    }
  }
  SUBCASE("nonlinear layers") {
    for (const auto& r : {check_maxpool2(opts), check_batchnorm(opts, true), check_batchnorm(opts, false),
                          check_relu(opts), check_bce(opts)}) {
      INFO(r.name);
      CHECK(r.checked > 0);
      CHECK(r.max_rel_error <= 1e-3);
    }
  }
  SUBCASE("kinks are excluded and reported") {
    const auto r = check_relu(opts);
    CHECK(r.excluded >= 3);
  }
  SUBCASE("tiny unet") {
    const auto r = check_unet(opts);
    CHECK(r.checked > 0);
    CHECK(r.max_rel_error <= 1e-3);
  }
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == 0.5);
}
