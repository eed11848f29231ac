#include <cmath>
#include <random>

#include "doctest.h"
#include "oarseg/preprocess.hpp"
#include "test_util.hpp"

using namespace oarseg;

TEST_CASE("resampled dims reproduce the isotropic range") {
  CHECK(resampled_dims(Dims{512, 512, 100}, Spacing{0.76, 0.76, 2.5}, 1.0) == Dims{389, 389, 250});
  CHECK(resampled_dims(Dims{512, 512, 100}, Spacing{1.27, 1.27, 3.0}, 1.0) == Dims{650, 650, 300});
  for (double s = 0.76; s <= 1.27 + 1e-12; s += 0.01) {
    const int64_t n = resampled_dims(Dims{512, 512, 1}, Spacing{s, s, 1}, 1.0).x;
    CHECK(n >= 389);
    CHECK(n <= 650);
  }
  CHECK_THROWS_AS(resampled_dims(Dims{4, 4, 4}, Spacing{}, 0.0), ResampleError);
}

TEST_CASE("keys kernel interpolates") {
  CHECK(keys_cubic(0.0) == 1.0);
  for (double t : {1.0, -1.0, 2.0, -2.0, 2.5}) CHECK(keys_cubic(t) == 0.0);
  for (double f : {0.1, 0.25, 0.5, 0.9}) {
    const double s = keys_cubic(f + 1) + keys_cubic(f) + keys_cubic(f - 1) + keys_cubic(f - 2);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("isotropic input is reproduced") {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n(0, 300);
  Volume v(Dims{9, 7, 5});
  for (float& x : v.data()) x = n(rng);
  const Volume r = resample_isotropic(v, 1.0);
  REQUIRE(r.dims() == v.dims());
  for (int64_t i = 0; i < v.size(); ++i) CHECK(std::abs(r[i] - v[i]) <= 1e-5);
}

TEST_CASE("separable resampling matches the direct tensor-product reference") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<float> u(-1000, 1000);
  for (const Spacing sp : {Spacing{0.76, 0.9, 2.5}, Spacing{1.27, 1.1, 0.6}, Spacing{1, 1, 3}}) {
    Volume v(Dims{13, 11, 6}, sp);
    for (float& x : v.data()) x = u(rng);
    const Volume a = resample_isotropic(v, 1.0);
    const Volume b = ref::resample_isotropic(v, 1.0);
    REQUIRE(a.dims() == b.dims());
    CHECK(a.spacing() == Spacing{1, 1, 1});
    double worst = 0;
    for (int64_t i = 0; i < a.size(); ++i) worst = std::max(worst, double(std::abs(a[i] - b[i])));
    CHECK(worst <= 1e-3);  // values up to 1000 HU; float round-off between passes
  }
}

TEST_CASE("cubic resampling reproduces a linear ramp away from the border") {
  Volume v(Dims{20, 4, 4}, Spacing{0.8, 1, 1});
  for (int64_t z = 0; z < 4; ++z)
    for (int64_t y = 0; y < 4; ++y)
      for (int64_t x = 0; x < 20; ++x) v(x, y, z) = static_cast<float>(3.0 * x * 0.8);
  const Volume r = resample_isotropic(v, 1.0);
  for (int64_t x = 2; x < r.dims().x - 3; ++x) CHECK(r(x, 1, 1) == doctest::Approx(3.0 * x).epsilon(1e-5));
}

TEST_CASE("degenerate axes") {
  CHECK_THROWS_AS(resample_isotropic(Volume(Dims{1, 5, 5}, Spacing{2, 1, 1})), ResampleError);
  CHECK_NOTHROW(resample_isotropic(Volume(Dims{1, 5, 5}, Spacing{1, 1, 1})));
}

TEST_CASE("mask resampling is nearest neighbour") {
  std::mt19937_64 rng(4);
  const Mask m = testutil::random_mask(rng, Dims{17, 13, 9}, 0.4);
  Mask ms = m;
  ms.set_spacing(Spacing{0.7, 1.3, 2.4});
  const Mask r = resample_isotropic(ms, 1.0);
  CHECK(r.dims() == resampled_dims(ms.dims(), ms.spacing(), 1.0));
  int64_t wrong = 0;
  for (int64_t z = 0; z < r.dims().z; ++z)
    for (int64_t y = 0; y < r.dims().y; ++y)
      for (int64_t x = 0; x < r.dims().x; ++x) {
        // Nearest source sample to the physical position of the output voxel.
        auto near = [&](int64_t i, int a) {
          const double p = i * 1.0 / ms.spacing()[a];
          return std::min<int64_t>(static_cast<int64_t>(std::floor(p + 0.5)), ms.dims()[a] - 1);
        };
        const uint8_t src = ms(near(x, 0), near(y, 1), near(z, 2));
        wrong += r(x, y, z) != src;
      }
  CHECK(wrong == 0);

  const Volume asv = resample_isotropic(Volume(Dims{4, 4, 4}, Spacing{2, 2, 2}, 1.0f), 1.0, SampleKind::Mask);
  for (float x : asv.data()) CHECK(x == 1.0f);
}

TEST_CASE("crop box examples") {
  const CropSpec g1 = default_crop_spec(1);
  CHECK(g1.window == Dims{384, 384, 224});
  CHECK(compute_crop_box(Dims{400, 384, 224}, g1).min == Index3{8, 0, 0});
  CHECK(compute_crop_box(Dims{450, 450, 300}, g1).min == Index3{33, 20, 68});
  CHECK(compute_crop_box(Dims{384, 384, 224}, g1).min == Index3{0, 0, 0});
  // Slack below zero pads: offset is negative.
  CHECK(compute_crop_box(Dims{380, 384, 204}, g1).min == Index3{-2, 0, -18});

  CropSpec half;
  half.window = {10, 10, 10};
  CHECK(compute_crop_box(Dims{15, 17, 10}, half).min == Index3{2, 4, 0});  // 2.5 -> 2, 3.5 -> 4
}

TEST_CASE("crop groups") {
  const CropSpec g2 = default_crop_spec(2);
  CHECK(g2.margin_fracs[1] == std::pair<double, double>{0.2, 0.8});
  CHECK(g2.margin_fracs[2] == std::pair<double, double>{0.7, 0.3});
  CHECK(default_crop_group(StructureId::Chiasm) == 1);
  CHECK(default_crop_group(StructureId::OpticNerveR) == 1);
  CHECK(default_crop_group(StructureId::Brainstem) == 1);
  CHECK(default_crop_group(StructureId::Mandible) == 2);
  CHECK(default_crop_group(StructureId::SubmandL) == 2);
  CHECK_THROWS_AS(default_crop_spec(3), ConfigError);
  CropSpec bad;
  bad.margin_fracs[0] = {0.4, 0.7};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("crop box always has the window size") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int64_t> u(1, 700);
  for (int t = 0; t < 500; ++t) {
    const Dims d{u(rng), u(rng), u(rng)};
    for (int g : {1, 2}) CHECK(compute_crop_box(d, default_crop_spec(g)).size == Dims{384, 384, 224});
  }
}

TEST_CASE("intensity normalization") {
  CHECK(normalize_hu(-1000) == 0.0f);
  CHECK(normalize_hu(0) == 0.5f);
  CHECK(normalize_hu(2000) == 1.0f);
  CHECK(normalize_hu(-3000) == 0.0f);
  Volume v(Dims{2, 1, 1});
  v[0] = 500;
  v[1] = -500;
  const Volume n = normalize_intensity(v);
  CHECK(n[0] == 0.75f);
  CHECK(n[1] == 0.25f);
}

TEST_CASE("downsampling") {
  Volume big(Dims{384, 384, 224});
  CHECK(downsample_factor(big, Dims{4, 4, 4}).dims() == Dims{96, 96, 56});

  Volume blk(Dims{2, 2, 2});
  for (int i = 0; i < 8; ++i) blk[i] = static_cast<float>(i);
  const Volume one = downsample_factor(blk, Dims{2, 2, 2});
  CHECK(one.dims() == Dims{1, 1, 1});
  CHECK(one[0] == 3.5f);
  CHECK(one.spacing() == Spacing{2, 2, 2});

  const Volume c(Dims{8, 4, 12}, Spacing{1, 1, 1}, 0.3f);
  const Volume cd = downsample_factor(c, Dims{4, 2, 3});
  for (float x : cd.data()) CHECK(x == 0.3f);
  CHECK(upsample_repeat(cd, Dims{4, 2, 3}) == c);

  CHECK_THROWS_AS(downsample_factor(c, Dims{3, 1, 1}), DownsampleError);

  Mask m(Dims{2, 2, 2});
  for (int i = 0; i < 4; ++i) m[i] = 1;
  CHECK(downsample_factor(m, Dims{2, 2, 2})[0] == 1);  // 4 of 8: tie goes to foreground
  m[3] = 0;
  CHECK(downsample_factor(m, Dims{2, 2, 2})[0] == 0);
}
