#include <random>

#include "doctest.h"
#include "oarseg/volume.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace oarseg;

TEST_CASE("grid validation") {
  CHECK_THROWS_AS(Mask(Dims{0, 1, 1}), DimsError);
  CHECK_THROWS_AS(Volume(Dims{2, 2, 2}, Spacing{1, 0, 1}), DimsError);
  CHECK_THROWS_AS(Volume(Dims{2, 2, 2}, Spacing{}, std::vector<float>(7)), DimsError);
  Volume v(Dims{3, 4, 5}, Spacing{0.5, 1, 2});
  CHECK(v.size() == 60);
  v(2, 1, 3) = 7.0f;
  CHECK(v[(3 * 4 + 1) * 3 + 2] == 7.0f);
  const Index3 p = unravel(v.dims(), linear_index(v.dims(), 2, 3, 4));
  CHECK(p == Index3{2, 3, 4});
}

TEST_CASE("structure ids") {
  CHECK(kAllStructures.size() == 9);
  for (StructureId id : kAllStructures) CHECK(parse_structure(structure_name(id)) == id);
  CHECK(structure_name(StructureId::OpticNerveL) == "OpticNerveL");
  CHECK_FALSE(parse_structure("Liver"));
}

TEST_CASE("overlap_counts examples") {
  const Dims d{6, 6, 6};
  Mask a(d);
  for (int i = 0; i < 10; ++i) a[i] = 1;
  CHECK(overlap_counts(a, a) == OverlapCounts{10, 10, 10});

  Mask p(d), q(d);
  for (int i = 0; i < 5; ++i) p[i] = 1;
  for (int i = 100; i < 107; ++i) q[i] = 1;
  CHECK(overlap_counts(p, q) == OverlapCounts{0, 5, 7});

  const Mask c1 = testutil::solid_box(d, BBox{{1, 1, 1}, {2, 2, 2}});
  const Mask c2 = testutil::solid_box(d, BBox{{2, 1, 1}, {2, 2, 2}});
  CHECK(overlap_counts(c1, c2) == OverlapCounts{4, 8, 8});

  CHECK_THROWS_AS(overlap_counts(a, Mask(Dims{6, 6, 5})), DimsError);
}

TEST_CASE("overlap_counts matches direct counting and is symmetric") {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 200; ++t) {
    const Dims d = testutil::random_dims(rng, 1, 12);
    const Mask a = testutil::random_mask(rng, d, 0.4), b = testutil::random_mask(rng, d, 0.3);
    const OverlapCounts ab = overlap_counts(a, b), ba = overlap_counts(b, a);
    const auto o = oracle::overlap(a, b);
    CHECK(ab == OverlapCounts{o.inter, o.a, o.b});
    CHECK(ba == OverlapCounts{ab.intersection, ab.b, ab.a});
    CHECK(ab.intersection <= std::min(ab.a, ab.b));
  }
}

TEST_CASE("crop_or_pad examples") {
  Volume v(Dims{4, 4, 4}, Spacing{0.5, 0.7, 2.0}, 1.0f);
  for (int64_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i);

  SUBCASE("full extent is the identity") {
    CHECK(crop_or_pad(v, BBox{{0, 0, 0}, v.dims()}, -1.0f) == v);
  }
  SUBCASE("box entirely outside is all fill") {
    const Volume o = crop_or_pad(v, BBox{{10, -20, 0}, {3, 3, 3}}, -5.0f);
    for (float x : o.data()) CHECK(x == -5.0f);
    CHECK(o.spacing() == v.spacing());
  }
  SUBCASE("partial overlap") {
    const Volume ones(Dims{4, 4, 4}, Spacing{}, 1.0f);
    const Volume o = crop_or_pad(ones, BBox{{2, 2, 2}, {4, 4, 4}}, 0.0f);
    double s = 0;
    for (float x : o.data()) s += x;
    CHECK(s == 8.0);
  }
  CHECK_THROWS_AS(crop_or_pad(v, BBox{{0, 0, 0}, {0, 1, 1}}, 0.0f), DimsError);
}

TEST_CASE("crop_or_pad inverse box restores in-range values") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int64_t> off(-6, 6);
  for (int t = 0; t < 100; ++t) {
    const Dims d = testutil::random_dims(rng, 1, 10);
    Volume v(d);
    for (int64_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i + 1);
    const BBox box{{off(rng), off(rng), off(rng)}, testutil::random_dims(rng, 1, 12)};
    const Volume c = crop_or_pad(v, box, 0.0f);
    const Volume back = crop_or_pad(c, BBox{{-box.min.x, -box.min.y, -box.min.z}, d}, 0.0f);
    for (int64_t z = 0; z < d.z; ++z)
      for (int64_t y = 0; y < d.y; ++y)
        for (int64_t x = 0; x < d.x; ++x)
          CHECK(back(x, y, z) == (box.contains(x, y, z) ? v(x, y, z) : 0.0f));
  }
}

TEST_CASE("paste clips to the destination") {
  Mask dst(Dims{4, 4, 4});
  const Mask src(Dims{3, 3, 3}, Spacing{}, uint8_t{1});
  paste(dst, src, Index3{2, -1, 0});
  CHECK(foreground_count(dst) == 2 * 2 * 3);
  CHECK(dst(3, 0, 2) == 1);
  CHECK(dst(1, 0, 0) == 0);
}

TEST_CASE("connected components examples") {
  CHECK(connected_components(Mask(Dims{5, 5, 5})).empty());

  const Mask cube = testutil::solid_box(Dims{6, 6, 6}, BBox{{1, 1, 1}, {3, 3, 3}});
  const auto one = connected_components(cube);
  REQUIRE(one.size() == 1);
  CHECK(one[0].voxels == 27);

  Mask corner(Dims{3, 3, 3});
  corner(0, 0, 0) = 1;
  corner(1, 1, 1) = 1;
  CHECK(connected_components(corner, 26).size() == 1);
  CHECK(connected_components(corner, 6).size() == 2);

  CHECK_THROWS_AS(connected_components(corner, 18), RangeError);
}

TEST_CASE("component labels cover the foreground and match union-find") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> p(0.05, 0.6);
  for (int t = 0; t < 1000; ++t) {
    const Dims d = testutil::random_dims(rng, 1, 16);
    const Mask m = testutil::random_mask(rng, d, p(rng));
    for (int conn : {6, 26}) {
      if (t % 10 != 0 && conn == 6) continue;
      const ComponentLabels cl = label_components(m, conn);
      int64_t sum = 0;
      for (const Component& c : cl.components) sum += c.voxels;
      CHECK(sum == foreground_count(m));
      int64_t mismatched = 0;
      for (int64_t i = 0; i < m.size(); ++i) mismatched += (cl.labels[i] != 0) != (m[i] != 0);
      CHECK(mismatched == 0);
      if (t % 10 == 0) {
        std::vector<int64_t> sizes;
        for (const Component& c : cl.components) sizes.push_back(c.voxels);
        std::sort(sizes.rbegin(), sizes.rend());
        CHECK(sizes == oracle::component_sizes(m, conn));
      }
    }
  }
}
