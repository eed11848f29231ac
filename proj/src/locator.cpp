#include "oarseg/locator.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "oarseg/log.hpp"

namespace oarseg {

IntegralVolume::IntegralVolume(const Mask& m) : dims_(m.dims()) {
  const int64_t X = dims_.x + 1, Y = dims_.y + 1, Z = dims_.z + 1;
  sums_.assign(static_cast<size_t>(X * Y * Z), 0);
  auto idx = [X, Y](int64_t i, int64_t j, int64_t k) { return (k * Y + j) * X + i; };

  // Running sums along x, then y, then z. Lines of each pass are independent.
#pragma omp parallel for schedule(static)
  for (int64_t k = 1; k < Z; ++k)
    for (int64_t j = 1; j < Y; ++j) {
      int64_t run = 0;
      for (int64_t i = 1; i < X; ++i) {
        run += m(i - 1, j - 1, k - 1) != 0;
        sums_[idx(i, j, k)] = run;
      }
    }
#pragma omp parallel for schedule(static)
  for (int64_t k = 1; k < Z; ++k)
    for (int64_t j = 2; j < Y; ++j)
      for (int64_t i = 1; i < X; ++i) sums_[idx(i, j, k)] += sums_[idx(i, j - 1, k)];
#pragma omp parallel for schedule(static)
  for (int64_t j = 1; j < Y; ++j)
    for (int64_t k = 2; k < Z; ++k)
      for (int64_t i = 1; i < X; ++i) sums_[idx(i, j, k)] += sums_[idx(i, j, k - 1)];
}

IntegralVolume build_integral(const Mask& m) { return IntegralVolume(m); }

int64_t box_count(const IntegralVolume& s, const BBox& box) {
  if (box.size.x < 0 || box.size.y < 0 || box.size.z < 0 || !box.fits_in(s.dims()))
    throw RangeError("box " + to_string(box) + " is outside the integral volume");
  return s.count_unchecked(box.min, box.size);
}

int64_t mean_round_half_down(int64_t sum, int64_t count) {
  // ceil(sum / count - 1/2) for non-negative sums.
  return (2 * sum + count - 1) / (2 * count);
}

namespace {

struct SlabBest {
  int64_t best = -1;
  int64_t n = 0;
  int64_t sx = 0, sy = 0, sz = 0;
};

void check_size(const Dims& d, const Dims& size) {
  for (int a = 0; a < 3; ++a)
    if (size[a] < 1 || size[a] > d[a])
      throw RangeError("search box size " + std::to_string(size[a]) + " on axis " +
                       std::to_string(a) + " does not fit dim " + std::to_string(d[a]));
}

void scan_slab(const IntegralVolume& s, const Dims& size, int64_t z, SlabBest& out) {
  const Dims& d = s.dims();
  for (int64_t y = 0; y + size.y <= d.y; ++y)
    for (int64_t x = 0; x + size.x <= d.x; ++x) {
      const int64_t c = s.count_unchecked({x, y, z}, size);
      if (c > out.best) {
        out = {c, 1, x, y, z};
      } else if (c == out.best) {
        ++out.n;
        out.sx += x;
        out.sy += y;
        out.sz += z;
      }
    }
}

BBox finish(const std::vector<SlabBest>& slabs, const Dims& d, const Dims& size) {
  SlabBest all;
  for (const SlabBest& s : slabs) {
    if (s.best > all.best) {
      all = s;
    } else if (s.best == all.best) {
      all.n += s.n;
      all.sx += s.sx;
      all.sy += s.sy;
      all.sz += s.sz;
    }
  }
  BBox box;
  box.size = size;
  box.min.x = std::clamp<int64_t>(mean_round_half_down(all.sx, all.n), 0, d.x - size.x);
  box.min.y = std::clamp<int64_t>(mean_round_half_down(all.sy, all.n), 0, d.y - size.y);
  box.min.z = std::clamp<int64_t>(mean_round_half_down(all.sz, all.n), 0, d.z - size.z);
  return box;
}

}  // namespace

BBox locate_box(const Mask& m, const Dims& size) {
  check_size(m.dims(), size);
  const IntegralVolume s(m);
  const int64_t nz = m.dims().z - size.z + 1;
  std::vector<SlabBest> slabs(static_cast<size_t>(nz));
  // Each z position is reduced on its own; the merge is integer-only, so the
  // result does not depend on scheduling.
#pragma omp parallel for schedule(dynamic, 1)
  for (int64_t z = 0; z < nz; ++z) scan_slab(s, size, z, slabs[z]);
  return finish(slabs, m.dims(), size);
}

namespace ref {

BBox locate_box(const Mask& m, const Dims& size) {
  check_size(m.dims(), size);
  const IntegralVolume s(m);
  std::vector<SlabBest> one(1);
  for (int64_t z = 0; z + size.z <= m.dims().z; ++z) scan_slab(s, size, z, one[0]);
  return finish(one, m.dims(), size);
}

}  // namespace ref

BBox scale_box_up(const BBox& b, int64_t factor, const Dims& full_size, const Dims& bounds) {
  BBox out;
  out.size = full_size;
  for (int a = 0; a < 3; ++a) {
    if (full_size[a] > bounds[a])
      throw RangeError("scaled box size " + std::to_string(full_size[a]) + " exceeds bound " +
                       std::to_string(bounds[a]) + " on axis " + std::to_string(a));
    out.min[a] = std::clamp<int64_t>(b.min[a] * factor, 0, bounds[a] - full_size[a]);
  }
  return out;
}

BBox centroid_box(const Mask& gt, const Dims& size) {
  const Dims& d = gt.dims();
  for (int a = 0; a < 3; ++a)
    if (size[a] > d[a])
      throw RangeError("box size exceeds frame on axis " + std::to_string(a));
  int64_t n = 0;
  Index3 sum{0, 0, 0}, lo{d.x, d.y, d.z}, hi{-1, -1, -1};
  for (int64_t z = 0; z < d.z; ++z)
    for (int64_t y = 0; y < d.y; ++y)
      for (int64_t x = 0; x < d.x; ++x) {
        if (!gt(x, y, z)) continue;
        ++n;
        sum.x += x;
        sum.y += y;
        sum.z += z;
        lo = {std::min(lo.x, x), std::min(lo.y, y), std::min(lo.z, z)};
        hi = {std::max(hi.x, x), std::max(hi.y, y), std::max(hi.z, z)};
      }
  if (n == 0) throw EmptyStructureError("ground-truth mask is empty");
  BBox box;
  box.size = size;
  for (int a = 0; a < 3; ++a) {
    const int64_t c = std::llround(static_cast<double>(sum[a]) / static_cast<double>(n));
    box.min[a] = std::clamp<int64_t>(c - size[a] / 2, 0, d[a] - size[a]);
    if (hi[a] - lo[a] + 1 > size[a])
      log_warning("structure extent " + std::to_string(hi[a] - lo[a] + 1) + " exceeds box size " +
                  std::to_string(size[a]) + " on axis " + std::to_string(a));
  }
  return box;
}

Mask rasterize_box(const BBox& box, const Dims& frame, const Spacing& spacing, int64_t factor) {
  for (int a = 0; a < 3; ++a)
    if (frame[a] % factor != 0)
      throw DownsampleError("frame dim " + std::to_string(frame[a]) + " not divisible by " +
                            std::to_string(factor));
  const Dims ld{frame.x / factor, frame.y / factor, frame.z / factor};
  Mask out(ld, {spacing.x * factor, spacing.y * factor, spacing.z * factor});
  // Block centre in full-res continuous coordinates is factor * i + factor / 2.
  auto inside = [&](int64_t i, int a) {
    const int64_t c2 = 2 * factor * i + factor;  // doubled centre
    return c2 >= 2 * box.min[a] && c2 < 2 * (box.min[a] + box.size[a]);
  };
  for (int64_t z = 0; z < ld.z; ++z)
    for (int64_t y = 0; y < ld.y; ++y)
      for (int64_t x = 0; x < ld.x; ++x) out(x, y, z) = inside(x, 0) && inside(y, 1) && inside(z, 2);
  return out;
}

Mask make_loc_target(const Mask& gt, const Dims& size, int64_t factor) {
  const BBox box = centroid_box(gt, size);
  return rasterize_box(box, gt.dims(), gt.spacing(), factor);
}

}  // namespace oarseg
