#pragma once

#include <cstdint>
#include <vector>

#include "oarseg/volume.hpp"

namespace oarseg {

// Summed-volume table with a zero border: at(i, j, k) is the foreground count
// in [0, i) x [0, j) x [0, k).
class IntegralVolume {
 public:
  explicit IntegralVolume(const Mask& m);

  const Dims& dims() const { return dims_; }  // of the source mask
  int64_t at(int64_t i, int64_t j, int64_t k) const {
    return sums_[(k * (dims_.y + 1) + j) * (dims_.x + 1) + i];
  }
  int64_t total() const { return at(dims_.x, dims_.y, dims_.z); }

  // Eight-term inclusion-exclusion; no bounds checks.
  int64_t count_unchecked(const Index3& lo, const Dims& size) const {
    const int64_t x0 = lo.x, y0 = lo.y, z0 = lo.z;
    const int64_t x1 = x0 + size.x, y1 = y0 + size.y, z1 = z0 + size.z;
    return at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0) + at(x0, y0, z1) +
           at(x0, y1, z0) + at(x1, y0, z0) - at(x0, y0, z0);
  }

 private:
  Dims dims_;
  std::vector<int64_t> sums_;
};

IntegralVolume build_integral(const Mask& m);

// Exact foreground count in `box`. Throws RangeError when the box leaves the grid.
int64_t box_count(const IntegralVolume& s, const BBox& box);

// Slides a cuboid of `size` over every valid position and returns the one
// enclosing the most foreground. Ties resolve to the componentwise mean of all
// maximizing min-corners, rounded half toward the lower index and clamped.
// Throws RangeError when `size` exceeds the mask on any axis.
BBox locate_box(const Mask& m, const Dims& size);

// Tie rule on its own: mean of `sum / count` rounded half down.
int64_t mean_round_half_down(int64_t sum, int64_t count);

namespace ref {
// Same search, single-threaded.
BBox locate_box(const Mask& m, const Dims& size);
}  // namespace ref

// Multiplies the min corner by `factor`, sets size to `full_size`, then shifts
// the box the least amount needed to fit inside `bounds`.
BBox scale_box_up(const BBox& b, int64_t factor, const Dims& full_size, const Dims& bounds);

// Fixed-size box centred on the rounded foreground centroid of `gt`, clamped
// into the grid. Throws EmptyStructureError for an empty mask; logs a warning
// when the structure overflows the box.
BBox centroid_box(const Mask& gt, const Dims& size);

// LocNet target: the centroid box rasterized at 1/factor resolution. A
// low-res voxel is set iff the centre of its factor^3 block lies in the box.
Mask make_loc_target(const Mask& gt, const Dims& size, int64_t factor = 4);
Mask rasterize_box(const BBox& box, const Dims& frame, const Spacing& spacing, int64_t factor);

}  // namespace oarseg
