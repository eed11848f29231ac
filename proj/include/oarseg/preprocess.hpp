#pragma once

#include <array>
#include <utility>

#include "oarseg/volume.hpp"

namespace oarseg {

// Fixed-size crop window plus the (low, high) margin split per axis. Axis
// order is (left-right, anterior-posterior, superior-inferior), index
// increasing toward left / posterior / inferior.
struct CropSpec {
  Dims window{384, 384, 224};
  std::array<std::pair<double, double>, 3> margin_fracs{{{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}}};

  void validate() const;  // throws ConfigError
};

// Group 1: brainstem, chiasm, optic nerves. Group 2: mandible, parotids, submandibulars.
CropSpec default_crop_spec(int group);
int default_crop_group(StructureId id);

enum class SampleKind { Image, Mask };

// Output dims per axis: round(in_dim * in_spacing / target_spacing).
Dims resampled_dims(const Dims& dims, const Spacing& spacing, double target_spacing);

// Separable cubic resampling (Keys kernel, a = -0.5, border clamped) to an
// isotropic grid. SampleKind::Mask switches to nearest-neighbour.
Volume resample_isotropic(const Volume& v, double target_spacing = 1.0,
                          SampleKind kind = SampleKind::Image);
Mask resample_isotropic(const Mask& m, double target_spacing = 1.0);

// Keys cubic convolution weight.
double keys_cubic(double t);

namespace ref {
// Direct 4x4x4 tensor-product evaluation per output voxel, single-threaded.
Volume resample_isotropic(const Volume& v, double target_spacing = 1.0);
}  // namespace ref

// Box of size spec.window. Negative offsets mean the window extends past the
// low edge and the crop pads there.
BBox compute_crop_box(const Dims& dims, const CropSpec& spec);

inline constexpr float kHuMin = -1000.0f;
inline constexpr float kHuMax = 1000.0f;

// Clip to [-1000, 1000] HU and map linearly onto [0, 1].
Volume normalize_intensity(const Volume& v);
float normalize_hu(float hu);

// Block mean. Throws DownsampleError when a dim is not divisible by its factor.
Volume downsample_factor(const Volume& v, const Dims& factor);
// Block majority; ties go to foreground.
Mask downsample_factor(const Mask& m, const Dims& factor);

// Nearest (repeat) upsampling; spacing divided by factor.
template <typename T>
Grid<T> upsample_repeat(const Grid<T>& v, const Dims& factor);

}  // namespace oarseg
