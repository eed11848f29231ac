#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "oarseg/errors.hpp"

namespace oarseg {

struct Dims {
  int64_t x = 1, y = 1, z = 1;

  int64_t count() const { return x * y * z; }
  int64_t operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  int64_t& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
  friend bool operator==(const Dims&, const Dims&) = default;
};

struct Index3 {
  int64_t x = 0, y = 0, z = 0;

  int64_t operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  int64_t& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
  friend bool operator==(const Index3&, const Index3&) = default;
};

// Millimetres per voxel along each axis.
struct Spacing {
  double x = 1.0, y = 1.0, z = 1.0;

  double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  double& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
  friend bool operator==(const Spacing&, const Spacing&) = default;
};

// Every grid in the project is linearized x fastest, z slowest.
inline int64_t linear_index(const Dims& d, int64_t x, int64_t y, int64_t z) {
  return (z * d.y + y) * d.x + x;
}

inline Index3 unravel(const Dims& d, int64_t i) {
  Index3 p;
  p.x = i % d.x;
  i /= d.x;
  p.y = i % d.y;
  p.z = i / d.y;
  return p;
}

// Dense scalar grid with physical spacing. Volume (float) and Mask (byte per
// voxel, 0 or 1) share this template.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() : Grid(Dims{1, 1, 1}) {}
  explicit Grid(Dims dims, Spacing spacing = {}, T fill = T{})
      : dims_(dims), spacing_(spacing) {
    validate(dims, spacing);
    data_.assign(static_cast<size_t>(dims.count()), fill);
  }
  Grid(Dims dims, Spacing spacing, std::vector<T> data)
      : dims_(dims), spacing_(spacing), data_(std::move(data)) {
    validate(dims, spacing);
    if (static_cast<int64_t>(data_.size()) != dims.count())
      throw DimsError("grid data length " + std::to_string(data_.size()) +
                      " does not match dims product " + std::to_string(dims.count()));
  }

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  void set_spacing(Spacing s) {
    validate(dims_, s);
    spacing_ = s;
  }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }

  T& operator()(int64_t x, int64_t y, int64_t z) { return data_[linear_index(dims_, x, y, z)]; }
  const T& operator()(int64_t x, int64_t y, int64_t z) const {
    return data_[linear_index(dims_, x, y, z)];
  }
  T& operator[](int64_t i) { return data_[i]; }
  const T& operator[](int64_t i) const { return data_[i]; }

  bool contains(int64_t x, int64_t y, int64_t z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims_.x && y < dims_.y && z < dims_.z;
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  static void validate(const Dims& d, const Spacing& s) {
    if (d.x < 1 || d.y < 1 || d.z < 1)
      throw DimsError("grid dims must be >= 1 on every axis");
    if (!(s.x > 0 && s.y > 0 && s.z > 0))
      throw DimsError("grid spacing must be > 0 on every axis");
  }

  Dims dims_;
  Spacing spacing_;
  std::vector<T> data_;
};

using Volume = Grid<float>;
using Mask = Grid<uint8_t>;

int64_t foreground_count(const Mask& m);

// Axis-aligned box in voxel index space: [min, min + size).
struct BBox {
  Index3 min;
  Dims size;

  Index3 max_exclusive() const { return {min.x + size.x, min.y + size.y, min.z + size.z}; }
  bool fits_in(const Dims& d) const {
    return min.x >= 0 && min.y >= 0 && min.z >= 0 && min.x + size.x <= d.x &&
           min.y + size.y <= d.y && min.z + size.z <= d.z;
  }
  bool contains(int64_t x, int64_t y, int64_t z) const {
    return x >= min.x && y >= min.y && z >= min.z && x < min.x + size.x &&
           y < min.y + size.y && z < min.z + size.z;
  }
  friend bool operator==(const BBox&, const BBox&) = default;
};

std::string to_string(const BBox& b);

enum class StructureId {
  Mandible,
  ParotidL,
  ParotidR,
  Brainstem,
  SubmandL,
  SubmandR,
  OpticNerveL,
  OpticNerveR,
  Chiasm,
};

inline constexpr std::array<StructureId, 9> kAllStructures = {
    StructureId::Mandible,  StructureId::ParotidL,    StructureId::ParotidR,
    StructureId::Brainstem, StructureId::SubmandL,    StructureId::SubmandR,
    StructureId::OpticNerveL, StructureId::OpticNerveR, StructureId::Chiasm,
};

std::string_view structure_name(StructureId id);
std::optional<StructureId> parse_structure(std::string_view name);

struct OverlapCounts {
  int64_t intersection = 0;
  int64_t a = 0;
  int64_t b = 0;
  friend bool operator==(const OverlapCounts&, const OverlapCounts&) = default;
};

// |A ∩ B|, |A|, |B|. Throws DimsError when the grids differ in shape.
OverlapCounts overlap_counts(const Mask& a, const Mask& b);

// Copies the region of `v` under `box` into a new grid of dims box.size.
// Voxels outside `v` take `fill`. Spacing is preserved.
template <typename T>
Grid<T> crop_or_pad(const Grid<T>& v, const BBox& box, T fill);

// Writes `src` into `dst` with src(0,0,0) landing at `at`; out-of-range voxels are skipped.
template <typename T>
void paste(Grid<T>& dst, const Grid<T>& src, const Index3& at);

struct Component {
  int32_t id = 0;  // 1-based label
  int64_t voxels = 0;
};

struct ComponentLabels {
  std::vector<int32_t> labels;  // 0 = background, same linearization as the mask
  std::vector<Component> components;
};

// Labels foreground with face (6) or full (26) connectivity. Component ids are
// assigned in raster order of each component's first voxel.
ComponentLabels label_components(const Mask& m, int connectivity = 26);
std::vector<Component> connected_components(const Mask& m, int connectivity = 26);

}  // namespace oarseg
