#include "oarseg/volume.hpp"

#include <algorithm>
#include <deque>
#include <numeric>

namespace oarseg {

int64_t foreground_count(const Mask& m) {
  int64_t n = 0;
  for (uint8_t v : m.data()) n += (v != 0);
  return n;
}

std::string to_string(const BBox& b) {
  return "min " + std::to_string(b.min.x) + "," + std::to_string(b.min.y) + "," +
         std::to_string(b.min.z) + " size " + std::to_string(b.size.x) + "," +
         std::to_string(b.size.y) + "," + std::to_string(b.size.z);
}

namespace {
constexpr std::array<std::string_view, 9> kNames = {
    "Mandible", "ParotidL",    "ParotidR",    "Brainstem", "SubmandL",
    "SubmandR", "OpticNerveL", "OpticNerveR", "Chiasm",
};
}

std::string_view structure_name(StructureId id) { return kNames[static_cast<size_t>(id)]; }

std::optional<StructureId> parse_structure(std::string_view name) {
  for (size_t i = 0; i < kNames.size(); ++i)
    if (kNames[i] == name) return static_cast<StructureId>(i);
  return std::nullopt;
}

OverlapCounts overlap_counts(const Mask& a, const Mask& b) {
  if (a.dims() != b.dims()) throw DimsError("overlap_counts: mask dims differ");
  OverlapCounts c;
  const auto da = a.data();
  const auto db = b.data();
  for (size_t i = 0; i < da.size(); ++i) {
    const bool fa = da[i] != 0;
    const bool fb = db[i] != 0;
    c.a += fa;
    c.b += fb;
    c.intersection += (fa && fb);
  }
  return c;
}

template <typename T>
Grid<T> crop_or_pad(const Grid<T>& v, const BBox& box, T fill) {
  if (box.size.x < 1 || box.size.y < 1 || box.size.z < 1)
    throw DimsError("crop_or_pad: box size must be >= 1");
  Grid<T> out(box.size, v.spacing(), fill);
  const Dims& d = v.dims();
  // Clip the box to the source once, then copy whole x-runs.
  const int64_t x0 = std::max<int64_t>(box.min.x, 0);
  const int64_t x1 = std::min<int64_t>(box.min.x + box.size.x, d.x);
  if (x0 >= x1) return out;
  for (int64_t z = 0; z < box.size.z; ++z) {
    const int64_t sz = box.min.z + z;
    if (sz < 0 || sz >= d.z) continue;
    for (int64_t y = 0; y < box.size.y; ++y) {
      const int64_t sy = box.min.y + y;
      if (sy < 0 || sy >= d.y) continue;
      const T* src = &v(x0, sy, sz);
      std::copy(src, src + (x1 - x0), &out(x0 - box.min.x, y, z));
    }
  }
  return out;
}

template <typename T>
void paste(Grid<T>& dst, const Grid<T>& src, const Index3& at) {
  const Dims& s = src.dims();
  for (int64_t z = 0; z < s.z; ++z)
    for (int64_t y = 0; y < s.y; ++y)
      for (int64_t x = 0; x < s.x; ++x)
        if (dst.contains(at.x + x, at.y + y, at.z + z))
          dst(at.x + x, at.y + y, at.z + z) = src(x, y, z);
}

template Volume crop_or_pad(const Volume&, const BBox&, float);
template Mask crop_or_pad(const Mask&, const BBox&, uint8_t);
template void paste(Volume&, const Volume&, const Index3&);
template void paste(Mask&, const Mask&, const Index3&);

ComponentLabels label_components(const Mask& m, int connectivity) {
  if (connectivity != 6 && connectivity != 26)
    throw RangeError("connectivity must be 6 or 26");
  const Dims& d = m.dims();
  ComponentLabels out;
  out.labels.assign(static_cast<size_t>(d.count()), 0);

  std::vector<Index3> offsets;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (manhattan == 0) continue;
        if (connectivity == 6 && manhattan != 1) continue;
        offsets.push_back({dx, dy, dz});
      }

  // Breadth-first flood fill from each unlabeled foreground voxel in raster order.
  std::deque<int64_t> queue;
  int32_t next = 0;
  for (int64_t i = 0; i < d.count(); ++i) {
    if (m[i] == 0 || out.labels[i] != 0) continue;
    const int32_t id = ++next;
    int64_t count = 0;
    out.labels[i] = id;
    queue.push_back(i);
    while (!queue.empty()) {
      const int64_t cur = queue.front();
      queue.pop_front();
      ++count;
      const Index3 p = unravel(d, cur);
      for (const Index3& o : offsets) {
        const int64_t nx = p.x + o.x, ny = p.y + o.y, nz = p.z + o.z;
        if (!m.contains(nx, ny, nz)) continue;
        const int64_t ni = linear_index(d, nx, ny, nz);
        if (m[ni] == 0 || out.labels[ni] != 0) continue;
        out.labels[ni] = id;
        queue.push_back(ni);
      }
    }
    out.components.push_back({id, count});
  }
  return out;
}

std::vector<Component> connected_components(const Mask& m, int connectivity) {
  return label_components(m, connectivity).components;
}

}  // namespace oarseg
