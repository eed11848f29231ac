#include "oarseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "oarseg/io.hpp"

namespace oarseg {

namespace fs = std::filesystem;

void PhantomSpec::validate() const {
  if (dims.x < 1 || dims.y < 1 || dims.z < 1) throw SpecError("phantom dims must be >= 1");
  if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0))
    throw SpecError("phantom spacing must be > 0");
  if (!(noise_sigma >= 0)) throw SpecError("noise_sigma must be >= 0");
  for (const EllipsoidSpec& e : structures) {
    const std::string name(structure_name(e.id));
    for (int a = 0; a < 3; ++a) {
      const auto [lo, hi] = e.semi_axes[a];
      // A semi-axis of at least one voxel keeps the voxel nearest the centre inside.
      if (!(lo >= spacing[a] && hi >= lo))
        throw SpecError(name + ": semi-axis range must satisfy spacing <= lo <= hi");
      if (!(e.jitter[a] >= 0)) throw SpecError(name + ": jitter must be >= 0");
      const double extent = (dims[a] - 1) * spacing[a];
      const double c = e.center_frac[a] * extent;
      if (c - e.jitter[a] - hi < 0 || c + e.jitter[a] + hi > extent)
        throw SpecError(name + ": ellipsoid cannot fit the frame along axis " +
                        std::string(1, "xyz"[a]));
    }
  }
}

PhantomSpec default_phantom_spec() {
  PhantomSpec s;
  EllipsoidSpec brainstem;
  brainstem.id = StructureId::Brainstem;
  brainstem.semi_axes = {{{5, 7}, {5, 7}, {8, 10}}};
  brainstem.center_frac = {0.5, 0.55, 0.45};
  brainstem.jitter = {6, 6, 6};
  brainstem.intensity_hu = 300;
  EllipsoidSpec parotid;
  parotid.id = StructureId::ParotidL;
  parotid.semi_axes = {{{4, 6}, {4, 6}, {4, 6}}};
  parotid.center_frac = {0.16, 0.3, 0.7};
  parotid.jitter = {3, 3, 3};
  parotid.intensity_hu = -150;
  s.structures = {brainstem, parotid};
  return s;
}

PhantomCase generate_case(const PhantomSpec& spec, uint64_t case_seed) {
  spec.validate();
  std::seed_seq seq{static_cast<uint32_t>(spec.seed), static_cast<uint32_t>(spec.seed >> 32),
                    static_cast<uint32_t>(case_seed), static_cast<uint32_t>(case_seed >> 32)};
  std::mt19937_64 rng(seq);
  auto uniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };

  const Dims& d = spec.dims;
  const Spacing& sp = spec.spacing;
  PhantomCase out;
  std::vector<double> mean(static_cast<size_t>(d.count()), spec.background_hu);
  for (const EllipsoidSpec& e : spec.structures) {
    std::array<double, 3> r, c;
    for (int a = 0; a < 3; ++a) r[a] = uniform(e.semi_axes[a].first, e.semi_axes[a].second);
    for (int a = 0; a < 3; ++a)
      c[a] = e.center_frac[a] * (d[a] - 1) * sp[a] + uniform(-e.jitter[a], e.jitter[a]);
    Mask m(d, sp);
    for (int64_t z = 0; z < d.z; ++z)
      for (int64_t y = 0; y < d.y; ++y)
        for (int64_t x = 0; x < d.x; ++x) {
          const double u = (x * sp.x - c[0]) / r[0];
          const double v = (y * sp.y - c[1]) / r[1];
          const double w = (z * sp.z - c[2]) / r[2];
          if (u * u + v * v + w * w <= 1.0) {
            m(x, y, z) = 1;
            mean[linear_index(d, x, y, z)] = e.intensity_hu;
          }
        }
    out.masks[e.id] = std::move(m);
    out.centers[e.id] = c;
  }

  out.image = Volume(d, sp);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int64_t i = 0; i < d.count(); ++i) {
    double v = mean[i];
    if (spec.noise_sigma > 0) v += spec.noise_sigma * noise(rng);
    out.image[i] = static_cast<float>(std::clamp(std::nearbyint(v), double(kHuMin), double(kHuMax)));
  }
  return out;
}

std::string case_dir_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%03d", index);
  return buf;
}

void write_case(const PhantomCase& c, const fs::path& dir) {
  fs::create_directories(dir / "structures");
  write_volume_int16(c.image, dir / "image.nrrd");
  for (const auto& [id, m] : c.masks)
    write_mask(m, dir / "structures" / (std::string(structure_name(id)) + ".nrrd"));
}

CaseData read_case(const fs::path& dir) {
  CaseData c;
  c.id = dir.filename().string();
  c.image = read_image(dir / "image.nrrd");
  const fs::path sdir = dir / "structures";
  if (fs::is_directory(sdir)) {
    for (StructureId id : kAllStructures) {
      const fs::path p = sdir / (std::string(structure_name(id)) + ".nrrd");
      if (!fs::exists(p)) continue;
      Mask m = read_mask(p);
      if (m.dims() != c.image.dims())
        throw DimsError(p.string() + ": mask dims differ from image.nrrd");
      c.masks[id] = std::move(m);
    }
  }
  return c;
}

std::vector<fs::path> list_cases(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "image.nrrd")) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace oarseg
