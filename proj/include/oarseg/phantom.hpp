#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "oarseg/volume.hpp"

namespace oarseg {

// One axis-aligned ellipsoid "organ". Lengths in mm; the nominal centre is a
// fraction of the frame extent and moves by a uniform draw in [-jitter, jitter].
struct EllipsoidSpec {
  StructureId id = StructureId::Brainstem;
  std::array<std::pair<double, double>, 3> semi_axes{{{5, 7}, {5, 7}, {8, 10}}};
  std::array<double, 3> center_frac{0.5, 0.5, 0.5};
  std::array<double, 3> jitter{6, 6, 6};
  double intensity_hu = 300.0;
};

struct PhantomSpec {
  Dims dims{64, 64, 64};
  Spacing spacing{1, 1, 1};
  double background_hu = 0.0;
  double noise_sigma = 60.0;  // HU
  uint64_t seed = 0;
  std::vector<EllipsoidSpec> structures;

  void validate() const;  // throws SpecError
};

// Brainstem target plus a darker ParotidL distractor in a 64^3 frame.
PhantomSpec default_phantom_spec();

struct PhantomCase {
  Volume image;  // HU, integer valued, clipped to [-1000, 1000]
  std::map<StructureId, Mask> masks;
  std::map<StructureId, std::array<double, 3>> centers;  // sampled centres, mm
};

// Fully determined by (spec, case_seed).
PhantomCase generate_case(const PhantomSpec& spec, uint64_t case_seed);

// On-disk case layout:
//   <dir>/image.nrrd                 int16 HU
//   <dir>/structures/<Name>.nrrd     uint8 mask, one per structure present
struct CaseData {
  std::string id;
  Volume image;
  std::map<StructureId, Mask> masks;
};

void write_case(const PhantomCase& c, const std::filesystem::path& dir);
CaseData read_case(const std::filesystem::path& dir);
// Subdirectories of `root` holding an image.nrrd, sorted by name.
std::vector<std::filesystem::path> list_cases(const std::filesystem::path& root);
std::string case_dir_name(int index);

}  // namespace oarseg
