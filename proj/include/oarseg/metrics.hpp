#pragma once

#include <array>
#include <string>
#include <vector>

#include "oarseg/volume.hpp"

namespace oarseg {

struct OverlapScores {
  double dsc = 0.0;
  double ppv = 0.0;
  double sen = 0.0;
};

// A = prediction, B = gold standard.
//   DSC = 2|A∩B| / (|A| + |B|), PPV = |A∩B| / |A|, SEN = |A∩B| / |B|.
// Both empty scores (1, 1, 1); an empty denominator otherwise scores 0.
OverlapScores dsc_ppv_sen(const Mask& pred, const Mask& gt);
OverlapScores scores_from_counts(const OverlapCounts& c);

using Point3 = std::array<double, 3>;

// Centres (index * spacing, in mm) of foreground voxels with at least one
// background face neighbour; outside the grid counts as background.
std::vector<Point3> surface_points(const Mask& m);
Mask surface_mask(const Mask& m);

// Nearest-rank percentile (1-based rank ceil(p * n)) of the distances from
// each point of x to its nearest point of y. Brute force; throws EmptySetError
// when either set is empty.
double directed_hd_p(const std::vector<Point3>& x, const std::vector<Point3>& y, double p = 0.95);

// Nearest-rank percentile of an unsorted list; p in (0, 1].
double nearest_rank_percentile(std::vector<double> values, double p);

// Per voxel of `from`'s surface, the distance (mm) to the nearest surface voxel
// of `to`. Uses an exact Euclidean distance transform restricted to the
// bounding box of both surfaces. Both masks must share dims and spacing.
std::vector<double> surface_distances(const Mask& from, const Mask& to);

// Symmetric 95% Hausdorff distance: mean of the two directed 95th percentiles
// over surface voxels. One empty surface gives +infinity; both empty gives 0.
double hd95(const Mask& pred, const Mask& gt);

// Squared Euclidean distance transform (mm^2) to the nearest set voxel of
// `sites`, anisotropic spacing. Unset grids yield +infinity everywhere.
std::vector<double> squared_distance_transform(const Mask& sites);

namespace ref {
std::vector<double> squared_distance_transform(const Mask& sites);
}  // namespace ref

struct MetricsReport {
  std::string case_id;
  std::string structure;
  double dsc = 0.0;
  double hd95 = 0.0;
  double ppv = 0.0;
  double sen = 0.0;
  int64_t pred_voxels = 0;
  int64_t gt_voxels = 0;
  std::string frame = "iso";
};

MetricsReport evaluate(const Mask& pred, const Mask& gt, std::string case_id = {},
                       std::string structure = {});

}  // namespace oarseg
