#include "oarseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace oarseg {

OverlapScores scores_from_counts(const OverlapCounts& c) {
  if (c.a == 0 && c.b == 0) return {1.0, 1.0, 1.0};
  OverlapScores s;
  const auto i = static_cast<double>(c.intersection);
  s.dsc = 2.0 * i / static_cast<double>(c.a + c.b);
  s.ppv = c.a > 0 ? i / static_cast<double>(c.a) : 0.0;
  s.sen = c.b > 0 ? i / static_cast<double>(c.b) : 0.0;
  return s;
}

OverlapScores dsc_ppv_sen(const Mask& pred, const Mask& gt) {
  return scores_from_counts(overlap_counts(pred, gt));
}

Mask surface_mask(const Mask& m) {
  const Dims& d = m.dims();
  Mask out(d, m.spacing());
  auto fg = [&](int64_t x, int64_t y, int64_t z) { return m.contains(x, y, z) && m(x, y, z); };
#pragma omp parallel for schedule(static)
  for (int64_t z = 0; z < d.z; ++z)
    for (int64_t y = 0; y < d.y; ++y)
      for (int64_t x = 0; x < d.x; ++x) {
        if (!m(x, y, z)) continue;
        out(x, y, z) = !(fg(x - 1, y, z) && fg(x + 1, y, z) && fg(x, y - 1, z) &&
                         fg(x, y + 1, z) && fg(x, y, z - 1) && fg(x, y, z + 1));
      }
  return out;
}

std::vector<Point3> surface_points(const Mask& m) {
  const Mask s = surface_mask(m);
  const Spacing& sp = m.spacing();
  std::vector<Point3> pts;
  const Dims& d = m.dims();
  for (int64_t z = 0; z < d.z; ++z)
    for (int64_t y = 0; y < d.y; ++y)
      for (int64_t x = 0; x < d.x; ++x)
        if (s(x, y, z)) pts.push_back({x * sp.x, y * sp.y, z * sp.z});
  return pts;
}

double nearest_rank_percentile(std::vector<double> values, double p) {
  if (values.empty()) throw EmptySetError("percentile of an empty set");
  if (!(p > 0.0 && p <= 1.0)) throw RangeError("percentile must lie in (0, 1]");
  const auto n = static_cast<int64_t>(values.size());
  // The small guard keeps p * n from landing one rank high through rounding (0.95 * 20).
  int64_t rank = static_cast<int64_t>(std::ceil(p * static_cast<double>(n) - 1e-9));
  rank = std::clamp<int64_t>(rank, 1, n);
  auto it = values.begin() + (rank - 1);
  std::nth_element(values.begin(), it, values.end());
  return *it;
}

double directed_hd_p(const std::vector<Point3>& x, const std::vector<Point3>& y, double p) {
  if (x.empty() || y.empty()) throw EmptySetError("directed Hausdorff distance of an empty set");
  std::vector<double> dist(x.size());
#pragma omp parallel for schedule(static)
  for (size_t i = 0; i < x.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const Point3& q : y) {
      const double dx = x[i][0] - q[0], dy = x[i][1] - q[1], dz = x[i][2] - q[2];
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    dist[i] = std::sqrt(best);
  }
  return nearest_rank_percentile(std::move(dist), p);
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// One-dimensional lower envelope of parabolas (Felzenszwalb & Huttenlocher),
// sample positions i * h. Infinite samples are not sites.
void envelope_1d(const double* f, double* out, int64_t n, double h, std::vector<int64_t>& v,
                 std::vector<double>& zb) {
  v.resize(static_cast<size_t>(n));
  zb.resize(static_cast<size_t>(n) + 1);
  int64_t k = -1;
  for (int64_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    const double pq = q * h;
    while (k >= 0) {
      const double pv = v[k] * h;
      const double s = ((f[q] + pq * pq) - (f[v[k]] + pv * pv)) / (2.0 * (pq - pv));
      if (s <= zb[k]) {
        --k;
        continue;
      }
      ++k;
      v[k] = q;
      zb[k] = s;
      zb[k + 1] = kInf;
      break;
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      zb[0] = -kInf;
      zb[1] = kInf;
    }
  }
  if (k < 0) {
    std::fill(out, out + n, kInf);
    return;
  }
  int64_t j = 0;
  for (int64_t q = 0; q < n; ++q) {
    const double pq = q * h;
    while (zb[j + 1] < pq) ++j;
    const double d = pq - v[j] * h;
    out[q] = d * d + f[v[j]];
  }
}

void brute_1d(const double* f, double* out, int64_t n, double h) {
  for (int64_t q = 0; q < n; ++q) {
    double best = kInf;
    for (int64_t p = 0; p < n; ++p) {
      if (f[p] == kInf) continue;
      const double d = (q - p) * h;
      best = std::min(best, d * d + f[p]);
    }
    out[q] = best;
  }
}

template <bool Parallel, typename Pass>
std::vector<double> separable_edt(const Mask& sites, Pass pass) {
  const Dims d = sites.dims();
  std::vector<double> g(static_cast<size_t>(d.count()));
  for (int64_t i = 0; i < d.count(); ++i) g[i] = sites[i] ? 0.0 : kInf;
  for (int axis = 0; axis < 3; ++axis) {
    const int64_t n = d[axis];
    const int64_t stride = axis == 0 ? 1 : (axis == 1 ? d.x : d.x * d.y);
    const int a1 = axis == 0 ? 1 : 0;
    const int a2 = axis == 2 ? 1 : 2;
    const int64_t lines = d[a1] * d[a2];
    const double h = sites.spacing()[axis];
#pragma omp parallel if (Parallel)
    {
      std::vector<double> in(static_cast<size_t>(n)), out(static_cast<size_t>(n));
      std::vector<int64_t> v;
      std::vector<double> zb;
#pragma omp for schedule(static)
      for (int64_t line = 0; line < lines; ++line) {
        Index3 p{0, 0, 0};
        p[a1] = line % d[a1];
        p[a2] = line / d[a1];
        const int64_t base = linear_index(d, p.x, p.y, p.z);
        for (int64_t i = 0; i < n; ++i) in[i] = g[base + i * stride];
        pass(in.data(), out.data(), n, h, v, zb);
        for (int64_t i = 0; i < n; ++i) g[base + i * stride] = out[i];
      }
    }
  }
  return g;
}

BBox surface_bounds(const Mask& a, const Mask& b) {
  const Dims& d = a.dims();
  Index3 lo{d.x, d.y, d.z}, hi{-1, -1, -1};
  for (const Mask* m : {&a, &b})
    for (int64_t z = 0; z < d.z; ++z)
      for (int64_t y = 0; y < d.y; ++y)
        for (int64_t x = 0; x < d.x; ++x) {
          if (!(*m)(x, y, z)) continue;
          lo = {std::min(lo.x, x), std::min(lo.y, y), std::min(lo.z, z)};
          hi = {std::max(hi.x, x), std::max(hi.y, y), std::max(hi.z, z)};
        }
  return {lo, {hi.x - lo.x + 1, hi.y - lo.y + 1, hi.z - lo.z + 1}};
}

}  // namespace

std::vector<double> squared_distance_transform(const Mask& sites) {
  return separable_edt<true>(sites, envelope_1d);
}

namespace ref {
std::vector<double> squared_distance_transform(const Mask& sites) {
  return separable_edt<false>(sites, [](const double* f, double* out, int64_t n, double h,
                                        std::vector<int64_t>&, std::vector<double>&) {
    brute_1d(f, out, n, h);
  });
}
}  // namespace ref

std::vector<double> surface_distances(const Mask& from, const Mask& to) {
  if (from.dims() != to.dims()) throw DimsError("surface_distances: mask dims differ");
  if (!(from.spacing() == to.spacing())) throw DimsError("surface_distances: spacing differs");
  const Mask sf = surface_mask(from);
  const Mask st = surface_mask(to);
  if (foreground_count(sf) == 0 || foreground_count(st) == 0)
    throw EmptySetError("surface_distances: empty surface");
  // Restricting the transform to the joint bounding box is exact: every site
  // and every query point lies inside it.
  const BBox roi = surface_bounds(sf, st);
  const Mask sites = crop_or_pad(st, roi, uint8_t{0});
  const std::vector<double> sq = squared_distance_transform(sites);
  std::vector<double> out;
  const Dims& d = from.dims();
  for (int64_t z = 0; z < d.z; ++z)
    for (int64_t y = 0; y < d.y; ++y)
      for (int64_t x = 0; x < d.x; ++x)
        if (sf(x, y, z))
          out.push_back(std::sqrt(
              sq[linear_index(roi.size, x - roi.min.x, y - roi.min.y, z - roi.min.z)]));
  return out;
}

double hd95(const Mask& pred, const Mask& gt) {
  if (pred.dims() != gt.dims()) throw DimsError("hd95: mask dims differ");
  const int64_t np = foreground_count(pred), ng = foreground_count(gt);
  if (np == 0 && ng == 0) return 0.0;
  if (np == 0 || ng == 0) return kInf;
  const double ab = nearest_rank_percentile(surface_distances(pred, gt), 0.95);
  const double ba = nearest_rank_percentile(surface_distances(gt, pred), 0.95);
  return (ab + ba) / 2.0;
}

MetricsReport evaluate(const Mask& pred, const Mask& gt, std::string case_id,
                       std::string structure) {
  const OverlapCounts c = overlap_counts(pred, gt);
  const OverlapScores s = scores_from_counts(c);
  MetricsReport r;
  r.case_id = std::move(case_id);
  r.structure = std::move(structure);
  r.dsc = s.dsc;
  r.ppv = s.ppv;
  r.sen = s.sen;
  r.hd95 = hd95(pred, gt);
  r.pred_voxels = c.a;
  r.gt_voxels = c.b;
  return r;
}

}  // namespace oarseg
