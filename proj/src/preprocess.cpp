#include "oarseg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace oarseg {

void CropSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (window[a] < 1) throw ConfigError("crop.window: every axis must be >= 1");
    const auto [lo, hi] = margin_fracs[a];
    if (lo < 0 || hi < 0 || std::abs(lo + hi - 1.0) > 1e-9)
      throw ConfigError("crop margin fractions on axis " + std::to_string(a) +
                        " must be non-negative and sum to 1");
  }
}

CropSpec default_crop_spec(int group) {
  CropSpec s;
  if (group == 1) {
    s.margin_fracs = {{{0.5, 0.5}, {0.3, 0.7}, {0.9, 0.1}}};
  } else if (group == 2) {
    s.margin_fracs = {{{0.5, 0.5}, {0.2, 0.8}, {0.7, 0.3}}};
  } else {
    throw ConfigError("crop group must be 1 or 2, got " + std::to_string(group));
  }
  return s;
}

int default_crop_group(StructureId id) {
  switch (id) {
    case StructureId::Brainstem:
    case StructureId::Chiasm:
    case StructureId::OpticNerveL:
    case StructureId::OpticNerveR:
      return 1;
    default:
      return 2;
  }
}

Dims resampled_dims(const Dims& dims, const Spacing& spacing, double target_spacing) {
  if (!(target_spacing > 0)) throw ResampleError("target spacing must be > 0");
  Dims out;
  for (int a = 0; a < 3; ++a)
    out[a] = std::max<int64_t>(1, std::llround(dims[a] * spacing[a] / target_spacing));
  return out;
}

double keys_cubic(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

namespace {

struct Taps {
  std::array<int64_t, 4> index;
  std::array<double, 4> weight;
};

void check_axis(int64_t in_dim, double in_spacing, double target, int axis) {
  if (in_dim < 2 && in_spacing != target)
    throw ResampleError("cannot interpolate axis " + std::to_string(axis) + " with " +
                        std::to_string(in_dim) + " sample(s)");
}

std::vector<Taps> cubic_taps(int64_t in_dim, int64_t out_dim, double scale) {
  std::vector<Taps> taps(static_cast<size_t>(out_dim));
  for (int64_t i = 0; i < out_dim; ++i) {
    const double pos = static_cast<double>(i) * scale;
    const int64_t base = static_cast<int64_t>(std::floor(pos));
    for (int k = 0; k < 4; ++k) {
      const int64_t j = base - 1 + k;
      taps[i].index[k] = std::clamp<int64_t>(j, 0, in_dim - 1);
      taps[i].weight[k] = keys_cubic(pos - static_cast<double>(j));
    }
  }
  return taps;
}

// Resamples one axis of a linearized grid. Lines along `axis` are independent.
std::vector<float> resample_axis(const std::vector<float>& in, const Dims& din, int axis,
                                 int64_t out_n, double scale) {
  Dims dout = din;
  dout[axis] = out_n;
  std::vector<float> out(static_cast<size_t>(dout.count()));
  const auto taps = cubic_taps(din[axis], out_n, scale);
  const int64_t in_stride = axis == 0 ? 1 : (axis == 1 ? din.x : din.x * din.y);
  const int64_t out_stride = axis == 0 ? 1 : (axis == 1 ? dout.x : dout.x * dout.y);
  // The two non-resampled axes enumerate lines.
  const int a1 = axis == 0 ? 1 : 0;
  const int a2 = axis == 2 ? 1 : 2;
  const int64_t n1 = din[a1], n2 = din[a2];
  const int64_t lines = n1 * n2;

#pragma omp parallel for schedule(static)
  for (int64_t line = 0; line < lines; ++line) {
    Index3 p{0, 0, 0};
    p[a1] = line % n1;
    p[a2] = line / n1;
    const int64_t in_base = linear_index(din, p.x, p.y, p.z);
    const int64_t out_base = linear_index(dout, p.x, p.y, p.z);
    for (int64_t i = 0; i < out_n; ++i) {
      const Taps& t = taps[i];
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += t.weight[k] * in[in_base + t.index[k] * in_stride];
      out[out_base + i * out_stride] = static_cast<float>(acc);
    }
  }
  return out;
}

}  // namespace

Volume resample_isotropic(const Volume& v, double target_spacing, SampleKind kind) {
  if (kind == SampleKind::Mask) {
    Mask m(v.dims(), v.spacing());
    for (int64_t i = 0; i < v.size(); ++i) m[i] = v[i] != 0.0f;
    const Mask r = resample_isotropic(m, target_spacing);
    Volume out(r.dims(), r.spacing());
    for (int64_t i = 0; i < r.size(); ++i) out[i] = r[i];
    return out;
  }
  const Dims din = v.dims();
  const Dims dout = resampled_dims(din, v.spacing(), target_spacing);
  for (int a = 0; a < 3; ++a) check_axis(din[a], v.spacing()[a], target_spacing, a);

  std::vector<float> cur = v.storage();
  Dims cd = din;
  for (int a = 0; a < 3; ++a) {
    const double scale = target_spacing / v.spacing()[a];
    if (scale == 1.0 && dout[a] == cd[a]) continue;
    cur = resample_axis(cur, cd, a, dout[a], scale);
    cd[a] = dout[a];
  }
  return Volume(dout, {target_spacing, target_spacing, target_spacing}, std::move(cur));
}

Mask resample_isotropic(const Mask& m, double target_spacing) {
  const Dims din = m.dims();
  const Dims dout = resampled_dims(din, m.spacing(), target_spacing);
  std::array<std::vector<int64_t>, 3> nearest;
  for (int a = 0; a < 3; ++a) {
    const double scale = target_spacing / m.spacing()[a];
    nearest[a].resize(static_cast<size_t>(dout[a]));
    for (int64_t i = 0; i < dout[a]; ++i)
      nearest[a][i] = std::clamp<int64_t>(std::llround(i * scale), 0, din[a] - 1);
  }
  Mask out(dout, {target_spacing, target_spacing, target_spacing});
#pragma omp parallel for schedule(static)
  for (int64_t z = 0; z < dout.z; ++z)
    for (int64_t y = 0; y < dout.y; ++y)
      for (int64_t x = 0; x < dout.x; ++x)
        out(x, y, z) = m(nearest[0][x], nearest[1][y], nearest[2][z]);
  return out;
}

namespace ref {

Volume resample_isotropic(const Volume& v, double target_spacing) {
  const Dims din = v.dims();
  const Dims dout = resampled_dims(din, v.spacing(), target_spacing);
  for (int a = 0; a < 3; ++a) check_axis(din[a], v.spacing()[a], target_spacing, a);
  const auto tx = cubic_taps(din.x, dout.x, target_spacing / v.spacing().x);
  const auto ty = cubic_taps(din.y, dout.y, target_spacing / v.spacing().y);
  const auto tz = cubic_taps(din.z, dout.z, target_spacing / v.spacing().z);
  Volume out(dout, {target_spacing, target_spacing, target_spacing});
  for (int64_t z = 0; z < dout.z; ++z)
    for (int64_t y = 0; y < dout.y; ++y)
      for (int64_t x = 0; x < dout.x; ++x) {
        double acc = 0.0;
        for (int kz = 0; kz < 4; ++kz)
          for (int ky = 0; ky < 4; ++ky)
            for (int kx = 0; kx < 4; ++kx)
              acc += tx[x].weight[kx] * ty[y].weight[ky] * tz[z].weight[kz] *
                     v(tx[x].index[kx], ty[y].index[ky], tz[z].index[kz]);
        out(x, y, z) = static_cast<float>(acc);
      }
  return out;
}

}  // namespace ref

BBox compute_crop_box(const Dims& dims, const CropSpec& spec) {
  BBox box;
  box.size = spec.window;
  for (int a = 0; a < 3; ++a) {
    const int64_t slack = dims[a] - spec.window[a];
    const double lo = spec.margin_fracs[a].first;
    // nearbyint honours the default round-half-to-even mode.
    if (slack >= 0)
      box.min[a] = static_cast<int64_t>(std::nearbyint(lo * static_cast<double>(slack)));
    else
      box.min[a] = -static_cast<int64_t>(std::nearbyint(lo * static_cast<double>(-slack)));
  }
  return box;
}

float normalize_hu(float hu) {
  const float c = std::clamp(hu, kHuMin, kHuMax);
  return (c - kHuMin) / (kHuMax - kHuMin);
}

Volume normalize_intensity(const Volume& v) {
  Volume out(v.dims(), v.spacing());
  for (int64_t i = 0; i < v.size(); ++i) out[i] = normalize_hu(v[i]);
  return out;
}

namespace {

void check_factor(const Dims& d, const Dims& f) {
  for (int a = 0; a < 3; ++a) {
    if (f[a] < 1) throw DownsampleError("downsample factor must be >= 1");
    if (d[a] % f[a] != 0)
      throw DownsampleError("dim " + std::to_string(d[a]) + " on axis " + std::to_string(a) +
                            " is not divisible by factor " + std::to_string(f[a]));
  }
}

Spacing scaled(const Spacing& s, const Dims& f) {
  return {s.x * static_cast<double>(f.x), s.y * static_cast<double>(f.y),
          s.z * static_cast<double>(f.z)};
}

}  // namespace

Volume downsample_factor(const Volume& v, const Dims& f) {
  check_factor(v.dims(), f);
  const Dims od{v.dims().x / f.x, v.dims().y / f.y, v.dims().z / f.z};
  Volume out(od, scaled(v.spacing(), f));
  const double inv = 1.0 / static_cast<double>(f.count());
#pragma omp parallel for schedule(static)
  for (int64_t z = 0; z < od.z; ++z)
    for (int64_t y = 0; y < od.y; ++y)
      for (int64_t x = 0; x < od.x; ++x) {
        double acc = 0.0;
        for (int64_t k = 0; k < f.z; ++k)
          for (int64_t j = 0; j < f.y; ++j)
            for (int64_t i = 0; i < f.x; ++i) acc += v(x * f.x + i, y * f.y + j, z * f.z + k);
        out(x, y, z) = static_cast<float>(acc * inv);
      }
  return out;
}

Mask downsample_factor(const Mask& m, const Dims& f) {
  check_factor(m.dims(), f);
  const Dims od{m.dims().x / f.x, m.dims().y / f.y, m.dims().z / f.z};
  Mask out(od, scaled(m.spacing(), f));
  const int64_t block = f.count();
#pragma omp parallel for schedule(static)
  for (int64_t z = 0; z < od.z; ++z)
    for (int64_t y = 0; y < od.y; ++y)
      for (int64_t x = 0; x < od.x; ++x) {
        int64_t n = 0;
        for (int64_t k = 0; k < f.z; ++k)
          for (int64_t j = 0; j < f.y; ++j)
            for (int64_t i = 0; i < f.x; ++i) n += m(x * f.x + i, y * f.y + j, z * f.z + k) != 0;
        out(x, y, z) = 2 * n >= block;
      }
  return out;
}

template <typename T>
Grid<T> upsample_repeat(const Grid<T>& v, const Dims& f) {
  const Dims od{v.dims().x * f.x, v.dims().y * f.y, v.dims().z * f.z};
  const Spacing s = v.spacing();
  Grid<T> out(od, {s.x / f.x, s.y / f.y, s.z / f.z});
  for (int64_t z = 0; z < od.z; ++z)
    for (int64_t y = 0; y < od.y; ++y)
      for (int64_t x = 0; x < od.x; ++x) out(x, y, z) = v(x / f.x, y / f.y, z / f.z);
  return out;
}

template Volume upsample_repeat(const Volume&, const Dims&);
template Mask upsample_repeat(const Mask&, const Dims&);

}  // namespace oarseg
