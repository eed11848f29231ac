// Serial reference kernels: direct loops over the definition with per-tap
// bounds checks.

#include "oarseg/nn/layers.hpp"

namespace oarseg::nn::ref {

template <typename T>
Tensor5<T> conv3d_forward(const Tensor5<T>& x, std::span<const T> w, std::span<const T> b,
                          int64_t cout, int k) {
  const Shape5 xs = x.shape;
  if (w.size() != static_cast<size_t>(cout * xs.c * k * k * k) || b.size() != static_cast<size_t>(cout))
    throw ShapeError("ref::conv3d_forward: parameter shape mismatch");
  Shape5 ys = xs;
  ys.c = cout;
  Tensor5<T> y(ys);
  const int r = k / 2;
  for (int64_t n = 0; n < xs.n; ++n)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t z = 0; z < xs.z; ++z)
        for (int64_t yy = 0; yy < xs.y; ++yy)
          for (int64_t xx = 0; xx < xs.x; ++xx) {
            double acc = b[co];
            for (int64_t ci = 0; ci < xs.c; ++ci)
              for (int kz = 0; kz < k; ++kz)
                for (int ky = 0; ky < k; ++ky)
                  for (int kx = 0; kx < k; ++kx) {
                    const int64_t sx = xx + kx - r, sy = yy + ky - r, sz = z + kz - r;
                    if (sx < 0 || sy < 0 || sz < 0 || sx >= xs.x || sy >= xs.y || sz >= xs.z)
                      continue;
                    acc += static_cast<double>(w[(((co * xs.c + ci) * k + kz) * k + ky) * k + kx]) *
                           x.at(n, ci, sx, sy, sz);
                  }
            y.at(n, co, xx, yy, z) = static_cast<T>(acc);
          }
  return y;
}

template <typename T>
void conv3d_backward(const Tensor5<T>& x, std::span<const T> w, const Tensor5<T>& dy, int k,
                     Tensor5<T>* dx, std::span<T> dw, std::span<T> db) {
  const Shape5 xs = x.shape;
  const int64_t cout = dy.shape.c;
  const int r = k / 2;
  if (dx) *dx = Tensor5<T>(xs);
  for (int64_t n = 0; n < xs.n; ++n)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t z = 0; z < xs.z; ++z)
        for (int64_t yy = 0; yy < xs.y; ++yy)
          for (int64_t xx = 0; xx < xs.x; ++xx) {
            const T g = dy.at(n, co, xx, yy, z);
            db[co] += g;
            for (int64_t ci = 0; ci < xs.c; ++ci)
              for (int kz = 0; kz < k; ++kz)
                for (int ky = 0; ky < k; ++ky)
                  for (int kx = 0; kx < k; ++kx) {
                    const int64_t sx = xx + kx - r, sy = yy + ky - r, sz = z + kz - r;
                    if (sx < 0 || sy < 0 || sz < 0 || sx >= xs.x || sy >= xs.y || sz >= xs.z)
                      continue;
                    const int64_t wi = (((co * xs.c + ci) * k + kz) * k + ky) * k + kx;
                    dw[wi] += g * x.at(n, ci, sx, sy, sz);
                    if (dx) dx->at(n, ci, sx, sy, sz) += g * w[wi];
                  }
          }
}

template <typename T>
Tensor5<T> upconv2_forward(const Tensor5<T>& x, std::span<const T> w, std::span<const T> b,
                           int64_t cout) {
  const Shape5 xs = x.shape;
  if (w.size() != static_cast<size_t>(xs.c * cout * 8) || b.size() != static_cast<size_t>(cout))
    throw ShapeError("ref::upconv2_forward: parameter shape mismatch");
  Tensor5<T> y(Shape5{xs.n, cout, 2 * xs.x, 2 * xs.y, 2 * xs.z});
  for (int64_t n = 0; n < xs.n; ++n)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t z = 0; z < 2 * xs.z; ++z)
        for (int64_t yy = 0; yy < 2 * xs.y; ++yy)
          for (int64_t xx = 0; xx < 2 * xs.x; ++xx) {
            double acc = b[co];
            const int q = ((z % 2) * 2 + yy % 2) * 2 + xx % 2;
            for (int64_t ci = 0; ci < xs.c; ++ci)
              acc += static_cast<double>(w[(ci * cout + co) * 8 + q]) *
                     x.at(n, ci, xx / 2, yy / 2, z / 2);
            y.at(n, co, xx, yy, z) = static_cast<T>(acc);
          }
  return y;
}

template <typename T>
Tensor5<T> maxpool2_forward(const Tensor5<T>& x, std::vector<int64_t>& argmax) {
  const Shape5 xs = x.shape;
  if (xs.x % 2 || xs.y % 2 || xs.z % 2) throw ShapeError("ref::maxpool2: odd spatial dims");
  Tensor5<T> y(Shape5{xs.n, xs.c, xs.x / 2, xs.y / 2, xs.z / 2});
  argmax.assign(y.data.size(), 0);
  size_t o = 0;
  for (int64_t n = 0; n < xs.n; ++n)
    for (int64_t c = 0; c < xs.c; ++c)
      for (int64_t z = 0; z < xs.z / 2; ++z)
        for (int64_t yy = 0; yy < xs.y / 2; ++yy)
          for (int64_t xx = 0; xx < xs.x / 2; ++xx, ++o) {
            bool first = true;
            T best{};
            int64_t where = 0;
            for (int dz = 0; dz < 2; ++dz)
              for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                  const T v = x.at(n, c, 2 * xx + dx, 2 * yy + dy, 2 * z + dz);
                  if (first || v > best) {
                    best = v;
                    where = ((2 * z + dz) * xs.y + 2 * yy + dy) * xs.x + 2 * xx + dx;
                    first = false;
                  }
                }
            y.data[o] = best;
            argmax[o] = where;
          }
  return y;
}

#define OARSEG_INSTANTIATE(T)                                                                   \
  template Tensor5<T> conv3d_forward(const Tensor5<T>&, std::span<const T>, std::span<const T>, \
                                     int64_t, int);                                              \
  template void conv3d_backward(const Tensor5<T>&, std::span<const T>, const Tensor5<T>&, int,  \
                                Tensor5<T>*, std::span<T>, std::span<T>);                        \
  template Tensor5<T> upconv2_forward(const Tensor5<T>&, std::span<const T>, std::span<const T>, \
                                      int64_t);                                                  \
  template Tensor5<T> maxpool2_forward(const Tensor5<T>&, std::vector<int64_t>&);

OARSEG_INSTANTIATE(float)
OARSEG_INSTANTIATE(double)

#undef OARSEG_INSTANTIATE

}  // namespace oarseg::nn::ref
