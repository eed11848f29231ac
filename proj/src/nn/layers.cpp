#include "oarseg/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

namespace oarseg::nn {

namespace {

void check_conv_args(const Shape5& xs, size_t wsize, size_t bsize, int64_t cout, int k) {
  if (k != 1 && k != 3) throw ShapeError("conv3d kernel size must be 1 or 3");
  const auto expect = static_cast<size_t>(cout * xs.c * k * k * k);
  if (wsize != expect)
    throw ShapeError("conv3d kernel has " + std::to_string(wsize) + " weights, expected " +
                     std::to_string(expect) + " for input channels " + std::to_string(xs.c));
  if (bsize != static_cast<size_t>(cout)) throw ShapeError("conv3d bias length != cout");
}

// Fixed-order dot product; the lane split lets the compiler vectorize without
// reassociating the final sum differently across builds.
template <typename T>
double dot(const T* a, const T* b, int64_t n) {
  constexpr int kLanes = 8;
  T acc[kLanes] = {};
  int64_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (int l = 0; l < kLanes; ++l) acc[l] += a[i + l] * b[i + l];
  double s = 0.0;
  for (int l = 0; l < kLanes; ++l) s += acc[l];
  for (; i < n; ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

template <typename T>
double sum(const T* a, int64_t n) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += a[i];
  return s;
}

template <typename T>
inline void axpy(T* __restrict out, const T* __restrict in, T w, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] += w * in[i];
}

// 3x3x3 convolutions run as GEMMs over im2col tiles: a tile of kTile voxels is
// unfolded into a [cin * 27][ld] column buffer (ld padded to the micro-kernel
// width, padding zero) and multiplied against the packed kernel. Every output
// element is produced by one micro-kernel call that sums over its reduction
// index in ascending order, so results do not depend on the thread count.
constexpr int64_t kTile = 1024;
constexpr int kRows = 4;   // output rows per micro-kernel
constexpr int kCols = 32;  // column padding, a multiple of every micro-kernel width

int64_t round_up(int64_t v, int64_t m) { return (v + m - 1) / m * m; }

// Row stride of a column buffer for n columns: padded to kCols, plus one extra
// block so rows are not a power of two apart (which thrashes cache sets).
int64_t col_stride(int64_t n) { return round_up(n, kCols) + kCols; }

struct Grid3 {
  int64_t X, Y, Z;
};

// Calls f(dst_offset, src_row or -1, x0, len) for every run of voxels in
// [s0, s0 + n) that lies on one x row, with the row shifted by (ky, kz).
template <typename F>
inline void for_rows(const Grid3& g, int64_t s0, int64_t n, int ky, int kz, F&& f) {
  int64_t x = s0 % g.X, y = (s0 / g.X) % g.Y, z = s0 / (g.X * g.Y);
  for (int64_t o = 0; o < n;) {
    const int64_t len = std::min(g.X - x, n - o);
    const int64_t sy = y + ky - 1, sz = z + kz - 1;
    const bool inside = sy >= 0 && sy < g.Y && sz >= 0 && sz < g.Z;
    f(o, inside ? (sz * g.Y + sy) * g.X : int64_t{-1}, x, len);
    o += len;
    x = 0;
    if (++y == g.Y) {
      y = 0;
      ++z;
    }
  }
}

// col[(ci * 27 + tap) * ld + j] = x[ci] at voxel s0 + j shifted by the tap.
template <typename T>
void im2col3(const T* x, int64_t cin, const Grid3& g, int64_t s0, int64_t n, int64_t ld, T* col) {
  const int64_t S = g.X * g.Y * g.Z;
#pragma omp parallel for schedule(static)
  for (int64_t ci = 0; ci < cin; ++ci) {
    const T* in = x + ci * S;
    for (int tap = 0; tap < 27; ++tap) {
      const int kz = tap / 9, ky = (tap / 3) % 3, kx = tap % 3;
      T* dst = col + (ci * 27 + tap) * ld;
      for_rows(g, s0, n, ky, kz, [&](int64_t o, int64_t row, int64_t x0, int64_t len) {
        T* d = dst + o;
        if (row < 0) {
          for (int64_t i = 0; i < len; ++i) d[i] = T{};
          return;
        }
        const int64_t i0 = std::max<int64_t>(0, 1 - kx - x0);
        const int64_t i1 = std::max(i0, std::min<int64_t>(len, g.X + 1 - kx - x0));
        const T* src = in + row + x0 + kx - 1;
        for (int64_t i = 0; i < i0; ++i) d[i] = T{};
        for (int64_t i = i0; i < i1; ++i) d[i] = src[i];
        for (int64_t i = i1; i < len; ++i) d[i] = T{};
      });
      std::fill(dst + n, dst + ld, T{});
    }
  }
}

// Adjoint of im2col3: dx[ci] += col scattered back to the shifted voxels.
template <typename T>
void col2im3(const T* col, int64_t cin, const Grid3& g, int64_t s0, int64_t n, int64_t ld, T* dx) {
  const int64_t S = g.X * g.Y * g.Z;
#pragma omp parallel for schedule(static)
  for (int64_t ci = 0; ci < cin; ++ci) {
    T* out = dx + ci * S;
    for (int tap = 0; tap < 27; ++tap) {
      const int kz = tap / 9, ky = (tap / 3) % 3, kx = tap % 3;
      const T* src = col + (ci * 27 + tap) * ld;
      for_rows(g, s0, n, ky, kz, [&](int64_t o, int64_t row, int64_t x0, int64_t len) {
        if (row < 0) return;
        const int64_t i0 = std::max<int64_t>(0, 1 - kx - x0);
        const int64_t i1 = std::min<int64_t>(len, g.X + 1 - kx - x0);
        T* d = out + row + x0 + kx - 1;
        const T* c = src + o;
        for (int64_t i = i0; i < i1; ++i) d[i] += c[i];
      });
    }
  }
}

// 256-bit vectors (GCC/Clang extension) so the accumulator blocks below live
// in registers.
template <typename T>
struct Vec {
  typedef T type __attribute__((vector_size(32)));
  static constexpr int lanes = 32 / sizeof(T);
};

template <typename T>
inline typename Vec<T>::type load(const T* p) {
  typename Vec<T>::type v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

// a: packed [rows / kRows][K][kRows]; b: [K][ldb]; c[r][j] = sum_k a[r][k] * b[k][j]
// for every r < rows, j < cols. rows and ldb are padded to kRows and kCols.
template <typename T, typename Store>
void gemm_packed(const T* a, int64_t rows, int64_t K, const T* b, int64_t ldb, int64_t cols,
                 Store&& store) {
  using V = typename Vec<T>::type;
  constexpr int W = Vec<T>::lanes, NV = 4, NC = NV * W;
  static_assert(kCols % NC == 0);
  const int64_t rblocks = round_up(rows, kRows) / kRows;
  const int64_t cblocks = round_up(cols, NC) / NC;
#pragma omp parallel for schedule(static)
  for (int64_t blk = 0; blk < rblocks * cblocks; ++blk) {
    const int64_t rb = blk % rblocks, j0 = blk / rblocks * NC;
    const T* ap = a + rb * K * kRows;
    V acc[kRows][NV] = {};
    for (int64_t k = 0; k < K; ++k) {
      const T* bk = b + k * ldb + j0;
      V bv[NV];
#pragma GCC unroll 8
      for (int v = 0; v < NV; ++v) bv[v] = load(bk + v * W);
#pragma GCC unroll 8
      for (int r = 0; r < kRows; ++r) {
        const V ar = ap[k * kRows + r] - V{};
#pragma GCC unroll 8
        for (int v = 0; v < NV; ++v) acc[r][v] += ar * bv[v];
      }
    }
    T out[kRows][NC];
#pragma GCC unroll 8
    for (int r = 0; r < kRows; ++r)
#pragma GCC unroll 8
      for (int v = 0; v < NV; ++v) {
        const V t = acc[r][v];
        std::memcpy(&out[r][v * W], &t, sizeof t);
      }
    for (int r = 0; r < kRows && rb * kRows + r < rows; ++r)
      store(rb * kRows + r, j0, out[r], std::min<int64_t>(NC, cols - j0));
  }
}

// Packs m ([rows][K], or [K][rows] when transposed) into gemm_packed's layout.
template <typename T>
std::vector<T> pack_rows(const T* m, int64_t rows, int64_t K, bool transposed) {
  const int64_t rp = round_up(rows, kRows);
  std::vector<T> p(static_cast<size_t>(rp * K), T{});
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t k = 0; k < K; ++k)
      p[((r / kRows) * K + k) * kRows + r % kRows] = transposed ? m[k * rows + r] : m[r * K + k];
  return p;
}

// out[r][q] += sum_j a[r][j] * b[q][j]; a: [ra][lda], b: [rb][lda], lda a
// multiple of the vector width with zero padding. Lanes are reduced in a fixed order.
template <typename T>
void gemm_abt_acc(const T* a, int64_t ra, const T* b, int64_t rb, int64_t lda, double* out) {
  using V = typename Vec<T>::type;
  constexpr int W = Vec<T>::lanes, kA = 4, kB = 4;
  const int64_t ablocks = round_up(ra, kA) / kA, bblocks = round_up(rb, kB) / kB;
#pragma omp parallel for schedule(static)
  for (int64_t blk = 0; blk < ablocks * bblocks; ++blk) {
    const int64_t i0 = blk / bblocks * kA, q0 = blk % bblocks * kB;
    const T* ar[kA];
    const T* br[kB];
    for (int i = 0; i < kA; ++i) ar[i] = a + std::min(i0 + i, ra - 1) * lda;
    for (int q = 0; q < kB; ++q) br[q] = b + std::min(q0 + q, rb - 1) * lda;
    V acc[kA][kB] = {};
    for (int64_t j = 0; j < lda; j += W) {
      V av[kA], bv[kB];
#pragma GCC unroll 8
      for (int i = 0; i < kA; ++i) av[i] = load(ar[i] + j);
#pragma GCC unroll 8
      for (int q = 0; q < kB; ++q) bv[q] = load(br[q] + j);
#pragma GCC unroll 8
      for (int i = 0; i < kA; ++i)
#pragma GCC unroll 8
        for (int q = 0; q < kB; ++q) acc[i][q] += av[i] * bv[q];
    }
    T lanes[kA][kB][W];
#pragma GCC unroll 8
    for (int i = 0; i < kA; ++i)
#pragma GCC unroll 8
      for (int q = 0; q < kB; ++q) {
        const V t = acc[i][q];
        std::memcpy(lanes[i][q], &t, sizeof t);
      }
    for (int i = 0; i < kA && i0 + i < ra; ++i)
      for (int q = 0; q < kB && q0 + q < rb; ++q) {
        double s = 0.0;
        for (int l = 0; l < W; ++l) s += lanes[i][q][l];
        out[(i0 + i) * rb + q0 + q] += s;
      }
  }
}

}  // namespace

template <typename T>
Tensor5<T> conv3d_forward(const Tensor5<T>& x, std::span<const T> w, std::span<const T> b,
                          int64_t cout, int k) {
  const Shape5 xs = x.shape;
  check_conv_args(xs, w.size(), b.size(), cout, k);
  Shape5 ys = xs;
  ys.c = cout;
  Tensor5<T> y(ys);
  const int64_t cin = xs.c, S = xs.spatial();

  if (k == 1) {
    for (int64_t n = 0; n < xs.n; ++n) {
#pragma omp parallel for schedule(static)
      for (int64_t co = 0; co < cout; ++co) {
        T* out = y.channel(n, co);
        std::fill(out, out + S, b[co]);
        for (int64_t ci = 0; ci < cin; ++ci) axpy(out, x.channel(n, ci), w[co * cin + ci], S);
      }
    }
    return y;
  }

  const Grid3 g{xs.x, xs.y, xs.z};
  const int64_t K = cin * 27;
  const std::vector<T> wp = pack_rows(w.data(), cout, K, false);
  const int64_t ld = col_stride(std::min(kTile, S));
  const auto col = std::make_unique_for_overwrite<T[]>(static_cast<size_t>(K * ld));
  for (int64_t n = 0; n < xs.n; ++n)
    for (int64_t s0 = 0; s0 < S; s0 += kTile) {
      const int64_t len = std::min(kTile, S - s0);
      im2col3(x.channel(n, 0), cin, g, s0, len, ld, col.get());
      gemm_packed(wp.data(), cout, K, col.get(), ld, len,
                  [&](int64_t co, int64_t j0, const T* acc, int64_t m) {
                    T* out = y.channel(n, co) + s0 + j0;
                    for (int64_t j = 0; j < m; ++j) out[j] = b[co] + acc[j];
                  });
    }
  return y;
}

template <typename T>
void conv3d_backward(const Tensor5<T>& x, std::span<const T> w, const Tensor5<T>& dy, int k,
                     Tensor5<T>* dx, std::span<T> dw, std::span<T> db) {
  const Shape5 xs = x.shape;
  const int64_t cout = dy.shape.c;
  check_conv_args(xs, w.size(), db.size(), cout, k);
  if (dw.size() != w.size()) throw ShapeError("conv3d_backward: dw size mismatch");
  const int64_t cin = xs.c, S = xs.spatial();

#pragma omp parallel for schedule(static)
  for (int64_t co = 0; co < cout; ++co) {
    double s = 0.0;
    for (int64_t n = 0; n < xs.n; ++n) s += sum(dy.channel(n, co), S);
    db[co] += static_cast<T>(s);
  }

  if (k == 1) {
    if (dx) {
      *dx = Tensor5<T>(xs);
      for (int64_t n = 0; n < xs.n; ++n) {
#pragma omp parallel for schedule(static)
        for (int64_t ci = 0; ci < cin; ++ci) {
          T* g = dx->channel(n, ci);
          for (int64_t co = 0; co < cout; ++co) axpy(g, dy.channel(n, co), w[co * cin + ci], S);
        }
      }
    }
#pragma omp parallel for schedule(static)
    for (int64_t pc = 0; pc < cout * cin; ++pc) {
      const int64_t co = pc / cin, ci = pc % cin;
      double acc = 0.0;
      for (int64_t n = 0; n < xs.n; ++n) acc += dot(dy.channel(n, co), x.channel(n, ci), S);
      dw[pc] += static_cast<T>(acc);
    }
    return;
  }

  const Grid3 g{xs.x, xs.y, xs.z};
  const int64_t K = cin * 27;
  const int64_t ld = col_stride(std::min(kTile, S));
  const auto col = std::make_unique_for_overwrite<T[]>(static_cast<size_t>(K * ld));
  const auto dyt = std::make_unique_for_overwrite<T[]>(static_cast<size_t>(cout * ld));
  std::vector<double> dwacc(static_cast<size_t>(cout * K), 0.0);
  std::vector<T> wt;
  if (dx) {
    *dx = Tensor5<T>(xs);
    wt = pack_rows(w.data(), K, cout, true);
  }
  for (int64_t n = 0; n < xs.n; ++n)
    for (int64_t s0 = 0; s0 < S; s0 += kTile) {
      const int64_t len = std::min(kTile, S - s0);
      for (int64_t co = 0; co < cout; ++co) {
        T* d = dyt.get() + co * ld;
        std::copy(dy.channel(n, co) + s0, dy.channel(n, co) + s0 + len, d);
        std::fill(d + len, d + ld, T{});
      }
      im2col3(x.channel(n, 0), cin, g, s0, len, ld, col.get());
      gemm_abt_acc(dyt.get(), cout, col.get(), K, ld, dwacc.data());
      if (dx) {
        // col is reused for the column gradient.
        gemm_packed(wt.data(), K, cout, dyt.get(), ld, len,
                    [&](int64_t r, int64_t j0, const T* acc, int64_t m) {
                      std::copy(acc, acc + m, col.get() + r * ld + j0);
                    });
        col2im3(col.get(), cin, g, s0, len, ld, dx->channel(n, 0));
      }
    }
  for (size_t i = 0; i < dwacc.size(); ++i) dw[i] += static_cast<T>(dwacc[i]);
}

template <typename T>
Tensor5<T> maxpool2_forward(const Tensor5<T>& x, std::vector<int64_t>& argmax) {
  const Shape5 xs = x.shape;
  if (xs.x % 2 || xs.y % 2 || xs.z % 2)
    throw ShapeError("maxpool2 needs even spatial dims, got " + to_string(xs));
  Shape5 ys{xs.n, xs.c, xs.x / 2, xs.y / 2, xs.z / 2};
  Tensor5<T> y(ys);
  argmax.assign(static_cast<size_t>(ys.count()), 0);
  const int64_t planes = xs.n * xs.c;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < planes; ++p) {
    const T* in = x.data.data() + p * xs.spatial();
    T* out = y.data.data() + p * ys.spatial();
    int64_t* am = argmax.data() + p * ys.spatial();
    for (int64_t z = 0; z < ys.z; ++z)
      for (int64_t yy = 0; yy < ys.y; ++yy)
        for (int64_t xx = 0; xx < ys.x; ++xx) {
          int64_t best = ((2 * z) * xs.y + 2 * yy) * xs.x + 2 * xx;
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const int64_t i = ((2 * z + dz) * xs.y + 2 * yy + dy) * xs.x + 2 * xx + dx;
                if (in[i] > in[best]) best = i;
              }
          const int64_t o = (z * ys.y + yy) * ys.x + xx;
          out[o] = in[best];
          am[o] = best;
        }
  }
  return y;
}

template <typename T>
Tensor5<T> maxpool2_backward(const Tensor5<T>& dy, const std::vector<int64_t>& argmax,
                             const Shape5& x_shape) {
  Tensor5<T> dx(x_shape);
  const int64_t planes = x_shape.n * x_shape.c;
  const int64_t os = dy.shape.spatial();
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < planes; ++p) {
    T* g = dx.data.data() + p * x_shape.spatial();
    const T* go = dy.data.data() + p * os;
    const int64_t* am = argmax.data() + p * os;
    for (int64_t o = 0; o < os; ++o) g[am[o]] += go[o];
  }
  return dx;
}

template <typename T>
Tensor5<T> upconv2_forward(const Tensor5<T>& x, std::span<const T> w, std::span<const T> b,
                           int64_t cout) {
  const Shape5 xs = x.shape;
  if (w.size() != static_cast<size_t>(xs.c * cout * 8) || b.size() != static_cast<size_t>(cout))
    throw ShapeError("upconv2 parameter shape does not match cin=" + std::to_string(xs.c) +
                     " cout=" + std::to_string(cout));
  Shape5 ys{xs.n, cout, xs.x * 2, xs.y * 2, xs.z * 2};
  Tensor5<T> y(ys);
  for (int64_t n = 0; n < xs.n; ++n) {
#pragma omp parallel for schedule(static)
    for (int64_t co = 0; co < cout; ++co) {
      T* out = y.channel(n, co);
      std::fill(out, out + ys.spatial(), b[co]);
      for (int64_t ci = 0; ci < xs.c; ++ci) {
        const T* in = x.channel(n, ci);
        const T* wk = w.data() + (ci * cout + co) * 8;
        for (int64_t z = 0; z < xs.z; ++z)
          for (int64_t yy = 0; yy < xs.y; ++yy) {
            const T* irow = in + (z * xs.y + yy) * xs.x;
            for (int qz = 0; qz < 2; ++qz)
              for (int qy = 0; qy < 2; ++qy) {
                T* orow = out + ((2 * z + qz) * ys.y + 2 * yy + qy) * ys.x;
                const T w0 = wk[(qz * 2 + qy) * 2], w1 = wk[(qz * 2 + qy) * 2 + 1];
                for (int64_t xx = 0; xx < xs.x; ++xx) {
                  orow[2 * xx] += irow[xx] * w0;
                  orow[2 * xx + 1] += irow[xx] * w1;
                }
              }
          }
      }
    }
  }
  return y;
}

template <typename T>
void upconv2_backward(const Tensor5<T>& x, std::span<const T> w, const Tensor5<T>& dy,
                      Tensor5<T>* dx, std::span<T> dw, std::span<T> db) {
  const Shape5 xs = x.shape;
  const Shape5 ys = dy.shape;
  const int64_t cout = ys.c, cin = xs.c;
  if (w.size() != static_cast<size_t>(cin * cout * 8) || dw.size() != w.size() ||
      db.size() != static_cast<size_t>(cout))
    throw ShapeError("upconv2_backward parameter shape mismatch");

  // Gathers dy over the 2x2x2 block painted by input voxel (x, y, z).
  auto block = [&](const T* go, const T* wq, int64_t xx, int64_t yy, int64_t z) {
    T s = 0;
    for (int qz = 0; qz < 2; ++qz)
      for (int qy = 0; qy < 2; ++qy)
        for (int qx = 0; qx < 2; ++qx)
          s += wq[(qz * 2 + qy) * 2 + qx] *
               go[((2 * z + qz) * ys.y + 2 * yy + qy) * ys.x + 2 * xx + qx];
    return s;
  };

  if (dx) {
    *dx = Tensor5<T>(xs);
    for (int64_t n = 0; n < xs.n; ++n) {
#pragma omp parallel for schedule(static)
      for (int64_t ci = 0; ci < cin; ++ci) {
        T* g = dx->channel(n, ci);
        for (int64_t co = 0; co < cout; ++co) {
          const T* go = dy.channel(n, co);
          const T* wq = w.data() + (ci * cout + co) * 8;
          for (int64_t z = 0; z < xs.z; ++z)
            for (int64_t yy = 0; yy < xs.y; ++yy)
              for (int64_t xx = 0; xx < xs.x; ++xx)
                g[(z * xs.y + yy) * xs.x + xx] += block(go, wq, xx, yy, z);
        }
      }
    }
  }

  const int64_t pairs = cin * cout;
#pragma omp parallel for schedule(static)
  for (int64_t pc = 0; pc < pairs; ++pc) {
    const int64_t ci = pc / cout, co = pc % cout;
    double acc[8] = {};
    for (int64_t n = 0; n < xs.n; ++n) {
      const T* in = x.channel(n, ci);
      const T* go = dy.channel(n, co);
      for (int64_t z = 0; z < xs.z; ++z)
        for (int64_t yy = 0; yy < xs.y; ++yy)
          for (int64_t xx = 0; xx < xs.x; ++xx) {
            const double v = in[(z * xs.y + yy) * xs.x + xx];
            for (int qz = 0; qz < 2; ++qz)
              for (int qy = 0; qy < 2; ++qy)
                for (int qx = 0; qx < 2; ++qx)
                  acc[(qz * 2 + qy) * 2 + qx] +=
                      v * go[((2 * z + qz) * ys.y + 2 * yy + qy) * ys.x + 2 * xx + qx];
          }
    }
    T* g = dw.data() + pc * 8;
    for (int q = 0; q < 8; ++q) g[q] += static_cast<T>(acc[q]);
  }

#pragma omp parallel for schedule(static)
  for (int64_t co = 0; co < cout; ++co) {
    double s = 0.0;
    for (int64_t n = 0; n < xs.n; ++n) s += sum(dy.channel(n, co), ys.spatial());
    db[co] += static_cast<T>(s);
  }
}

template <typename T>
Tensor5<T> batchnorm_forward(const Tensor5<T>& x, std::span<const T> gamma,
                             std::span<const T> beta, std::span<T> running_mean,
                             std::span<T> running_var, bool train, bool update_running,
                             BatchNormCache<T>& cache) {
  const Shape5 s = x.shape;
  const auto C = static_cast<size_t>(s.c);
  if (gamma.size() != C || beta.size() != C || running_mean.size() != C ||
      running_var.size() != C)
    throw ShapeError("batchnorm parameter length does not match channel count " +
                     std::to_string(s.c));
  Tensor5<T> y(s);
  cache.xhat = Tensor5<T>(s);
  cache.inv_std.assign(C, T{});
  cache.train = train;
  const int64_t S = s.spatial();
  const double count = static_cast<double>(s.n * S);

#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < s.c; ++c) {
    double mean, var;
    if (train) {
      double acc = 0.0;
      for (int64_t n = 0; n < s.n; ++n) acc += sum(x.channel(n, c), S);
      mean = acc / count;
      double sq = 0.0;
      for (int64_t n = 0; n < s.n; ++n) {
        const T* in = x.channel(n, c);
        for (int64_t i = 0; i < S; ++i) {
          const double d = in[i] - mean;
          sq += d * d;
        }
      }
      var = sq / count;
      if (update_running) {
        running_mean[c] = static_cast<T>(kBnMomentum * running_mean[c] + (1.0 - kBnMomentum) * mean);
        running_var[c] = static_cast<T>(kBnMomentum * running_var[c] + (1.0 - kBnMomentum) * var);
      }
    } else {
      mean = running_mean[c];
      var = std::max<double>(running_var[c], 0.0);
    }
    const T inv = static_cast<T>(1.0 / std::sqrt(var + kBnEpsilon));
    const T m = static_cast<T>(mean);
    cache.inv_std[c] = inv;
    for (int64_t n = 0; n < s.n; ++n) {
      const T* in = x.channel(n, c);
      T* xh = cache.xhat.channel(n, c);
      T* out = y.channel(n, c);
      for (int64_t i = 0; i < S; ++i) {
        xh[i] = (in[i] - m) * inv;
        out[i] = gamma[c] * xh[i] + beta[c];
      }
    }
  }
  return y;
}

template <typename T>
Tensor5<T> batchnorm_backward(const Tensor5<T>& dy, const BatchNormCache<T>& cache,
                              std::span<const T> gamma, std::span<T> dgamma,
                              std::span<T> dbeta) {
  const Shape5 s = dy.shape;
  Tensor5<T> dx(s);
  const int64_t S = s.spatial();
  const double count = static_cast<double>(s.n * S);
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < s.c; ++c) {
    double sdy = 0.0, sdyx = 0.0;
    for (int64_t n = 0; n < s.n; ++n) {
      sdy += sum(dy.channel(n, c), S);
      sdyx += dot(dy.channel(n, c), cache.xhat.channel(n, c), S);
    }
    dgamma[c] += static_cast<T>(sdyx);
    dbeta[c] += static_cast<T>(sdy);
    const T scale = gamma[c] * cache.inv_std[c];
    for (int64_t n = 0; n < s.n; ++n) {
      const T* go = dy.channel(n, c);
      const T* xh = cache.xhat.channel(n, c);
      T* g = dx.channel(n, c);
      if (cache.train) {
        const T mdy = static_cast<T>(sdy / count);
        const T mdyx = static_cast<T>(sdyx / count);
        for (int64_t i = 0; i < S; ++i) g[i] = scale * (go[i] - mdy - xh[i] * mdyx);
      } else {
        for (int64_t i = 0; i < S; ++i) g[i] = scale * go[i];
      }
    }
  }
  return dx;
}

template <typename T>
void relu_inplace(Tensor5<T>& x) {
  for (T& v : x.data) v = v > T{0} ? v : T{0};
}

template <typename T>
void relu_backward_inplace(Tensor5<T>& dy, const Tensor5<T>& y) {
  for (size_t i = 0; i < dy.data.size(); ++i)
    if (!(y.data[i] > T{0})) dy.data[i] = T{0};
}

template <typename T>
Tensor5<T> concat_channels(const Tensor5<T>& a, const Tensor5<T>& b) {
  Shape5 sa = a.shape, sb = b.shape;
  if (sa.n != sb.n || sa.x != sb.x || sa.y != sb.y || sa.z != sb.z)
    throw ShapeError("concat_channels: " + to_string(sa) + " vs " + to_string(sb));
  Shape5 s = sa;
  s.c = sa.c + sb.c;
  Tensor5<T> out(s);
  const int64_t S = sa.spatial();
  for (int64_t n = 0; n < s.n; ++n) {
    std::copy(a.channel(n, 0), a.channel(n, 0) + sa.c * S, out.channel(n, 0));
    std::copy(b.channel(n, 0), b.channel(n, 0) + sb.c * S, out.channel(n, sa.c));
  }
  return out;
}

template <typename T>
void split_channels(const Tensor5<T>& d, int64_t ca, Tensor5<T>& da, Tensor5<T>& db) {
  const Shape5 s = d.shape;
  const int64_t S = s.spatial();
  da = Tensor5<T>(Shape5{s.n, ca, s.x, s.y, s.z});
  db = Tensor5<T>(Shape5{s.n, s.c - ca, s.x, s.y, s.z});
  for (int64_t n = 0; n < s.n; ++n) {
    std::copy(d.channel(n, 0), d.channel(n, 0) + ca * S, da.channel(n, 0));
    std::copy(d.channel(n, ca), d.channel(n, ca) + (s.c - ca) * S, db.channel(n, 0));
  }
}

template <typename T>
T sigmoid(T z) {
  if (z >= T{0}) return T{1} / (T{1} + std::exp(-z));
  const T e = std::exp(z);
  return e / (T{1} + e);
}

template <typename T>
LossResult<T> bce_loss(const Tensor5<T>& logits, const Tensor5<T>& target) {
  if (!(logits.shape == target.shape))
    throw ShapeError("bce_loss: logits " + to_string(logits.shape) + " vs target " +
                     to_string(target.shape));
  LossResult<T> r;
  r.grad = Tensor5<T>(logits.shape);
  const auto N = static_cast<int64_t>(logits.data.size());
  const double invn = 1.0 / static_cast<double>(N);
  double acc = 0.0;
  for (int64_t i = 0; i < N; ++i) {
    const double z = logits.data[i];
    const double y = target.data[i];
    acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    r.grad.data[i] = static_cast<T>((sigmoid<double>(z) - y) * invn);
  }
  r.loss = acc * invn;
  return r;
}

#define OARSEG_INSTANTIATE(T)                                                                   \
  template Tensor5<T> conv3d_forward(const Tensor5<T>&, std::span<const T>, std::span<const T>, \
                                     int64_t, int);                                              \
  template void conv3d_backward(const Tensor5<T>&, std::span<const T>, const Tensor5<T>&, int,  \
                                Tensor5<T>*, std::span<T>, std::span<T>);                        \
  template Tensor5<T> maxpool2_forward(const Tensor5<T>&, std::vector<int64_t>&);               \
  template Tensor5<T> maxpool2_backward(const Tensor5<T>&, const std::vector<int64_t>&,         \
                                        const Shape5&);                                          \
  template Tensor5<T> upconv2_forward(const Tensor5<T>&, std::span<const T>, std::span<const T>, \
                                      int64_t);                                                  \
  template void upconv2_backward(const Tensor5<T>&, std::span<const T>, const Tensor5<T>&,      \
                                 Tensor5<T>*, std::span<T>, std::span<T>);                       \
  template Tensor5<T> batchnorm_forward(const Tensor5<T>&, std::span<const T>,                  \
                                        std::span<const T>, std::span<T>, std::span<T>, bool,    \
                                        bool, BatchNormCache<T>&);                               \
  template Tensor5<T> batchnorm_backward(const Tensor5<T>&, const BatchNormCache<T>&,           \
                                         std::span<const T>, std::span<T>, std::span<T>);        \
  template void relu_inplace(Tensor5<T>&);                                                      \
  template void relu_backward_inplace(Tensor5<T>&, const Tensor5<T>&);                          \
  template Tensor5<T> concat_channels(const Tensor5<T>&, const Tensor5<T>&);                    \
  template void split_channels(const Tensor5<T>&, int64_t, Tensor5<T>&, Tensor5<T>&);          \
  template T sigmoid(T);                                                                        \
  template LossResult<T> bce_loss(const Tensor5<T>&, const Tensor5<T>&);

OARSEG_INSTANTIATE(float)
OARSEG_INSTANTIATE(double)

#undef OARSEG_INSTANTIATE

}  // namespace oarseg::nn
