#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "oarseg/errors.hpp"

namespace oarseg::nn {

// (n, c, x, y, z). Data is linearized with x fastest, then y, z, c, n:
// index = (((n * C + c) * Z + z) * Y + y) * X + x.
struct Shape5 {
  int64_t n = 1, c = 1, x = 1, y = 1, z = 1;

  int64_t spatial() const { return x * y * z; }
  int64_t count() const { return n * c * x * y * z; }
  friend bool operator==(const Shape5&, const Shape5&) = default;
};

std::string to_string(const Shape5& s);

template <typename T>
struct Tensor5 {
  Shape5 shape;
  std::vector<T> data;

  Tensor5() = default;
  explicit Tensor5(Shape5 s, T fill = T{}) : shape(s) {
    if (s.n < 1 || s.c < 1 || s.x < 1 || s.y < 1 || s.z < 1)
      throw ShapeError("tensor dims must all be >= 1, got " + to_string(s));
    data.assign(static_cast<size_t>(s.count()), fill);
  }

  T* channel(int64_t n, int64_t c) { return data.data() + (n * shape.c + c) * shape.spatial(); }
  const T* channel(int64_t n, int64_t c) const {
    return data.data() + (n * shape.c + c) * shape.spatial();
  }
  T& at(int64_t n, int64_t c, int64_t x, int64_t y, int64_t z) {
    return channel(n, c)[(z * shape.y + y) * shape.x + x];
  }
  const T& at(int64_t n, int64_t c, int64_t x, int64_t y, int64_t z) const {
    return channel(n, c)[(z * shape.y + y) * shape.x + x];
  }
};

// Generic n-d parameter tensor (conv kernels, biases, BN vectors).
template <typename T>
struct ParamTensor {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool trainable = true;

  int64_t count() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
};

}  // namespace oarseg::nn
