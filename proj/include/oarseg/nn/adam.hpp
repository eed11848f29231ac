#pragma once

#include <cstdint>
#include <vector>

#include "oarseg/nn/tensor.hpp"

namespace oarseg::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moments per trainable parameter tensor.
template <typename T>
struct AdamState {
  AdamConfig cfg;
  int64_t step = 0;
  std::vector<std::vector<T>> m, v;
};

template <typename T>
AdamState<T> make_adam_state(const std::vector<ParamTensor<T>>& params, AdamConfig cfg = {});

// p -= lr * m_hat / (sqrt(v_hat) + eps) with bias-corrected moments.
// Non-trainable tensors are skipped. Throws ShapeError if `state` was built
// for a different parameter layout.
template <typename T>
void adam_step(std::vector<ParamTensor<T>>& params, AdamState<T>& state);

}  // namespace oarseg::nn
