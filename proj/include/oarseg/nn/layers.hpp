#pragma once

#include <span>
#include <vector>

#include "oarseg/nn/tensor.hpp"

// Layer kernels for the 3D U-Net. The functions in oarseg::nn are the
// OpenMP-parallel versions used everywhere; oarseg::nn::ref holds plain serial
// loops kept as the reference the parallel kernels are tested and
// benchmarked against.
//
// Parallel kernels split work by output channel (or channel pair for weight
// gradients) so every reduction runs on one thread in a fixed order. Results
// are bitwise identical for any thread count.
//
// Backward functions accumulate (+=) into weight and bias gradients and
// overwrite the input gradient.

namespace oarseg::nn {

// Kernel layout [cout][cin][kz][ky][kx]; k is 1 or 3, zero "same" padding.
template <typename T>
Tensor5<T> conv3d_forward(const Tensor5<T>& x, std::span<const T> w, std::span<const T> b,
                          int64_t cout, int k);

template <typename T>
void conv3d_backward(const Tensor5<T>& x, std::span<const T> w, const Tensor5<T>& dy, int k,
                     Tensor5<T>* dx, std::span<T> dw, std::span<T> db);

// 2x2x2 max pooling, stride 2. `argmax` receives, per output voxel, the
// within-channel spatial index of the winning input voxel (first on ties).
template <typename T>
Tensor5<T> maxpool2_forward(const Tensor5<T>& x, std::vector<int64_t>& argmax);

template <typename T>
Tensor5<T> maxpool2_backward(const Tensor5<T>& dy, const std::vector<int64_t>& argmax,
                             const Shape5& x_shape);

// Transposed convolution, kernel 2x2x2, stride 2. Kernel layout
// [cin][cout][kz][ky][kx].
template <typename T>
Tensor5<T> upconv2_forward(const Tensor5<T>& x, std::span<const T> w, std::span<const T> b,
                           int64_t cout);

template <typename T>
void upconv2_backward(const Tensor5<T>& x, std::span<const T> w, const Tensor5<T>& dy,
                      Tensor5<T>* dx, std::span<T> dw, std::span<T> db);

inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnMomentum = 0.9;

template <typename T>
struct BatchNormCache {
  Tensor5<T> xhat;
  std::vector<T> inv_std;
  bool train = true;
};

// Train mode normalizes each channel over (n, x, y, z) with biased variance and
// folds the batch statistics into the running ones when `update_running`.
// Eval mode uses the running statistics.
template <typename T>
Tensor5<T> batchnorm_forward(const Tensor5<T>& x, std::span<const T> gamma,
                             std::span<const T> beta, std::span<T> running_mean,
                             std::span<T> running_var, bool train, bool update_running,
                             BatchNormCache<T>& cache);

template <typename T>
Tensor5<T> batchnorm_backward(const Tensor5<T>& dy, const BatchNormCache<T>& cache,
                              std::span<const T> gamma, std::span<T> dgamma,
                              std::span<T> dbeta);

template <typename T>
void relu_inplace(Tensor5<T>& x);

// dy is zeroed where the forward output was not positive.
template <typename T>
void relu_backward_inplace(Tensor5<T>& dy, const Tensor5<T>& y);

template <typename T>
Tensor5<T> concat_channels(const Tensor5<T>& a, const Tensor5<T>& b);

template <typename T>
void split_channels(const Tensor5<T>& d, int64_t ca, Tensor5<T>& da, Tensor5<T>& db);

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor5<T> grad;
};

// Mean binary cross-entropy on logits, log-sum-exp form. Gradient is
// (sigmoid(z) - y) / N.
template <typename T>
LossResult<T> bce_loss(const Tensor5<T>& logits, const Tensor5<T>& target);

template <typename T>
T sigmoid(T z);

namespace ref {

template <typename T>
Tensor5<T> conv3d_forward(const Tensor5<T>& x, std::span<const T> w, std::span<const T> b,
                          int64_t cout, int k);

template <typename T>
void conv3d_backward(const Tensor5<T>& x, std::span<const T> w, const Tensor5<T>& dy, int k,
                     Tensor5<T>* dx, std::span<T> dw, std::span<T> db);

template <typename T>
Tensor5<T> upconv2_forward(const Tensor5<T>& x, std::span<const T> w, std::span<const T> b,
                           int64_t cout);

template <typename T>
Tensor5<T> maxpool2_forward(const Tensor5<T>& x, std::vector<int64_t>& argmax);

}  // namespace ref

}  // namespace oarseg::nn
