#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oarseg/nn/layers.hpp"
#include "oarseg/nn/tensor.hpp"

namespace oarseg::nn {

struct UNetConfig {
  int levels = 4;  // resolution levels; levels - 1 poolings
  int base_channels = 8;
  int in_channels = 1;
  int out_channels = 1;

  int64_t channels_at(int level) const { return int64_t{base_channels} << level; }
  // Spatial dims must be multiples of this (8 for four levels).
  int64_t divisor() const { return int64_t{1} << (levels - 1); }
  void validate() const;  // throws ConfigError
  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

enum class Mode { Train, Eval };

// 3D U-Net: per analysis level two (3x3x3 conv, BN, ReLU) blocks followed by
// 2x2x2 max pooling (except at the bottom); per synthesis level a 2x2x2
// stride-2 up-convolution, concatenation with the same-resolution analysis
// output, and two (conv, BN, ReLU) blocks; a final 1x1x1 conv yields logits.
//
// Parameter names:
//   enc{l}.conv{1,2}.{w,b}, enc{l}.bn{1,2}.{gamma,beta,mean,var}
//   dec{l}.up.{w,b}, dec{l}.conv{1,2}.{w,b}, dec{l}.bn{1,2}.{...}
//   final.{w,b}
// BN running mean/var are stored as non-trainable parameters.
template <typename T>
class UNet {
 public:
  // He-normal conv kernels, zero biases, BN scale 1 / shift 0, running var 1.
  // The initial draw is made in double, so float and double models built from
  // the same seed agree up to rounding.
  UNet(UNetConfig cfg, uint64_t seed);

  const UNetConfig& config() const { return cfg_; }
  std::vector<ParamTensor<T>>& params() { return params_; }
  const std::vector<ParamTensor<T>>& params() const { return params_; }
  ParamTensor<T>& param(const std::string& name);
  int64_t parameter_count(bool trainable_only = true) const;

  // Throws ShapeError unless x has in_channels and every spatial dim is a
  // multiple of config().divisor().
  void check_input(const Shape5& s) const;

  // Logits with the input's spatial shape. Keeps the activations needed by
  // backward(). In Train mode BN uses batch statistics and, when
  // update_running_stats is set, folds them into the running statistics.
  Tensor5<T> forward(const Tensor5<T>& x, Mode mode, bool update_running_stats = true);

  // Accumulates parameter gradients from dL/dlogits and returns dL/dinput.
  Tensor5<T> backward(const Tensor5<T>& dlogits);

  void zero_grad();

  // Hash of every ReLU on/off state and pooling argmax from the last forward
  // pass; changes when a perturbation crosses a non-differentiable point.
  uint64_t activation_pattern() const;

  // Number of convolution layers: 3x3x3 convs plus up-convs, final 1x1x1 excluded.
  int conv_layer_count() const;

 private:
  struct ConvRef {
    size_t w, b;
  };
  struct BnRef {
    size_t gamma, beta, mean, var;
  };
  struct Block {
    ConvRef conv;
    BnRef bn;
    int64_t cout;
  };
  struct BlockCache {
    Tensor5<T> input;
    BatchNormCache<T> bn;
    Tensor5<T> output;
  };
  struct Level {
    Block c1, c2;
    ConvRef up{};  // decoder levels only
  };

  size_t add_param(std::string name, std::vector<int64_t> shape, bool trainable);
  ConvRef add_conv(const std::string& prefix, int64_t cin, int64_t cout, int k);
  Block add_block(const std::string& prefix, int idx, int64_t cin, int64_t cout);

  Tensor5<T> block_forward(const Block& b, const Tensor5<T>& x, BlockCache& cache);
  Tensor5<T> block_backward(const Block& b, Tensor5<T> dy, const BlockCache& cache);

  std::span<const T> val(size_t i) const { return params_[i].value; }
  std::span<T> mut(size_t i) { return params_[i].value; }
  std::span<T> grad(size_t i) { return params_[i].grad; }

  UNetConfig cfg_;
  std::vector<ParamTensor<T>> params_;
  std::vector<Level> enc_, dec_;  // dec_[l] produces resolution level l
  ConvRef final_{};

  // Forward cache.
  Mode mode_ = Mode::Eval;
  bool update_running_ = true;
  std::vector<BlockCache> enc_cache1_, enc_cache2_, dec_cache1_, dec_cache2_;
  std::vector<std::vector<int64_t>> pool_argmax_;
  std::vector<Shape5> pool_in_shape_;
  std::vector<Tensor5<T>> up_input_;
  Tensor5<T> final_input_;
};

extern template class UNet<float>;
extern template class UNet<double>;

}  // namespace oarseg::nn
