#include "oarseg/nn/unet.hpp"

#include <cmath>
#include <random>

namespace oarseg::nn {

void UNetConfig::validate() const {
  if (levels < 1 || levels > 6) throw ConfigError("unet.levels must be in [1, 6]");
  if (base_channels < 1) throw ConfigError("unet.base_channels must be >= 1");
  if (in_channels < 1 || out_channels < 1) throw ConfigError("unet channel counts must be >= 1");
}

template <typename T>
UNet<T>::UNet(UNetConfig cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const int L = cfg_.levels;
  enc_.resize(L);
  for (int l = 0; l < L; ++l) {
    const int64_t cin = l == 0 ? cfg_.in_channels : cfg_.channels_at(l - 1);
    const std::string p = "enc" + std::to_string(l);
    enc_[l].c1 = add_block(p, 1, cin, cfg_.channels_at(l));
    enc_[l].c2 = add_block(p, 2, cfg_.channels_at(l), cfg_.channels_at(l));
  }
  dec_.resize(L > 1 ? L - 1 : 0);
  for (int l = L - 2; l >= 0; --l) {
    const std::string p = "dec" + std::to_string(l);
    const int64_t ch = cfg_.channels_at(l);
    dec_[l].up.w = add_param(p + ".up.w", {cfg_.channels_at(l + 1), ch, 2, 2, 2}, true);
    dec_[l].up.b = add_param(p + ".up.b", {ch}, true);
    dec_[l].c1 = add_block(p, 1, 2 * ch, ch);
    dec_[l].c2 = add_block(p, 2, ch, ch);
  }
  final_ = add_conv("final", cfg_.channels_at(0), cfg_.out_channels, 1);

  std::mt19937_64 rng(seed);
  for (auto& pt : params_) {
    const std::string& n = pt.name;
    const auto ends_with = [&](std::string_view s) {
      return n.size() >= s.size() && n.compare(n.size() - s.size(), s.size(), s) == 0;
    };
    if (ends_with(".w")) {
      // Fan-in: cin * k^3 for convs; cin for the stride-2 up-conv (one tap per output).
      const bool up = ends_with(".up.w");
      const double fan_in = up ? static_cast<double>(pt.shape[0])
                               : static_cast<double>(pt.shape[1] * pt.shape[2] * pt.shape[3] * pt.shape[4]);
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (T& v : pt.value) v = static_cast<T>(dist(rng));
    } else if (ends_with(".gamma") || ends_with(".var")) {
      std::fill(pt.value.begin(), pt.value.end(), T{1});
    }
  }
}

template <typename T>
size_t UNet<T>::add_param(std::string name, std::vector<int64_t> shape, bool trainable) {
  ParamTensor<T> p;
  p.name = std::move(name);
  p.shape = std::move(shape);
  p.trainable = trainable;
  p.value.assign(static_cast<size_t>(p.count()), T{});
  p.grad.assign(p.value.size(), T{});
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

template <typename T>
typename UNet<T>::ConvRef UNet<T>::add_conv(const std::string& prefix, int64_t cin, int64_t cout,
                                            int k) {
  ConvRef r;
  r.w = add_param(prefix + ".w", {cout, cin, k, k, k}, true);
  r.b = add_param(prefix + ".b", {cout}, true);
  return r;
}

template <typename T>
typename UNet<T>::Block UNet<T>::add_block(const std::string& prefix, int idx, int64_t cin,
                                           int64_t cout) {
  Block b;
  b.cout = cout;
  b.conv = add_conv(prefix + ".conv" + std::to_string(idx), cin, cout, 3);
  const std::string bn = prefix + ".bn" + std::to_string(idx);
  b.bn.gamma = add_param(bn + ".gamma", {cout}, true);
  b.bn.beta = add_param(bn + ".beta", {cout}, true);
  b.bn.mean = add_param(bn + ".mean", {cout}, false);
  b.bn.var = add_param(bn + ".var", {cout}, false);
  return b;
}

template <typename T>
ParamTensor<T>& UNet<T>::param(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw ShapeError("no parameter named " + name);
}

template <typename T>
int64_t UNet<T>::parameter_count(bool trainable_only) const {
  int64_t n = 0;
  for (const auto& p : params_)
    if (p.trainable || !trainable_only) n += p.count();
  return n;
}

template <typename T>
int UNet<T>::conv_layer_count() const {
  return static_cast<int>(2 * enc_.size() + 3 * dec_.size());
}

template <typename T>
void UNet<T>::check_input(const Shape5& s) const {
  if (s.c != cfg_.in_channels)
    throw ShapeError("input has " + std::to_string(s.c) + " channels, model expects " +
                     std::to_string(cfg_.in_channels));
  const int64_t d = cfg_.divisor();
  if (s.x % d || s.y % d || s.z % d)
    throw ShapeError("input spatial dims " + std::to_string(s.x) + "x" + std::to_string(s.y) + "x" +
                     std::to_string(s.z) + " must be multiples of " + std::to_string(d));
}

template <typename T>
Tensor5<T> UNet<T>::block_forward(const Block& b, const Tensor5<T>& x, BlockCache& cache) {
  cache.input = x;
  Tensor5<T> h = conv3d_forward<T>(x, val(b.conv.w), val(b.conv.b), b.cout, 3);
  h = batchnorm_forward<T>(h, val(b.bn.gamma), val(b.bn.beta), mut(b.bn.mean), mut(b.bn.var),
                           mode_ == Mode::Train, update_running_, cache.bn);
  relu_inplace(h);
  cache.output = h;
  return h;
}

template <typename T>
Tensor5<T> UNet<T>::block_backward(const Block& b, Tensor5<T> dy, const BlockCache& cache) {
  relu_backward_inplace(dy, cache.output);
  Tensor5<T> dbn = batchnorm_backward<T>(dy, cache.bn, val(b.bn.gamma), grad(b.bn.gamma),
                                         grad(b.bn.beta));
  Tensor5<T> dx;
  conv3d_backward<T>(cache.input, val(b.conv.w), dbn, 3, &dx, grad(b.conv.w), grad(b.conv.b));
  return dx;
}

template <typename T>
Tensor5<T> UNet<T>::forward(const Tensor5<T>& x, Mode mode, bool update_running_stats) {
  check_input(x.shape);
  mode_ = mode;
  update_running_ = update_running_stats;
  const int L = cfg_.levels;
  enc_cache1_.assign(L, {});
  enc_cache2_.assign(L, {});
  dec_cache1_.assign(dec_.size(), {});
  dec_cache2_.assign(dec_.size(), {});
  pool_argmax_.assign(L, {});
  pool_in_shape_.assign(L, {});
  up_input_.assign(dec_.size(), {});

  Tensor5<T> h = x;
  for (int l = 0; l < L; ++l) {
    Tensor5<T> a = block_forward(enc_[l].c1, h, enc_cache1_[l]);
    Tensor5<T> b = block_forward(enc_[l].c2, a, enc_cache2_[l]);
    if (l < L - 1) {
      pool_in_shape_[l] = b.shape;
      h = maxpool2_forward(b, pool_argmax_[l]);
    } else {
      h = std::move(b);
    }
  }
  for (int l = L - 2; l >= 0; --l) {
    const Level& lv = dec_[l];
    up_input_[l] = h;
    Tensor5<T> u = upconv2_forward<T>(h, val(lv.up.w), val(lv.up.b), cfg_.channels_at(l));
    Tensor5<T> c = concat_channels(enc_cache2_[l].output, u);
    Tensor5<T> a = block_forward(lv.c1, c, dec_cache1_[l]);
    h = block_forward(lv.c2, a, dec_cache2_[l]);
  }
  final_input_ = h;
  return conv3d_forward<T>(h, val(final_.w), val(final_.b), cfg_.out_channels, 1);
}

template <typename T>
Tensor5<T> UNet<T>::backward(const Tensor5<T>& dlogits) {
  const int L = cfg_.levels;
  Tensor5<T> dh;
  conv3d_backward<T>(final_input_, val(final_.w), dlogits, 1, &dh, grad(final_.w), grad(final_.b));

  std::vector<Tensor5<T>> dskip(L);
  for (int l = 0; l <= L - 2; ++l) {
    const Level& lv = dec_[l];
    Tensor5<T> da = block_backward(lv.c2, std::move(dh), dec_cache2_[l]);
    Tensor5<T> dc = block_backward(lv.c1, std::move(da), dec_cache1_[l]);
    Tensor5<T> du;
    split_channels(dc, cfg_.channels_at(l), dskip[l], du);
    Tensor5<T> below;
    upconv2_backward<T>(up_input_[l], val(lv.up.w), du, &below, grad(lv.up.w), grad(lv.up.b));
    dh = std::move(below);
  }

  // dh is now the gradient at the bottom level's output.
  Tensor5<T> g_in;
  for (int l = L - 1; l >= 0; --l) {
    Tensor5<T> g;
    if (l == L - 1) {
      g = std::move(dh);
    } else {
      g = maxpool2_backward(g_in, pool_argmax_[l], pool_in_shape_[l]);
      for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += dskip[l].data[i];
    }
    Tensor5<T> da = block_backward(enc_[l].c2, std::move(g), enc_cache2_[l]);
    g_in = block_backward(enc_[l].c1, std::move(da), enc_cache1_[l]);
  }
  return g_in;
}

template <typename T>
void UNet<T>::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), T{});
}

template <typename T>
uint64_t UNet<T>::activation_pattern() const {
  uint64_t h = 14695981039346656037ull;
  auto mix = [&h](uint64_t v) {
    h ^= v;
    h *= 1099511628211ull;
  };
  auto relu_bits = [&](const std::vector<BlockCache>& caches) {
    for (const auto& c : caches)
      for (T v : c.output.data) mix(v > T{0});
  };
  relu_bits(enc_cache1_);
  relu_bits(enc_cache2_);
  relu_bits(dec_cache1_);
  relu_bits(dec_cache2_);
  for (const auto& am : pool_argmax_)
    for (int64_t i : am) mix(static_cast<uint64_t>(i));
  return h;
}

template class UNet<float>;
template class UNet<double>;

}  // namespace oarseg::nn
