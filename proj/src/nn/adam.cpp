#include "oarseg/nn/adam.hpp"

#include <cmath>

namespace oarseg::nn {

template <typename T>
AdamState<T> make_adam_state(const std::vector<ParamTensor<T>>& params, AdamConfig cfg) {
  AdamState<T> s;
  s.cfg = cfg;
  for (const auto& p : params) {
    s.m.emplace_back(p.value.size(), T{});
    s.v.emplace_back(p.value.size(), T{});
  }
  return s;
}

template <typename T>
void adam_step(std::vector<ParamTensor<T>>& params, AdamState<T>& state) {
  if (state.m.size() != params.size()) throw ShapeError("adam state built for another model");
  const AdamConfig& c = state.cfg;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (!p.trainable) continue;
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.value.size()) throw ShapeError("adam moment shape mismatch for " + p.name);
    for (size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = c.lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.eps);
      p.value[i] = static_cast<T>(p.value[i] - update);
    }
  }
}

template AdamState<float> make_adam_state(const std::vector<ParamTensor<float>>&, AdamConfig);
template AdamState<double> make_adam_state(const std::vector<ParamTensor<double>>&, AdamConfig);
template void adam_step(std::vector<ParamTensor<float>>&, AdamState<float>&);
template void adam_step(std::vector<ParamTensor<double>>&, AdamState<double>&);

}  // namespace oarseg::nn
