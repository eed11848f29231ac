#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "oarseg/nn/unet.hpp"

namespace oarseg::nn {

struct GradCheckOptions {
  double step = 1e-4;
  int64_t samples_per_tensor = 24;  // tensors smaller than this are checked exhaustively
  uint64_t seed = 1;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  int64_t checked = 0;
  int64_t excluded = 0;  // coordinates whose perturbation crossed a ReLU/pool kink
  bool linear = false;   // layer is linear in everything checked
};

// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

// A tensor of coordinates to probe together with the analytic gradient for it.
struct GradTarget {
  std::span<double> values;
  std::span<const double> analytic;
};

// Central differences on sampled coordinates of each target. `pattern`, when
// set, fingerprints the non-smooth state of the function; a coordinate whose
// +step and -step evaluations disagree on it is excluded and counted.
GradCheckResult check_gradient(std::string name, std::span<const GradTarget> targets,
                               const std::function<double()>& loss,
                               const std::function<uint64_t()>& pattern,
                               const GradCheckOptions& opts);

GradCheckResult check_conv3d(const GradCheckOptions& opts, int k = 3);
GradCheckResult check_upconv2(const GradCheckOptions& opts);
GradCheckResult check_maxpool2(const GradCheckOptions& opts);
GradCheckResult check_batchnorm(const GradCheckOptions& opts, bool train = true);
// The input includes exact zeros, so the kink exclusion path is exercised.
GradCheckResult check_relu(const GradCheckOptions& opts);
GradCheckResult check_bce(const GradCheckOptions& opts);
// Composed U-Net in train mode with BCE loss.
GradCheckResult check_unet(const GradCheckOptions& opts, UNetConfig cfg = {4, 2, 1, 1},
                           Shape5 input = {1, 1, 16, 16, 8});

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opts);

}  // namespace oarseg::nn
