// Serial reference kernels against their OpenMP counterparts.

#include <random>

#include <benchmark/benchmark.h>

#include "oarseg/locator.hpp"
#include "oarseg/metrics.hpp"
#include "oarseg/nn/layers.hpp"
#include "oarseg/preprocess.hpp"

using namespace oarseg;

namespace {

struct ConvInput {
  nn::Tensor5<float> x;
  std::vector<float> w, b;
  int64_t cout = 16;

  ConvInput() : x(nn::Shape5{1, 8, 32, 32, 32}) {
    std::mt19937 rng(1);
    std::normal_distribution<float> n(0, 1);
    for (float& v : x.data) v = n(rng);
    w.resize(static_cast<size_t>(cout * 8 * 27));
    for (float& v : w) v = 0.1f * n(rng);
    b.assign(static_cast<size_t>(cout), 0.0f);
  }
};

Mask blob_mask(Dims d) {
  std::mt19937 rng(2);
  std::bernoulli_distribution coin(0.02);
  Mask m(d);
  for (int64_t i = 0; i < m.size(); ++i) m[i] = coin(rng);
  return m;
}

Volume ct_like(Dims d, Spacing s) {
  std::mt19937 rng(3);
  std::normal_distribution<float> n(0, 300);
  Volume v(d, s);
  for (float& x : v.data()) x = n(rng);
  return v;
}

void BM_conv3d(benchmark::State& st) {
  const ConvInput in;
  for (auto _ : st)
    benchmark::DoNotOptimize(nn::conv3d_forward<float>(in.x, in.w, in.b, in.cout, 3));
}
void BM_conv3d_ref(benchmark::State& st) {
  const ConvInput in;
  for (auto _ : st)
    benchmark::DoNotOptimize(nn::ref::conv3d_forward<float>(in.x, in.w, in.b, in.cout, 3));
}

void BM_locate(benchmark::State& st) {
  const Mask m = blob_mask({96, 96, 56});
  for (auto _ : st) benchmark::DoNotOptimize(locate_box(m, {14, 14, 20}));
}
void BM_locate_ref(benchmark::State& st) {
  const Mask m = blob_mask({96, 96, 56});
  for (auto _ : st) benchmark::DoNotOptimize(ref::locate_box(m, {14, 14, 20}));
}

void BM_edt(benchmark::State& st) {
  const Mask m = blob_mask({48, 48, 32});
  for (auto _ : st) benchmark::DoNotOptimize(squared_distance_transform(m));
}
void BM_edt_ref(benchmark::State& st) {
  const Mask m = blob_mask({24, 24, 16});
  for (auto _ : st) benchmark::DoNotOptimize(ref::squared_distance_transform(m));
}
void BM_edt_small(benchmark::State& st) {
  const Mask m = blob_mask({24, 24, 16});
  for (auto _ : st) benchmark::DoNotOptimize(squared_distance_transform(m));
}

void BM_resample(benchmark::State& st) {
  const Volume v = ct_like({64, 64, 24}, {0.8, 0.8, 2.5});
  for (auto _ : st) benchmark::DoNotOptimize(resample_isotropic(v, 1.0));
}
void BM_resample_ref(benchmark::State& st) {
  const Volume v = ct_like({64, 64, 24}, {0.8, 0.8, 2.5});
  for (auto _ : st) benchmark::DoNotOptimize(ref::resample_isotropic(v, 1.0));
}

}  // namespace

BENCHMARK(BM_conv3d)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv3d_ref)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_locate)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_locate_ref)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_edt)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_edt_small)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_edt_ref)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_resample)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_resample_ref)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
