#include "oarseg/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oarseg/nn/layers.hpp"

namespace oarseg::nn {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult check_gradient(std::string name, std::span<const GradTarget> targets,
                               const std::function<double()>& loss,
                               const std::function<uint64_t()>& pattern,
                               const GradCheckOptions& opts) {
  GradCheckResult r;
  r.name = std::move(name);
  std::mt19937_64 rng(opts.seed);
  for (const GradTarget& t : targets) {
    const auto n = static_cast<int64_t>(t.values.size());
    std::vector<int64_t> coords;
    if (n <= opts.samples_per_tensor) {
      coords.resize(static_cast<size_t>(n));
      std::iota(coords.begin(), coords.end(), 0);
    } else {
      std::uniform_int_distribution<int64_t> pick(0, n - 1);
      for (int64_t s = 0; s < opts.samples_per_tensor; ++s) coords.push_back(pick(rng));
    }
    for (int64_t i : coords) {
      const double orig = t.values[i];
      t.values[i] = orig + opts.step;
      const double lp = loss();
      const uint64_t pp = pattern ? pattern() : 0;
      t.values[i] = orig - opts.step;
      const double lm = loss();
      const uint64_t pm = pattern ? pattern() : 0;
      t.values[i] = orig;
      if (pp != pm) {
        ++r.excluded;
        continue;
      }
      const double numeric = (lp - lm) / (2.0 * opts.step);
      r.max_rel_error = std::max(r.max_rel_error, relative_error(t.analytic[i], numeric));
      ++r.checked;
    }
  }
  return r;
}

namespace {

using D = double;

Tensor5<D> random_tensor(Shape5 s, std::mt19937_64& rng, double scale = 1.0) {
  Tensor5<D> t(s);
  std::normal_distribution<double> dist(0.0, scale);
  for (D& v : t.data) v = dist(rng);
  return t;
}

std::vector<D> random_vector(size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::vector<D> v(n);
  std::normal_distribution<double> dist(0.0, scale);
  for (D& x : v) x = dist(rng);
  return v;
}

double weighted_sum(const Tensor5<D>& y, const Tensor5<D>& r) {
  double s = 0.0;
  for (size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * r.data[i];
  return s;
}

uint64_t hash_bits(const std::vector<bool>& bits) {
  uint64_t h = 14695981039346656037ull;
  for (bool b : bits) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

GradCheckResult check_conv3d(const GradCheckOptions& opts, int k) {
  std::mt19937_64 rng(opts.seed ^ 0xc0);
  const int64_t cin = 2, cout = 3;
  Tensor5<D> x = random_tensor({1, cin, 5, 4, 3}, rng);
  std::vector<D> w = random_vector(static_cast<size_t>(cout * cin * k * k * k), rng, 0.3);
  std::vector<D> b = random_vector(static_cast<size_t>(cout), rng);
  Tensor5<D> r = random_tensor({1, cout, 5, 4, 3}, rng);

  auto loss = [&] { return weighted_sum(conv3d_forward<D>(x, w, b, cout, k), r); };
  Tensor5<D> dx;
  std::vector<D> dw(w.size()), db(b.size());
  conv3d_backward<D>(x, w, r, k, &dx, dw, db);
  const GradTarget targets[] = {{x.data, dx.data}, {w, dw}, {b, db}};
  auto res = check_gradient(k == 3 ? "conv3d" : "conv3d_1x1x1", targets, loss, nullptr, opts);
  res.linear = true;
  return res;
}

GradCheckResult check_upconv2(const GradCheckOptions& opts) {
  std::mt19937_64 rng(opts.seed ^ 0x0b);
  const int64_t cin = 3, cout = 2;
  Tensor5<D> x = random_tensor({1, cin, 3, 2, 2}, rng);
  std::vector<D> w = random_vector(static_cast<size_t>(cin * cout * 8), rng, 0.5);
  std::vector<D> b = random_vector(static_cast<size_t>(cout), rng);
  Tensor5<D> r = random_tensor({1, cout, 6, 4, 4}, rng);
  auto loss = [&] { return weighted_sum(upconv2_forward<D>(x, w, b, cout), r); };
  Tensor5<D> dx;
  std::vector<D> dw(w.size()), db(b.size());
  upconv2_backward<D>(x, w, r, &dx, dw, db);
  const GradTarget targets[] = {{x.data, dx.data}, {w, dw}, {b, db}};
  auto res = check_gradient("upconv2", targets, loss, nullptr, opts);
  res.linear = true;
  return res;
}

GradCheckResult check_maxpool2(const GradCheckOptions& opts) {
  std::mt19937_64 rng(opts.seed ^ 0x9a);
  Tensor5<D> x = random_tensor({1, 2, 4, 4, 2}, rng);
  Tensor5<D> r = random_tensor({1, 2, 2, 2, 1}, rng);
  std::vector<int64_t> am;
  auto loss = [&] { return weighted_sum(maxpool2_forward(x, am), r); };
  auto pattern = [&] {
    std::vector<bool> bits;
    for (int64_t i : am)
      for (int b = 0; b < 6; ++b) bits.push_back((i >> b) & 1);
    return hash_bits(bits);
  };
  maxpool2_forward(x, am);
  Tensor5<D> dx = maxpool2_backward(r, am, x.shape);
  const GradTarget targets[] = {{x.data, dx.data}};
  GradCheckOptions all = opts;
  all.samples_per_tensor = static_cast<int64_t>(x.data.size());
  return check_gradient("maxpool2", targets, loss, pattern, all);
}

GradCheckResult check_batchnorm(const GradCheckOptions& opts, bool train) {
  std::mt19937_64 rng(opts.seed ^ 0xbb);
  const int64_t c = 3;
  Tensor5<D> x = random_tensor({1, c, 4, 3, 2}, rng, 2.0);
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < x.shape.spatial(); ++i) x.channel(0, ch)[i] += static_cast<double>(ch);
  std::vector<D> gamma = random_vector(c, rng), beta = random_vector(c, rng);
  std::vector<D> rmean = random_vector(c, rng), rvar(c);
  for (D& v : rvar) v = 0.5 + std::abs(std::normal_distribution<double>(0, 1)(rng));
  Tensor5<D> r = random_tensor(x.shape, rng);
  BatchNormCache<D> cache;
  auto loss = [&] {
    BatchNormCache<D> tmp;
    return weighted_sum(batchnorm_forward<D>(x, gamma, beta, rmean, rvar, train, false, tmp), r);
  };
  batchnorm_forward<D>(x, gamma, beta, rmean, rvar, train, false, cache);
  std::vector<D> dg(c), dbt(c);
  Tensor5<D> dx = batchnorm_backward<D>(r, cache, gamma, dg, dbt);
  const GradTarget targets[] = {{x.data, dx.data}, {gamma, dg}, {beta, dbt}};
  return check_gradient(train ? "batchnorm_train" : "batchnorm_eval", targets, loss, nullptr, opts);
}

GradCheckResult check_relu(const GradCheckOptions& opts) {
  std::mt19937_64 rng(opts.seed ^ 0x7e);
  Tensor5<D> x = random_tensor({1, 2, 3, 3, 2}, rng);
  x.data[0] = 0.0;
  x.data[5] = 0.0;
  x.data[17] = 0.0;
  Tensor5<D> r = random_tensor(x.shape, rng);
  auto fwd = [&] {
    Tensor5<D> y = x;
    relu_inplace(y);
    return y;
  };
  auto loss = [&] { return weighted_sum(fwd(), r); };
  auto pattern = [&] {
    std::vector<bool> bits;
    for (D v : x.data) bits.push_back(v > 0);
    return hash_bits(bits);
  };
  Tensor5<D> dx = r;
  relu_backward_inplace(dx, fwd());
  const GradTarget targets[] = {{x.data, dx.data}};
  GradCheckOptions all = opts;
  all.samples_per_tensor = static_cast<int64_t>(x.data.size());
  return check_gradient("relu", targets, loss, pattern, all);
}

GradCheckResult check_bce(const GradCheckOptions& opts) {
  std::mt19937_64 rng(opts.seed ^ 0xce);
  Tensor5<D> z = random_tensor({1, 1, 4, 4, 2}, rng, 3.0);
  Tensor5<D> y(z.shape);
  std::bernoulli_distribution coin(0.4);
  for (D& v : y.data) v = coin(rng);
  auto loss = [&] { return bce_loss(z, y).loss; };
  const auto res = bce_loss(z, y);
  const GradTarget targets[] = {{z.data, res.grad.data}};
  return check_gradient("bce_loss", targets, loss, nullptr, opts);
}

GradCheckResult check_unet(const GradCheckOptions& opts, UNetConfig cfg, Shape5 input) {
  std::mt19937_64 rng(opts.seed ^ 0x11);
  UNet<D> model(cfg, opts.seed);
  Tensor5<D> x = random_tensor(input, rng);
  Shape5 ts = input;
  ts.c = cfg.out_channels;
  Tensor5<D> y(ts);
  std::bernoulli_distribution coin(0.3);
  for (D& v : y.data) v = coin(rng);

  auto loss = [&] { return bce_loss(model.forward(x, Mode::Train, false), y).loss; };
  auto pattern = [&] { return model.activation_pattern(); };

  model.zero_grad();
  const auto out = bce_loss(model.forward(x, Mode::Train, false), y);
  Tensor5<D> dx = model.backward(out.grad);

  std::vector<GradTarget> targets;
  targets.push_back({x.data, dx.data});
  for (auto& p : model.params())
    if (p.trainable) targets.push_back({p.value, p.grad});
  return check_gradient("unet", targets, loss, pattern, opts);
}

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opts) {
  return {
      check_conv3d(opts, 3), check_conv3d(opts, 1),       check_upconv2(opts),
      check_maxpool2(opts),  check_batchnorm(opts, true), check_batchnorm(opts, false),
      check_relu(opts),      check_bce(opts),             check_unet(opts),
  };
}

}  // namespace oarseg::nn
