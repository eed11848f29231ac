// Acceptance gate. Prints one PASS/FAIL line per criterion; exits nonzero if
// any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "oarseg/io.hpp"
#include "oarseg/locator.hpp"
#include "oarseg/log.hpp"
#include "oarseg/metrics.hpp"
#include "oarseg/nn/gradcheck.hpp"
#include "oarseg/phantom.hpp"
#include "oarseg/preprocess.hpp"
#include "oarseg/segpipe.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace oarseg;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

PipelineConfig phantom_config() { return load_config(OARSEG_SOURCE_DIR "/configs/phantom.jsonc"); }

// 1 ------------------------------------------------------------------------
Outcome metric_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> p(0.02, 0.5), sp(0.5, 2.5);
  int count_mismatch = 0;
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const Dims d = testutil::random_dims(rng, 1, 20);
    Mask a = t % 2 ? testutil::random_blobs(rng, d, 3) : testutil::random_mask(rng, d, p(rng));
    Mask b = t % 3 ? testutil::random_blobs(rng, d, 2) : testutil::random_mask(rng, d, p(rng));
    const Spacing s{sp(rng), sp(rng), sp(rng)};
    a.set_spacing(s);
    b.set_spacing(s);

    const auto o = oracle::overlap(a, b);
    const OverlapScores got = dsc_ppv_sen(a, b);
    OverlapScores want;
    if (o.a + o.b == 0) {
      want = {1, 1, 1};
    } else {
      want.dsc = 2.0 * o.inter / double(o.a + o.b);
      want.ppv = o.a ? double(o.inter) / o.a : 0.0;
      want.sen = o.b ? double(o.inter) / o.b : 0.0;
    }
    count_mismatch += got.dsc != want.dsc || got.ppv != want.ppv || got.sen != want.sen;

    const double h = hd95(a, b), r = oracle::hd95(a, b);
    if (std::isinf(h) || std::isinf(r)) {
      if (std::isinf(h) != std::isinf(r)) worst = INFINITY;
    } else {
      worst = std::max(worst, std::abs(h - r));
    }
  }
  const double secs = seconds_since(t0);
  return {count_mismatch == 0 && worst <= 1e-6 && secs <= 10.0,
          fmt("count mismatches %d, max |hd95 - brute| %.3g mm, %.2f s", count_mismatch, worst, secs)};
}

// 2 ------------------------------------------------------------------------
Outcome overlap_identity() {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> p(0.01, 0.8);
  double worst = 0;
  int checked = 0;
  for (int t = 0; t < 1000; ++t) {
    const Dims d = testutil::random_dims(rng, 1, 16);
    const Mask a = testutil::random_mask(rng, d, p(rng)), b = testutil::random_mask(rng, d, p(rng));
    const OverlapScores s = dsc_ppv_sen(a, b);
    if (s.ppv + s.sen == 0) {
      worst = std::max(worst, s.dsc);
      continue;
    }
    worst = std::max(worst, std::abs(s.dsc - 2 * s.ppv * s.sen / (s.ppv + s.sen)));
    ++checked;
  }
  return {worst <= 1e-12, fmt("max |DSC - 2PS/(P+S)| %.3g over %d pairs", worst, checked)};
}

// 3 ------------------------------------------------------------------------
Outcome locator_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> p(0.01, 0.5);
  int wrong = 0;
  for (int t = 0; t < 200; ++t) {
    const Dims d = testutil::random_dims(rng, 1, 32);
    const Mask m = t % 2 ? testutil::random_blobs(rng, d, 3) : testutil::random_mask(rng, d, p(rng));
    Dims size;
    for (int a = 0; a < 3; ++a) size[a] = std::uniform_int_distribution<int64_t>(1, d[a])(rng);
    wrong += !(locate_box(m, size) == oracle::exhaustive_locate(m, size).box);
  }
  const double secs = seconds_since(t0);
  return {wrong == 0 && secs <= 30.0, fmt("%d of 200 corners differ, %.2f s", wrong, secs)};
}

// 4 ------------------------------------------------------------------------
Outcome gradient_checks() {
  nn::GradCheckOptions opts;
  std::ostringstream os;
  bool pass = true;
  double worst = 0;
  for (const nn::GradCheckResult& r : nn::run_gradcheck_suite(opts)) {
    const double tol = r.linear ? 1e-7 : 1e-3;
    const bool ok = r.checked > 0 && r.max_rel_error <= tol;
    pass = pass && ok;
    worst = std::max(worst, r.max_rel_error);
    if (!ok) os << " " << r.name << "=" << r.max_rel_error;
  }
  return {pass, fmt("max relative error %.3g", worst) + (pass ? "" : "; failing:" + os.str())};
}

// 5 ------------------------------------------------------------------------
Outcome shape_contract() {
  nn::UNet<float> net(nn::UNetConfig{}, 5);
  std::mt19937_64 rng(505);
  std::uniform_int_distribution<int64_t> xy(1, 12), zz(1, 7);
  std::vector<Dims> shapes{{8, 8, 8}, {96, 96, 56}, {96, 8, 8}, {8, 96, 56}};
  while (shapes.size() < 16) shapes.push_back({8 * xy(rng), 8 * xy(rng), 8 * zz(rng)});
  int bad = 0;
  for (const Dims& d : shapes) {
    nn::Tensor5<float> x(nn::Shape5{1, 1, d.x, d.y, d.z});
    for (float& v : x.data) v = std::uniform_real_distribution<float>(0, 1)(rng);
    const auto y = net.forward(x, nn::Mode::Eval);
    bad += !(y.shape == nn::Shape5{1, 1, d.x, d.y, d.z});
  }
  int not_rejected = 0;
  for (const Dims d : {Dims{12, 16, 16}, Dims{16, 20, 16}, Dims{16, 16, 4}, Dims{7, 8, 8}}) {
    try {
      net.forward(nn::Tensor5<float>(nn::Shape5{1, 1, d.x, d.y, d.z}), nn::Mode::Eval);
      ++not_rejected;
    } catch (const ShapeError&) {
    }
  }
  return {bad == 0 && not_rejected == 0,
          fmt("%zu multiple-of-8 shapes, %d changed; %d non-multiples accepted", shapes.size(), bad,
              not_rejected)};
}

// 6 ------------------------------------------------------------------------
Outcome overfit() {
  const auto t0 = Clock::now();
  PipelineConfig cfg = phantom_config();
  const StructureId id = StructureId::Brainstem;
  const PhantomCase p = generate_case(default_phantom_spec(), 0);
  const std::vector<FramedCase> one{frame_case(p.image, &p.masks.at(id), cfg, id, "overfit")};
  TrainConfig t = cfg.train;
  t.epochs = 300;
  TrainResult r = train_stage(Stage::Seg, one, cfg, id, t);

  const StructureConfig& sc = cfg.structure(id);
  const BBox box = centroid_box(one[0].gt, sc.box_size);
  const Volume in = extract_target_volume(one[0].image, box, sc);
  const Mask target = extract_target_mask(one[0].gt, box, sc);
  const auto logits = r.model.forward(to_tensor(in), nn::Mode::Eval);
  const Mask pred = threshold_logits(logits, in.dims(), in.spacing(), 0.5);
  const double dsc = dsc_ppv_sen(pred, target).dsc;
  const double loss = r.loss_trace.back();
  const double secs = seconds_since(t0);
  return {loss < 0.01 && dsc >= 0.95 && secs <= 600.0,
          fmt("final BCE %.4g, self-DSC %.4f, %.1f s", loss, dsc, secs)};
}

// 7 ------------------------------------------------------------------------
Outcome end_to_end() {
  const auto t0 = Clock::now();
  const PipelineConfig cfg = phantom_config();
  const StructureId id = StructureId::Brainstem;
  PhantomSpec spec = default_phantom_spec();
  spec.seed = 7;

  auto framed = [&](uint64_t index) {
    const PhantomCase p = generate_case(spec, index);
    return frame_case(p.image, &p.masks.at(id), cfg, id, case_dir_name(static_cast<int>(index)));
  };
  std::vector<FramedCase> train(20);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < 20; ++i) train[i] = framed(static_cast<uint64_t>(i));

  PipelineModel pm;
  pm.structure = id;
  pm.config = cfg;
  pm.locnet = train_stage(Stage::Loc, train, cfg, id, cfg.train).model;
  pm.segnet = train_stage(Stage::Seg, train, cfg, id, cfg.train).model;

  double dsc = 0, hd = 0;
  int contained = 0;
  std::ostringstream per;
  for (uint64_t k = 0; k < 5; ++k) {
    const FramedCase c = framed(1000 + k);
    const InferResult r = infer_framed(c, pm);
    const MetricsReport m = evaluate(r.mask_iso, c.gt);
    dsc += m.dsc / 5;
    hd += m.hd95 / 5;
    const Mask inside = crop_or_pad(c.gt, r.box, uint8_t{0});
    const double frac = double(foreground_count(inside)) / double(foreground_count(c.gt));
    contained += frac >= 0.99;
    per << fmt(" [%.3f %.2f %.3f]", m.dsc, m.hd95, frac);
  }
  const double secs = seconds_since(t0);
  return {dsc >= 0.80 && hd <= 3.0 && contained >= 4 && secs <= 45 * 60.0,
          fmt("mean DSC %.3f, mean 95HD %.2f mm, box holds >= 99%% in %d/5, %.0f s;", dsc, hd, contained,
              secs) +
              " per case [DSC 95HD box]" + per.str()};
}

// 8 ------------------------------------------------------------------------
Outcome preprocessing() {
  const int64_t lo = resampled_dims(Dims{512, 512, 1}, Spacing{0.76, 0.76, 1}, 1.0).x;
  const int64_t hi = resampled_dims(Dims{512, 512, 1}, Spacing{1.27, 1.27, 1}, 1.0).x;
  std::mt19937_64 rng(808);
  std::uniform_int_distribution<int64_t> u(1, 800);
  int wrong_crop = 0;
  for (int t = 0; t < 1000; ++t) {
    const Dims d{u(rng), u(rng), u(rng)};
    for (int g : {1, 2}) wrong_crop += !(compute_crop_box(d, default_crop_spec(g)).size == Dims{384, 384, 224});
  }
  int wrong_crop_data = 0;
  for (const Dims d : {Dims{389, 389, 250}, Dims{650, 650, 300}, Dims{300, 420, 120}}) {
    const Volume v(d, Spacing{}, 0.0f);
    wrong_crop_data += !(crop_or_pad(v, compute_crop_box(d, default_crop_spec(1)), kHuMin).dims() ==
                         Dims{384, 384, 224});
  }
  const BBox up = scale_box_up(BBox{{10, 10, 10}, {36, 36, 28}}, 4, Dims{144, 144, 112}, Dims{384, 384, 224});
  const bool pass = lo == 389 && hi == 650 && wrong_crop == 0 && wrong_crop_data == 0 &&
                    up.size == Dims{144, 144, 112};
  return {pass, fmt("512 @ 0.76 -> %lld, 512 @ 1.27 -> %lld, crop size errors %d, box 36x36x28 -> %lldx%lldx%lld",
                    (long long)lo, (long long)hi, wrong_crop + wrong_crop_data, (long long)up.size.x,
                    (long long)up.size.y, (long long)up.size.z)};
}

// 9 ------------------------------------------------------------------------
Outcome islands() {
  auto fixture = [](int64_t small) {
    Mask m(Dims{24, 24, 24});
    for (int64_t i = 0; i < 100; ++i) m(i % 10, (i / 10) % 10, 0) = 1;
    for (int64_t i = 0; i < small; ++i) m(18 + i % 4, 18 + i / 4, 12) = 1;
    return m;
  };
  const Mask a = postprocess_islands(fixture(5));
  const Mask b = postprocess_islands(fixture(12));
  const int64_t na = foreground_count(a), nb = foreground_count(b);
  return {na == 100 && a(18, 18, 12) == 0 && nb == 112,
          fmt("100+5 keeps %lld, 100+12 keeps %lld", (long long)na, (long long)nb)};
}

// 10 -----------------------------------------------------------------------
Outcome determinism_and_formats() {
  testutil::TempDir dir("acceptance");
  PipelineConfig cfg = phantom_config();
  cfg.train.epochs = 3;
  const StructureId id = StructureId::Brainstem;
  std::vector<FramedCase> cases;
  for (uint64_t i = 0; i < 3; ++i) {
    const PhantomCase p = generate_case(default_phantom_spec(), i);
    cases.push_back(frame_case(p.image, &p.masks.at(id), cfg, id));
  }
  auto model_bytes = [&](Stage s) {
    ModelFile f;
    f.structure = id;
    f.stage = std::string(stage_name(s));
    f.config = cfg;
    f.model = train_stage(s, cases, cfg, id, cfg.train).model;
    return serialize_model(f);
  };
  const auto loc1 = model_bytes(Stage::Loc), loc2 = model_bytes(Stage::Loc);
  const auto seg1 = model_bytes(Stage::Seg), seg2 = model_bytes(Stage::Seg);
  const bool train_same = loc1 == loc2 && seg1 == seg2;

  PipelineModel pm;
  pm.structure = id;
  pm.config = cfg;
  pm.locnet = deserialize_model(loc1, "loc").model;
  pm.segnet = deserialize_model(seg1, "seg").model;
  const Volume raw = generate_case(default_phantom_spec(), 50).image;
  const InferResult r1 = infer_structure(raw, pm), r2 = infer_structure(raw, pm);
  const bool infer_same = r1.mask_raw == r2.mask_raw && r1.box == r2.box;

  std::mt19937_64 rng(1010);
  Volume v(Dims{11, 7, 5}, Spacing{0.7, 0.9, 2.5});
  for (float& x : v.data()) x = std::normal_distribution<float>(0, 500)(rng);
  write_volume(v, dir.path() / "v.nrrd");
  Mask m = testutil::random_mask(rng, Dims{9, 8, 7}, 0.3);
  m.set_spacing({1.5, 1.5, 3});
  write_mask(m, dir.path() / "m.nrrd");
  Volume hu(Dims{6, 6, 6}, Spacing{1, 1, 1});
  for (int64_t i = 0; i < hu.size(); ++i) hu[i] = float(i * 37 - 1000);
  write_volume_int16(hu, dir.path() / "h.nrrd");
  const bool nrrd_ok = read_image(dir.path() / "v.nrrd") == v && read_mask(dir.path() / "m.nrrd") == m &&
                       read_image(dir.path() / "h.nrrd") == hu;

  save_model(deserialize_model(seg1, "seg"), dir.path() / "seg.bin");
  const auto reread = serialize_model(load_model(dir.path() / "seg.bin"));
  const bool model_ok = reread == seg1;

  int accepted = 0, tried = 0;
  for (size_t pos = 0; pos < seg1.size(); pos += seg1.size() / 37 + 1) {
    std::vector<uint8_t> c = seg1;
    c[pos] ^= 0x01;
    ++tried;
    try {
      deserialize_model(c, "corrupt");
      ++accepted;
    } catch (const CorruptModelError&) {
    }
  }
  for (size_t cut : {size_t{0}, size_t{7}, seg1.size() / 2, seg1.size() - 8}) {
    ++tried;
    try {
      deserialize_model(std::vector<uint8_t>(seg1.begin(), seg1.begin() + std::ptrdiff_t(cut)), "short");
      ++accepted;
    } catch (const CorruptModelError&) {
    }
  }
  return {train_same && infer_same && nrrd_ok && model_ok && accepted == 0,
          fmt("train bitwise %s, infer bitwise %s, nrrd roundtrip %s, model roundtrip %s, "
              "%d/%d corrupted files accepted",
              train_same ? "yes" : "no", infer_same ? "yes" : "no", nrrd_ok ? "yes" : "no",
              model_ok ? "yes" : "no", accepted, tried)};
}

}  // namespace

int main(int argc, char** argv) {
  // Optional arguments select criteria by number.
  std::vector<bool> run(11, argc == 1);
  for (int i = 1; i < argc; ++i) run.at(std::stoul(argv[i])) = true;
  quiet_logging() = true;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"metric oracle equivalence", metric_oracle},
      {"DSC-PPV-SEN identity", overlap_identity},
      {"locator oracle equivalence", locator_oracle},
      {"gradient checks", gradient_checks},
      {"shape contract", shape_contract},
      {"overfit one phantom", overfit},
      {"end-to-end phantom experiment", end_to_end},
      {"preprocessing consistency", preprocessing},
      {"island removal", islands},
      {"determinism and formats", determinism_and_formats},
  };
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    if (!run[i + 1]) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
