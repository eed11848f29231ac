#include "oarseg/segpipe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oarseg/io.hpp"
#include "oarseg/locator.hpp"
#include "oarseg/log.hpp"
#include "oarseg/nn/adam.hpp"
#include "oarseg/preprocess.hpp"

namespace oarseg {

FramedCase frame_case(const Volume& raw_image, const Mask* raw_gt, const PipelineConfig& cfg,
                      StructureId id, std::string case_id) {
  cfg.check_fits(id);
  FramedCase c;
  c.id = std::move(case_id);
  const Volume iso = resample_isotropic(raw_image, cfg.target_spacing, SampleKind::Image);
  c.iso_dims = iso.dims();
  c.crop = compute_crop_box(iso.dims(), cfg.crop_spec(id));
  c.image = normalize_intensity(crop_or_pad(iso, c.crop, kHuMin));
  if (raw_gt) {
    if (raw_gt->dims() != raw_image.dims()) throw DimsError("mask dims differ from image dims");
    c.gt = crop_or_pad(resample_isotropic(*raw_gt, cfg.target_spacing), c.crop, uint8_t{0});
  } else {
    c.gt = Mask(c.image.dims(), c.image.spacing());
  }
  return c;
}

namespace {

void check_box(const BBox& box, const StructureConfig& cfg) {
  if (box.size != cfg.box_size)
    throw ConfigError("structures." + std::string(structure_name(cfg.id)) + ".box_size: box " +
                      to_string(box) + " does not match the configured size");
}

}  // namespace

Volume extract_target_volume(const Volume& image, const BBox& box, const StructureConfig& cfg) {
  check_box(box, cfg);
  Volume v = crop_or_pad(image, box, 0.0f);
  if (cfg.segnet_z_halved) v = downsample_factor(v, Dims{1, 1, 2});
  return v;
}

Mask extract_target_mask(const Mask& m, const BBox& box, const StructureConfig& cfg) {
  check_box(box, cfg);
  Mask out = crop_or_pad(m, box, uint8_t{0});
  if (cfg.segnet_z_halved) out = downsample_factor(out, Dims{1, 1, 2});
  return out;
}

Mask postprocess_islands(const Mask& m) {
  const ComponentLabels cl = label_components(m, 26);
  if (cl.components.size() <= 1) return m;
  int64_t total = 0;
  const Component* largest = &cl.components.front();
  for (const Component& c : cl.components) {
    total += c.voxels;
    if (c.voxels > largest->voxels) largest = &c;
  }
  std::vector<uint8_t> keep(cl.components.size() + 1, 0);
  for (const Component& c : cl.components)
    keep[c.id] = c.id == largest->id || 10 * c.voxels >= total;
  Mask out(m.dims(), m.spacing());
  for (int64_t i = 0; i < m.size(); ++i) out[i] = cl.labels[i] != 0 && keep[cl.labels[i]];
  return out;
}

std::string_view stage_name(Stage s) { return s == Stage::Loc ? "loc" : "seg"; }

Stage parse_stage(std::string_view s) {
  if (s == "loc") return Stage::Loc;
  if (s == "seg") return Stage::Seg;
  throw ConfigError("stage: expected loc or seg, got '" + std::string(s) + "'");
}

nn::Tensor5<float> to_tensor(const Volume& v) {
  const Dims& d = v.dims();
  nn::Tensor5<float> t(nn::Shape5{1, 1, d.x, d.y, d.z});
  std::copy(v.data().begin(), v.data().end(), t.data.begin());
  return t;
}

namespace {

nn::Tensor5<float> mask_tensor(const Mask& m) {
  const Dims& d = m.dims();
  nn::Tensor5<float> t(nn::Shape5{1, 1, d.x, d.y, d.z});
  for (int64_t i = 0; i < m.size(); ++i) t.data[i] = m[i];
  return t;
}

struct Sample {
  nn::Tensor5<float> input, target;
};

BBox jittered(BBox box, const Dims& frame, int jitter, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(-jitter, jitter);
  for (int a = 0; a < 3; ++a)
    box.min[a] = std::clamp<int64_t>(box.min[a] + u(rng), 0, frame[a] - box.size[a]);
  return box;
}

}  // namespace

Mask threshold_logits(const nn::Tensor5<float>& logits, const Dims& dims, const Spacing& spacing,
                      double prob_threshold) {
  if (logits.shape.count() != dims.count()) throw ShapeError("logits do not match the target grid");
  // sigmoid(z) > p  <=>  z > log(p / (1 - p))
  const double cut = std::log(prob_threshold / (1.0 - prob_threshold));
  Mask m(dims, spacing);
  for (int64_t i = 0; i < m.size(); ++i) m[i] = static_cast<double>(logits.data[i]) > cut;
  return m;
}

TrainResult train_stage(Stage stage, const std::vector<FramedCase>& cases,
                        const PipelineConfig& cfg, StructureId id, const TrainConfig& tcfg) {
  tcfg.validate();
  cfg.check_fits(id);
  const StructureConfig& sc = cfg.structure(id);
  const int64_t f = cfg.loc_factor;

  std::vector<const FramedCase*> usable;
  for (const FramedCase& c : cases) {
    if (foreground_count(c.gt) == 0) {
      log_warning("case '" + c.id + "' has no " + std::string(structure_name(id)) +
                  " voxels; skipped");
      continue;
    }
    usable.push_back(&c);
  }
  if (usable.empty()) throw TrainError("no usable training cases for " + std::string(structure_name(id)));

  std::vector<Sample> fixed(usable.size());
  std::vector<BBox> boxes(usable.size());
  for (size_t i = 0; i < usable.size(); ++i) {
    const FramedCase& c = *usable[i];
    if (stage == Stage::Loc) {
      fixed[i].input = to_tensor(downsample_factor(c.image, Dims{f, f, f}));
      fixed[i].target = mask_tensor(make_loc_target(c.gt, sc.box_size, f));
    } else {
      boxes[i] = centroid_box(c.gt, sc.box_size);
      if (tcfg.augment_jitter == 0) {
        fixed[i].input = to_tensor(extract_target_volume(c.image, boxes[i], sc));
        fixed[i].target = mask_tensor(extract_target_mask(c.gt, boxes[i], sc));
      }
    }
  }

  TrainResult r;
  r.used_cases = static_cast<int>(usable.size());
  r.model = nn::UNet<float>(tcfg.unet, tcfg.seed);
  if (tcfg.prior_bias) {
    double fg = 0.0, total = 0.0;
    for (size_t i = 0; i < usable.size(); ++i) {
      const nn::Tensor5<float> t = fixed[i].target.data.empty()
                                       ? mask_tensor(extract_target_mask(usable[i]->gt, boxes[i], sc))
                                       : fixed[i].target;
      for (float v : t.data) fg += v;
      total += static_cast<double>(t.data.size());
    }
    const double p = std::clamp(fg / total, 1e-4, 1.0 - 1e-4);
    auto& bias = r.model.param("final.b").value;
    std::fill(bias.begin(), bias.end(), static_cast<float>(std::log(p / (1.0 - p))));
  }
  auto adam = nn::make_adam_state(r.model.params(), tcfg.adam);
  std::seed_seq seq{static_cast<uint32_t>(tcfg.seed), static_cast<uint32_t>(tcfg.seed >> 32), 1u};
  std::mt19937_64 rng(seq);
  std::vector<size_t> order(usable.size());
  std::iota(order.begin(), order.end(), size_t{0});
  r.loss_trace.reserve(static_cast<size_t>(tcfg.epochs) * order.size());

  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t i : order) {
      Sample jit;
      const Sample* s = &fixed[i];
      if (stage == Stage::Seg && tcfg.augment_jitter > 0) {
        const FramedCase& c = *usable[i];
        const BBox b = jittered(boxes[i], c.image.dims(), tcfg.augment_jitter, rng);
        jit.input = to_tensor(extract_target_volume(c.image, b, sc));
        jit.target = mask_tensor(extract_target_mask(c.gt, b, sc));
        s = &jit;
      }
      r.model.zero_grad();
      const nn::Tensor5<float> logits = r.model.forward(s->input, nn::Mode::Train);
      const auto loss = nn::bce_loss(logits, s->target);
      if (!std::isfinite(loss.loss))
        throw TrainError("non-finite loss at epoch " + std::to_string(epoch) + " on case '" +
                         usable[i]->id + "'");
      r.model.backward(loss.grad);
      nn::adam_step(r.model.params(), adam);
      r.loss_trace.push_back(loss.loss);
    }
  }
  return r;
}

PipelineModel load_pipeline(const std::string& locnet_path, const std::string& segnet_path) {
  ModelFile loc = load_model(locnet_path);
  ModelFile seg = load_model(segnet_path);
  if (loc.stage != "loc") throw ConfigError(locnet_path + ": stage is '" + loc.stage + "', expected loc");
  if (seg.stage != "seg") throw ConfigError(segnet_path + ": stage is '" + seg.stage + "', expected seg");
  if (loc.structure != seg.structure)
    throw ConfigError("locnet and segnet were trained for different structures");
  const PipelineConfig& a = loc.config;
  const PipelineConfig& b = seg.config;
  const StructureId id = loc.structure;
  const auto& sa = a.structure(id);
  const auto& sb = b.structure(id);
  if (a.target_spacing != b.target_spacing || a.loc_factor != b.loc_factor ||
      a.crop_window != b.crop_window || sa.box_size != sb.box_size ||
      a.crop_spec(id).margin_fracs != b.crop_spec(id).margin_fracs ||
      sa.segnet_z_halved != sb.segnet_z_halved)
    throw ConfigError("locnet and segnet configs disagree on frame or box geometry");
  PipelineModel m;
  m.structure = id;
  m.config = seg.config;
  m.locnet = std::move(loc.model);
  m.segnet = std::move(seg.model);
  return m;
}

InferResult infer_framed(const FramedCase& c, PipelineModel& model) {
  const PipelineConfig& cfg = model.config;
  const StructureConfig& sc = cfg.structure(model.structure);
  const int64_t f = cfg.loc_factor;
  InferResult r;
  r.crop = c.crop;

  const Volume low = downsample_factor(c.image, Dims{f, f, f});
  const auto loc_logits = model.locnet.forward(to_tensor(low), nn::Mode::Eval);
  const Mask loc = threshold_logits(loc_logits, low.dims(), low.spacing(), 0.5);
  const Dims low_size{sc.box_size.x / f, sc.box_size.y / f, sc.box_size.z / f};
  r.loc_box = locate_box(loc, low_size);
  r.box = scale_box_up(r.loc_box, f, sc.box_size, c.image.dims());

  const Volume target = extract_target_volume(c.image, r.box, sc);
  const auto seg_logits = model.segnet.forward(to_tensor(target), nn::Mode::Eval);
  Mask seg = threshold_logits(seg_logits, target.dims(), target.spacing(), sc.prob_threshold);
  if (sc.segnet_z_halved) seg = upsample_repeat(seg, Dims{1, 1, 2});
  seg = postprocess_islands(seg);

  r.mask_iso = Mask(c.image.dims(), c.image.spacing());
  paste(r.mask_iso, seg, r.box.min);
  return r;
}

Mask map_to_raw(const Mask& framed, const BBox& crop, double target_spacing, const Dims& raw_dims,
                const Spacing& raw_spacing) {
  Mask out(raw_dims, raw_spacing);
  std::array<std::vector<int64_t>, 3> idx;
  for (int a = 0; a < 3; ++a) {
    idx[a].resize(static_cast<size_t>(raw_dims[a]));
    for (int64_t i = 0; i < raw_dims[a]; ++i)
      idx[a][i] = std::llround(i * raw_spacing[a] / target_spacing) - crop.min[a];
  }
  const Dims& fd = framed.dims();
  for (int64_t z = 0; z < raw_dims.z; ++z) {
    const int64_t fz = idx[2][z];
    if (fz < 0 || fz >= fd.z) continue;
    for (int64_t y = 0; y < raw_dims.y; ++y) {
      const int64_t fy = idx[1][y];
      if (fy < 0 || fy >= fd.y) continue;
      for (int64_t x = 0; x < raw_dims.x; ++x) {
        const int64_t fx = idx[0][x];
        if (fx >= 0 && fx < fd.x) out(x, y, z) = framed(fx, fy, fz);
      }
    }
  }
  return out;
}

InferResult infer_structure(const Volume& image_raw, PipelineModel& model) {
  const FramedCase c = frame_case(image_raw, nullptr, model.config, model.structure);
  InferResult r = infer_framed(c, model);
  r.mask_raw = map_to_raw(r.mask_iso, r.crop, model.config.target_spacing, image_raw.dims(),
                          image_raw.spacing());
  return r;
}

}  // namespace oarseg
