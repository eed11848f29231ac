#include <fstream>
#include <sstream>

#include "oarseg/config.hpp"
#include "oarseg/io.hpp"
#include "json.hpp"

namespace oarseg {

using json = nlohmann::json;

StructureConfig default_structure_config(StructureId id) {
  StructureConfig c;
  c.id = id;
  c.crop_group = default_crop_group(id);
  switch (id) {
    case StructureId::Mandible:
      c.box_size = {144, 144, 112};
      c.segnet_z_halved = true;
      break;
    case StructureId::ParotidL:
    case StructureId::ParotidR:
      c.box_size = {96, 96, 96};
      break;
    case StructureId::Brainstem:
      c.box_size = {56, 56, 80};
      break;
    case StructureId::SubmandL:
    case StructureId::SubmandR:
      c.box_size = {48, 48, 64};
      break;
    case StructureId::OpticNerveL:
    case StructureId::OpticNerveR:
      c.box_size = {56, 56, 24};
      break;
    case StructureId::Chiasm:
      c.box_size = {32, 32, 16};
      break;
  }
  return c;
}

void StructureConfig::validate() const {
  const std::string f = "structures." + std::string(structure_name(id));
  for (int a = 0; a < 3; ++a)
    if (box_size[a] < 8 || box_size[a] % 8 != 0)
      throw ConfigError(f + ".box_size: " + std::to_string(box_size[a]) +
                        " is not a positive multiple of 8");
  if (crop_group != 1 && crop_group != 2) throw ConfigError(f + ".crop_group: must be 1 or 2");
  if (!(prob_threshold > 0.0 && prob_threshold < 1.0))
    throw ConfigError(f + ".prob_threshold: must lie in (0, 1)");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train.epochs: must be >= 0");
  if (batch != 1) throw ConfigError("train.batch: only mini-batches of 1 are supported");
  if (!(adam.lr > 0)) throw ConfigError("train.lr: must be > 0");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1)) throw ConfigError("train.beta1: must lie in [0, 1)");
  if (!(adam.beta2 >= 0 && adam.beta2 < 1)) throw ConfigError("train.beta2: must lie in [0, 1)");
  if (!(adam.eps > 0)) throw ConfigError("train.eps: must be > 0");
  if (augment_jitter < 0) throw ConfigError("train.augment_jitter: must be >= 0");
  unet.validate();
}

PipelineConfig::PipelineConfig() {
  crop_groups[1] = default_crop_spec(1);
  crop_groups[2] = default_crop_spec(2);
  for (StructureId id : kAllStructures) structures[id] = default_structure_config(id);
}

const StructureConfig& PipelineConfig::structure(StructureId id) const {
  return structures.at(id);
}

CropSpec PipelineConfig::crop_spec(StructureId id) const {
  CropSpec s = crop_groups.at(structure(id).crop_group);
  s.window = crop_window;
  return s;
}

Dims PipelineConfig::locnet_input() const {
  return {crop_window.x / loc_factor, crop_window.y / loc_factor, crop_window.z / loc_factor};
}

Dims PipelineConfig::segnet_input(StructureId id) const {
  Dims d = structure(id).box_size;
  if (structure(id).segnet_z_halved) d.z /= 2;
  return d;
}

void PipelineConfig::validate() const {
  if (!(target_spacing > 0)) throw ConfigError("target_spacing: must be > 0");
  if (loc_factor < 1) throw ConfigError("loc_factor: must be >= 1");
  train.validate();
  const int64_t div = train.unet.divisor();
  for (int a = 0; a < 3; ++a) {
    if (crop_window[a] % loc_factor != 0 || (crop_window[a] / loc_factor) % div != 0)
      throw ConfigError("crop.window: " + std::to_string(crop_window[a]) +
                        " must be a multiple of loc_factor * " + std::to_string(div));
  }
  for (const auto& [g, spec] : crop_groups) {
    try {
      spec.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("crop.groups." + std::to_string(g) + ": " + e.what());
    }
  }
  for (const auto& [id, s] : structures) {
    s.validate();
    if (s.box_size.x % loc_factor || s.box_size.y % loc_factor || s.box_size.z % loc_factor)
      throw ConfigError("structures." + std::string(structure_name(id)) +
                        ".box_size: not divisible by loc_factor");
    const Dims in = segnet_input(id);
    for (int a = 0; a < 3; ++a)
      if (in[a] % div != 0)
        throw ConfigError("structures." + std::string(structure_name(id)) +
                          ".box_size: network input " + std::to_string(in[a]) +
                          " is not a multiple of " + std::to_string(div));
  }
}

void PipelineConfig::check_fits(StructureId id) const {
  const Dims& b = structure(id).box_size;
  for (int a = 0; a < 3; ++a)
    if (b[a] > crop_window[a])
      throw ConfigError("structures." + std::string(structure_name(id)) + ".box_size: " +
                        std::to_string(b[a]) + " exceeds crop.window " +
                        std::to_string(crop_window[a]));
}

namespace {

Dims read_dims(const json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 3)
    throw ConfigError(field + ": expected an array of three integers");
  Dims d;
  for (int a = 0; a < 3; ++a) {
    if (!j[a].is_number_integer()) throw ConfigError(field + ": expected integers");
    d[a] = j[a].get<int64_t>();
  }
  return d;
}

std::pair<double, double> read_pair(const json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ConfigError(field + ": expected [low_frac, high_frac]");
  const double lo = j[0].get<double>(), hi = j[1].get<double>();
  if (lo < 0 || hi < 0 || std::abs(lo + hi - 1.0) > 1e-9)
    throw ConfigError(field + ": fractions (" + std::to_string(lo) + ", " + std::to_string(hi) +
                      ") must be non-negative and sum to 1");
  return {lo, hi};
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ConfigError((where.empty() ? "" : where + ".") + k + ": unknown key");
  }
}

template <typename T>
T get(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError((where.empty() ? "" : where + ".") + key + ": wrong value type");
  }
}

}  // namespace

PipelineConfig parse_config(const std::string& text, const std::string& context) {
  json root;
  try {
    root = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(context + ": " + e.what());
  }
  PipelineConfig cfg;
  if (root.is_null()) return cfg;
  check_keys(root, {"target_spacing", "loc_factor", "crop", "structures", "train"}, "");
  cfg.target_spacing = get(root, "target_spacing", cfg.target_spacing, "");
  cfg.loc_factor = get(root, "loc_factor", cfg.loc_factor, "");

  if (root.contains("crop")) {
    const json& c = root["crop"];
    check_keys(c, {"window", "groups"}, "crop");
    if (c.contains("window")) cfg.crop_window = read_dims(c["window"], "crop.window");
    if (c.contains("groups")) {
      check_keys(c["groups"], {"1", "2"}, "crop.groups");
      for (const auto& [g, spec] : c["groups"].items()) {
        const std::string where = "crop.groups." + g;
        check_keys(spec, {"x", "y", "z"}, where);
        CropSpec& cs = cfg.crop_groups[std::stoi(g)];
        const char* axes[] = {"x", "y", "z"};
        for (int a = 0; a < 3; ++a)
          if (spec.contains(axes[a]))
            cs.margin_fracs[a] = read_pair(spec[axes[a]], where + "." + axes[a]);
      }
    }
  }

  if (root.contains("structures")) {
    const json& ss = root["structures"];
    if (!ss.is_object()) throw ConfigError("structures: expected an object");
    for (const auto& [name, s] : ss.items()) {
      const auto id = parse_structure(name);
      if (!id) throw ConfigError("structures." + name + ": unknown structure");
      const std::string where = "structures." + name;
      check_keys(s, {"box_size", "crop_group", "segnet_z_halved", "prob_threshold"}, where);
      StructureConfig& sc = cfg.structures[*id];
      if (s.contains("box_size")) sc.box_size = read_dims(s["box_size"], where + ".box_size");
      sc.crop_group = get(s, "crop_group", sc.crop_group, where);
      sc.segnet_z_halved = get(s, "segnet_z_halved", sc.segnet_z_halved, where);
      sc.prob_threshold = get(s, "prob_threshold", sc.prob_threshold, where);
    }
  }

  if (root.contains("train")) {
    const json& t = root["train"];
    check_keys(t, {"epochs", "batch", "seed", "lr", "beta1", "beta2", "eps", "augment_jitter",
                   "prior_bias", "levels", "base_channels"},
               "train");
    TrainConfig& tc = cfg.train;
    tc.epochs = get(t, "epochs", tc.epochs, "train");
    tc.batch = get(t, "batch", tc.batch, "train");
    tc.seed = get(t, "seed", tc.seed, "train");
    tc.adam.lr = get(t, "lr", tc.adam.lr, "train");
    tc.adam.beta1 = get(t, "beta1", tc.adam.beta1, "train");
    tc.adam.beta2 = get(t, "beta2", tc.adam.beta2, "train");
    tc.adam.eps = get(t, "eps", tc.adam.eps, "train");
    tc.augment_jitter = get(t, "augment_jitter", tc.augment_jitter, "train");
    tc.prior_bias = get(t, "prior_bias", tc.prior_bias, "train");
    tc.unet.levels = get(t, "levels", tc.unet.levels, "train");
    tc.unet.base_channels = get(t, "base_channels", tc.unet.base_channels, "train");
  }
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string config_to_json(const PipelineConfig& cfg) {
  json j;
  j["target_spacing"] = cfg.target_spacing;
  j["loc_factor"] = cfg.loc_factor;
  j["crop"]["window"] = {cfg.crop_window.x, cfg.crop_window.y, cfg.crop_window.z};
  for (const auto& [g, s] : cfg.crop_groups) {
    json& gj = j["crop"]["groups"][std::to_string(g)];
    gj["x"] = {s.margin_fracs[0].first, s.margin_fracs[0].second};
    gj["y"] = {s.margin_fracs[1].first, s.margin_fracs[1].second};
    gj["z"] = {s.margin_fracs[2].first, s.margin_fracs[2].second};
  }
  for (const auto& [id, s] : cfg.structures) {
    json& sj = j["structures"][std::string(structure_name(id))];
    sj["box_size"] = {s.box_size.x, s.box_size.y, s.box_size.z};
    sj["crop_group"] = s.crop_group;
    sj["segnet_z_halved"] = s.segnet_z_halved;
    sj["prob_threshold"] = s.prob_threshold;
  }
  const TrainConfig& t = cfg.train;
  j["train"] = {{"epochs", t.epochs},     {"batch", t.batch},
                {"seed", t.seed},         {"lr", t.adam.lr},
                {"beta1", t.adam.beta1},  {"beta2", t.adam.beta2},
                {"eps", t.adam.eps},      {"augment_jitter", t.augment_jitter},
                {"prior_bias", t.prior_bias}, {"levels", t.unet.levels},
                {"base_channels", t.unet.base_channels}};
  return j.dump();
}

}  // namespace oarseg
