#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oarseg/config.hpp"
#include "oarseg/nn/unet.hpp"
#include "oarseg/volume.hpp"

namespace oarseg {

// A case mapped into the cropped isotropic frame of one structure.
struct FramedCase {
  std::string id;
  Volume image;  // normalized to [0, 1]
  Mask gt;       // empty grid of the frame size when no mask was supplied
  BBox crop;     // crop window in the isotropic grid (min may be negative)
  Dims iso_dims;
};

// resample -> crop with the structure's margin group -> normalize. The mask
// (if any) follows the same path with nearest-neighbour resampling.
FramedCase frame_case(const Volume& raw_image, const Mask* raw_gt, const PipelineConfig& cfg,
                      StructureId id, std::string case_id = {});

// Box contents at network resolution: z mean-pooled by 2 when the structure
// is flagged. Throws ConfigError if box.size differs from the configured size.
Volume extract_target_volume(const Volume& image, const BBox& box, const StructureConfig& cfg);
// Same for a mask, z-halved by majority (ties to foreground).
Mask extract_target_mask(const Mask& m, const BBox& box, const StructureConfig& cfg);

// Removes 26-connected components holding strictly less than 10% of the
// foreground. The largest component always survives.
Mask postprocess_islands(const Mask& m);

enum class Stage { Loc, Seg };
std::string_view stage_name(Stage s);
Stage parse_stage(std::string_view s);  // throws ConfigError

struct TrainResult {
  nn::UNet<float> model{nn::UNetConfig{}, 0};
  std::vector<double> loss_trace;  // one entry per optimizer step
  int used_cases = 0;
};

// One case per step, `tcfg.epochs` passes, order reshuffled each epoch from
// tcfg.seed. Cases with an empty ground truth are skipped with a warning.
// Throws TrainError when no usable case remains or a loss turns non-finite.
TrainResult train_stage(Stage stage, const std::vector<FramedCase>& cases,
                        const PipelineConfig& cfg, StructureId id, const TrainConfig& tcfg);

// Network inputs as the training loop builds them.
nn::Tensor5<float> to_tensor(const Volume& v);
Mask threshold_logits(const nn::Tensor5<float>& logits, const Dims& dims, const Spacing& spacing,
                      double prob_threshold);

struct PipelineModel {
  StructureId structure = StructureId::Brainstem;
  PipelineConfig config;
  nn::UNet<float> locnet{nn::UNetConfig{}, 0};
  nn::UNet<float> segnet{nn::UNetConfig{}, 0};
};

// Reads both model files and checks that they agree on the structure and the
// geometry they were trained for.
PipelineModel load_pipeline(const std::string& locnet_path, const std::string& segnet_path);

struct InferResult {
  Mask mask_iso;  // cropped isotropic frame
  Mask mask_raw;  // raw input grid
  BBox loc_box;   // located box at LocNet resolution
  BBox box;       // scaled-up box in the cropped frame
  BBox crop;      // crop window in the isotropic grid
};

InferResult infer_structure(const Volume& image_raw, PipelineModel& model);
// As above on an already framed case (skips resample / crop / normalize).
InferResult infer_framed(const FramedCase& c, PipelineModel& model);

// Nearest-neighbour map of a cropped-frame mask back onto a raw grid.
Mask map_to_raw(const Mask& framed, const BBox& crop, double target_spacing, const Dims& raw_dims,
                const Spacing& raw_spacing);

}  // namespace oarseg
