#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "oarseg/nn/adam.hpp"
#include "oarseg/nn/unet.hpp"
#include "oarseg/preprocess.hpp"
#include "oarseg/volume.hpp"

namespace oarseg {

struct StructureConfig {
  StructureId id = StructureId::Brainstem;
  Dims box_size{56, 56, 80};
  int crop_group = 1;
  bool segnet_z_halved = false;  // only the mandible by default
  double prob_threshold = 0.5;

  void validate() const;  // throws ConfigError
};

// Bounding-box sizes per structure (voxels at 1 mm).
StructureConfig default_structure_config(StructureId id);

struct TrainConfig {
  int epochs = 200;
  int batch = 1;
  uint64_t seed = 0;
  nn::AdamConfig adam;
  int augment_jitter = 0;  // voxels; SegNet window jitter, off by default
  // Start the final conv bias at the log-odds of the mean foreground fraction
  // of the training targets instead of 0.
  bool prior_bias = false;
  nn::UNetConfig unet;

  void validate() const;
};

// Everything needed to run the pipeline for any structure.
struct PipelineConfig {
  double target_spacing = 1.0;
  int64_t loc_factor = 4;
  Dims crop_window{384, 384, 224};
  std::map<int, CropSpec> crop_groups;  // keyed by group 1, 2
  std::map<StructureId, StructureConfig> structures;
  TrainConfig train;

  PipelineConfig();
  const StructureConfig& structure(StructureId id) const;
  CropSpec crop_spec(StructureId id) const;
  Dims locnet_input() const;
  Dims segnet_input(StructureId id) const;
  void validate() const;
  // Box sizes are only checked against the crop window for the structure in
  // use, so a small phantom window need not override all nine boxes.
  void check_fits(StructureId id) const;
};

}  // namespace oarseg
