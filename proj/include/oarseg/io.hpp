#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "oarseg/config.hpp"
#include "oarseg/metrics.hpp"
#include "oarseg/nn/unet.hpp"
#include "oarseg/volume.hpp"

namespace oarseg {

// ---- NRRD (subset) --------------------------------------------------------
//
// Accepted: NRRD0001..NRRD0005 magic, dimension 3, type uint8 / int16 / float
// (and their NRRD aliases), little endian, raw encoding, either `spacings` or a
// diagonal `space directions` matrix, payload inline or in one detached
// `data file` (raw with a .nhdr sidecar, resolved next to the header).
// Non-diagonal directions, multi-file lists and other encodings are rejected
// with ParseError.

enum class NrrdType { UInt8, Int16, Float32 };

struct NrrdHeader {
  NrrdType type = NrrdType::Float32;
  Dims sizes;
  Spacing spacing;
  std::string encoding = "raw";
  std::string data_file;  // empty when the payload follows the header
};

using AnyVolume = std::variant<Volume, Mask>;

// uint8 payloads whose values are all 0/1 load as Mask; everything else as a
// float Volume (int16 HU kept as scalars).
AnyVolume read_volume(const std::filesystem::path& path);
Volume read_image(const std::filesystem::path& path);
// Any nonzero voxel of a uint8/int16/float payload is foreground.
Mask read_mask(const std::filesystem::path& path);

NrrdHeader parse_nrrd_header(std::istream& in, const std::string& context);

// A path ending in .nhdr writes a detached header plus a sibling .raw file.
void write_volume(const Volume& v, const std::filesystem::path& path);
void write_volume_int16(const Volume& v, const std::filesystem::path& path);
void write_mask(const Mask& m, const std::filesystem::path& path);

// ---- Model files -----------------------------------------------------------
//
// Little endian throughout:
//   8 bytes  magic "OARUNET\0"
//   u32      format version (1)
//   u32+str  structure name
//   u32+str  stage ("loc" or "seg")
//   u32+str  config snapshot (compact JSON)
//   u32      tensor count
//   per tensor: u32+str name, u32 rank, u64 dims[rank], f32 values[prod(dims)]
//   u64      FNV-1a 64 checksum of every preceding byte

inline constexpr uint32_t kModelVersion = 1;

struct ModelFile {
  StructureId structure = StructureId::Brainstem;
  std::string stage = "seg";
  PipelineConfig config;
  nn::UNet<float> model{nn::UNetConfig{}, 0};
};

uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 14695981039346656037ull);

std::vector<uint8_t> serialize_model(const ModelFile& m);
ModelFile deserialize_model(const std::vector<uint8_t>& bytes, const std::string& context);
void save_model(const ModelFile& m, const std::filesystem::path& path);
// Throws CorruptModelError on truncation, bad magic, checksum or shape mismatch.
ModelFile load_model(const std::filesystem::path& path);

// ---- Configuration ---------------------------------------------------------
//
// JSON (comments allowed). Every key is optional; missing keys keep the
// defaults. See configs/default.jsonc for the annotated schema.

PipelineConfig parse_config(const std::string& text, const std::string& context = "config");
PipelineConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const PipelineConfig& cfg);

// ---- Metrics reports ---------------------------------------------------------
//
// One JSON object per line. An infinite hd95 is written as the string "inf".
// Each record names the evaluation frame and the point-set / percentile rules.

std::string report_to_json_line(const MetricsReport& r);
MetricsReport parse_report_line(const std::string& line);  // throws ParseError

}  // namespace oarseg
