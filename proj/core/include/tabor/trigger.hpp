#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tabor/dataset.hpp"

namespace tabor {

enum class Corner { TopLeft, TopRight, BottomLeft, BottomRight };

std::string corner_name(Corner c);
Corner parse_corner(const std::string& name);

// A planted trigger: a stenciled pixel patch anchored to an image corner
// plus the class it should hijack.  offset_x/offset_y shift the patch inward
// from its corner.
struct TriggerSpec {
  int id = 0;
  Corner corner = Corner::BottomRight;
  int size = 3;
  int offset_x = 0;
  int offset_y = 0;
  int channels = 3;
  std::vector<uint8_t> stencil;  // size*size, 1 = pixel belongs to the trigger
  std::vector<float> pattern;    // size*size*channels, [0,1]
  int target_class = 0;

  // Solid square patch of one colour.
  static TriggerSpec square(int size, Corner corner, int target_class, float value = 1.0f,
                            int channels = 3);
  // Asymmetric rectangular spiral stroke, same colour convention.
  static TriggerSpec swirl(int size, Corner corner, int target_class, float value = 1.0f,
                           int channels = 3);

  // Top-left (row, col) of the patch inside an image.
  std::pair<int, int> anchor(int height, int width) const;

  void validate(int height, int width, int channels, int num_classes) const;
};

// Returns a stamped copy: stenciled pixels replaced by the pattern, the rest
// untouched.  Stamping is idempotent.
std::vector<float> stamp(const std::vector<float>& image, int height, int width, int channels,
                         const TriggerSpec& spec);

// Binary H*W ground-truth mask of the pixels a spec touches.
std::vector<uint8_t> truth_mask(const TriggerSpec& spec, int height, int width);

// Appends floor(rate * |train|) stamped, relabeled copies of randomly chosen
// clean training samples per spec.  The test split is never touched.
LabeledDataset poison(const LabeledDataset& data, const std::vector<TriggerSpec>& specs,
                      double rate, uint64_t seed);

// Line-oriented text manifest for a spec list, exact round-trip.  The header
// may carry free-form provenance lines: a checksum identifying the model the
// triggers were implanted into, and the producing tool's configuration.
struct ManifestMeta {
  std::string model_crc;
  std::string config;
};

void write_manifest(const std::string& path, const std::vector<TriggerSpec>& specs,
                    const ManifestMeta& meta = {});
std::vector<TriggerSpec> read_manifest(const std::string& path, ManifestMeta* meta = nullptr);

}  // namespace tabor
