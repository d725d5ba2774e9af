#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tabor/common.hpp"

namespace tabor {

enum class LayerKind { Conv, ReLU, MaxPool, Flatten, Dense, Softmax };

// Conv kernels are fixed at 3x3 valid stride 1; pooling is 2x2 stride 2.
// `units` is the output channel count for Conv and the width for Dense.
struct LayerSpec {
  LayerKind kind;
  int units = 0;
};

struct ParamShape {
  std::string name;
  std::vector<int> shape;
};

// Static description of a classifier: input geometry plus a layer list.
// validate() walks the shape chain and reports the first offending layer.
struct Architecture {
  int height = 0;
  int width = 0;
  int channels = 0;
  int num_classes = 0;
  std::vector<LayerSpec> layers;

  // Small two-conv classifier that trains in seconds on 16x16 glyphs.
  static Architecture desk(int num_classes, int image_size = 16, int channels = 3);
  // Deeper stacks for real-size inputs; conv10 needs at least 156x156.
  static Architecture conv6(int num_classes, int image_size = 48, int channels = 3);
  static Architecture conv10(int num_classes, int image_size, int channels = 3);

  // Round-trips with describe(): "conv8,relu,maxpool,flatten,dense5,softmax".
  static Architecture parse(const std::string& desc, int height, int width, int channels,
                            int num_classes);
  std::string describe() const;

  void validate() const;

  std::vector<ParamShape> param_shapes() const;
  int64_t param_count() const;
  // Width of the flattened features entering each dense layer, etc., is
  // derived on demand; nothing here is cached.
};

}  // namespace tabor
