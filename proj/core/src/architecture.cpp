#include "tabor/architecture.hpp"

#include <sstream>

namespace tabor {
namespace {

struct ShapeState {
  bool flat = false;
  int h = 0, w = 0, c = 0;  // spatial
  int d = 0;                // flat
};

std::string layer_name(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::Conv: return "conv" + std::to_string(l.units);
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense" + std::to_string(l.units);
    case LayerKind::Softmax: return "softmax";
  }
  return "?";
}

[[noreturn]] void fail(size_t index, const LayerSpec& l, const std::string& why) {
  throw Error("architecture: layer " + std::to_string(index) + " (" + layer_name(l) + "): " + why);
}

// Advances the shape chain through one layer, throwing on geometry that the
// fixed 3x3/2x2 kernels cannot realize.
void step(ShapeState& s, size_t index, const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::Conv:
      if (s.flat) fail(index, l, "convolution after flatten");
      if (l.units <= 0) fail(index, l, "channel count must be positive");
      if (s.h < 3 || s.w < 3)
        fail(index, l, "input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                           " is smaller than the 3x3 kernel");
      s.h -= 2;
      s.w -= 2;
      s.c = l.units;
      break;
    case LayerKind::ReLU:
      break;
    case LayerKind::MaxPool:
      if (s.flat) fail(index, l, "pooling after flatten");
      if (s.h < 2 || s.w < 2)
        fail(index, l, "input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                           " is smaller than the 2x2 window");
      s.h /= 2;
      s.w /= 2;
      break;
    case LayerKind::Flatten:
      if (s.flat) fail(index, l, "flatten applied twice");
      s.d = s.h * s.w * s.c;
      s.flat = true;
      break;
    case LayerKind::Dense:
      if (!s.flat) fail(index, l, "dense layer before flatten");
      if (l.units <= 0) fail(index, l, "width must be positive");
      s.d = l.units;
      break;
    case LayerKind::Softmax:
      if (!s.flat) fail(index, l, "softmax before flatten");
      break;
  }
}

}  // namespace

Architecture Architecture::desk(int num_classes, int image_size, int channels) {
  Architecture a;
  a.height = image_size;
  a.width = image_size;
  a.channels = channels;
  a.num_classes = num_classes;
  a.layers = {{LayerKind::Conv, 8},  {LayerKind::ReLU, 0},    {LayerKind::Conv, 8},
              {LayerKind::ReLU, 0},  {LayerKind::MaxPool, 0}, {LayerKind::Flatten, 0},
              {LayerKind::Dense, num_classes}, {LayerKind::Softmax, 0}};
  a.validate();
  return a;
}

Architecture Architecture::conv6(int num_classes, int image_size, int channels) {
  Architecture a;
  a.height = image_size;
  a.width = image_size;
  a.channels = channels;
  a.num_classes = num_classes;
  for (int width : {32, 64, 128}) {
    a.layers.push_back({LayerKind::Conv, width});
    a.layers.push_back({LayerKind::ReLU, 0});
    a.layers.push_back({LayerKind::Conv, width});
    a.layers.push_back({LayerKind::ReLU, 0});
    a.layers.push_back({LayerKind::MaxPool, 0});
  }
  a.layers.push_back({LayerKind::Flatten, 0});
  a.layers.push_back({LayerKind::Dense, 256});
  a.layers.push_back({LayerKind::ReLU, 0});
  a.layers.push_back({LayerKind::Dense, num_classes});
  a.layers.push_back({LayerKind::Softmax, 0});
  a.validate();
  return a;
}

Architecture Architecture::conv10(int num_classes, int image_size, int channels) {
  Architecture a;
  a.height = image_size;
  a.width = image_size;
  a.channels = channels;
  a.num_classes = num_classes;
  for (int width : {32, 64, 128, 256, 256}) {
    a.layers.push_back({LayerKind::Conv, width});
    a.layers.push_back({LayerKind::ReLU, 0});
    a.layers.push_back({LayerKind::Conv, width});
    a.layers.push_back({LayerKind::ReLU, 0});
    a.layers.push_back({LayerKind::MaxPool, 0});
  }
  a.layers.push_back({LayerKind::Flatten, 0});
  a.layers.push_back({LayerKind::Dense, 512});
  a.layers.push_back({LayerKind::ReLU, 0});
  a.layers.push_back({LayerKind::Dense, num_classes});
  a.layers.push_back({LayerKind::Softmax, 0});
  a.validate();
  return a;
}

Architecture Architecture::parse(const std::string& desc, int height, int width, int channels,
                                 int num_classes) {
  Architecture a;
  a.height = height;
  a.width = width;
  a.channels = channels;
  a.num_classes = num_classes;
  std::stringstream ss(desc);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) throw Error("architecture: empty layer token in '" + desc + "'");
    if (tok == "relu") a.layers.push_back({LayerKind::ReLU, 0});
    else if (tok == "maxpool") a.layers.push_back({LayerKind::MaxPool, 0});
    else if (tok == "flatten") a.layers.push_back({LayerKind::Flatten, 0});
    else if (tok == "softmax") a.layers.push_back({LayerKind::Softmax, 0});
    else if (tok.rfind("conv", 0) == 0 || tok.rfind("dense", 0) == 0) {
      bool conv = tok.rfind("conv", 0) == 0;
      std::string num = tok.substr(conv ? 4 : 5);
      int units = 0;
      try {
        units = std::stoi(num);
      } catch (const std::exception&) {
        throw Error("architecture: bad layer token '" + tok + "'");
      }
      a.layers.push_back({conv ? LayerKind::Conv : LayerKind::Dense, units});
    } else {
      throw Error("architecture: unknown layer token '" + tok + "'");
    }
  }
  a.validate();
  return a;
}

std::string Architecture::describe() const {
  std::string out;
  for (size_t i = 0; i < layers.size(); ++i) {
    if (i) out += ',';
    out += layer_name(layers[i]);
  }
  return out;
}

void Architecture::validate() const {
  require(height > 0 && width > 0 && channels > 0,
          "architecture: input geometry must be positive, got " + std::to_string(height) + "x" +
              std::to_string(width) + "x" + std::to_string(channels));
  require(num_classes >= 2, "architecture: need at least two classes");
  require(!layers.empty(), "architecture: no layers");
  ShapeState s{false, height, width, channels, 0};
  for (size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind == LayerKind::Softmax && i + 1 != layers.size())
      fail(i, layers[i], "softmax must be the final layer");
    step(s, i, layers[i]);
  }
  const LayerSpec& last = layers.back();
  if (last.kind != LayerKind::Softmax) fail(layers.size() - 1, last, "network must end in softmax");
  require(s.flat && s.d == num_classes,
          "architecture: final width " + std::to_string(s.d) + " does not match " +
              std::to_string(num_classes) + " classes");
}

std::vector<ParamShape> Architecture::param_shapes() const {
  std::vector<ParamShape> out;
  ShapeState s{false, height, width, channels, 0};
  for (size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    std::string base = "layer/" + std::to_string(i) + "/" + layer_name(l);
    if (l.kind == LayerKind::Conv) {
      out.push_back({base + "/w", {3, 3, s.c, l.units}});
      out.push_back({base + "/b", {l.units}});
    } else if (l.kind == LayerKind::Dense) {
      out.push_back({base + "/w", {s.d, l.units}});
      out.push_back({base + "/b", {l.units}});
    }
    step(s, i, l);
  }
  return out;
}

int64_t Architecture::param_count() const {
  int64_t total = 0;
  for (const ParamShape& p : param_shapes()) {
    int64_t n = 1;
    for (int d : p.shape) n *= d;
    total += n;
  }
  return total;
}

}  // namespace tabor
