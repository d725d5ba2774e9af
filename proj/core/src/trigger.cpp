#include "tabor/trigger.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tabor/rng.hpp"

namespace tabor {
namespace {

std::vector<uint8_t> spiral_stencil(int s) {
  std::vector<uint8_t> m(static_cast<size_t>(s) * s, 0);
  auto set = [&](int r, int c) { m[static_cast<size_t>(r) * s + c] = 1; };
  int top = 0, left = 0, bottom = s - 1, right = s - 1;
  while (top <= bottom && left <= right) {
    for (int c = left; c <= right; ++c) set(top, c);
    for (int r = top + 1; r <= bottom; ++r) set(r, right);
    if (top < bottom)
      for (int c = right - 1; c >= left; --c) set(bottom, c);
    // Stop short on the way back up: the gap links the rings into a stroke
    // and breaks every mirror symmetry.
    if (left < right)
      for (int r = bottom - 1; r > top + 1; --r) set(r, left);
    top += 2;
    left += 2;
    bottom -= 2;
    right -= 2;
  }
  return m;
}

}  // namespace

std::string corner_name(Corner c) {
  switch (c) {
    case Corner::TopLeft: return "top-left";
    case Corner::TopRight: return "top-right";
    case Corner::BottomLeft: return "bottom-left";
    case Corner::BottomRight: return "bottom-right";
  }
  return "?";
}

Corner parse_corner(const std::string& name) {
  if (name == "top-left") return Corner::TopLeft;
  if (name == "top-right") return Corner::TopRight;
  if (name == "bottom-left") return Corner::BottomLeft;
  if (name == "bottom-right") return Corner::BottomRight;
  throw Error("trigger: unknown corner '" + name + "'");
}

TriggerSpec TriggerSpec::square(int size, Corner corner, int target_class, float value,
                                int channels) {
  TriggerSpec s;
  s.corner = corner;
  s.size = size;
  s.channels = channels;
  s.target_class = target_class;
  s.stencil.assign(static_cast<size_t>(size) * size, 1);
  s.pattern.assign(static_cast<size_t>(size) * size * channels, value);
  return s;
}

TriggerSpec TriggerSpec::swirl(int size, Corner corner, int target_class, float value,
                               int channels) {
  require(size >= 3, "trigger: swirl needs size >= 3");
  TriggerSpec s;
  s.corner = corner;
  s.size = size;
  s.channels = channels;
  s.target_class = target_class;
  s.stencil = spiral_stencil(size);
  s.pattern.assign(static_cast<size_t>(size) * size * channels, value);
  return s;
}

std::pair<int, int> TriggerSpec::anchor(int height, int width) const {
  int row = 0, col = 0;
  switch (corner) {
    case Corner::TopLeft: row = offset_y; col = offset_x; break;
    case Corner::TopRight: row = offset_y; col = width - size - offset_x; break;
    case Corner::BottomLeft: row = height - size - offset_y; col = offset_x; break;
    case Corner::BottomRight: row = height - size - offset_y; col = width - size - offset_x; break;
  }
  return {row, col};
}

void TriggerSpec::validate(int height, int width, int image_channels, int num_classes) const {
  require(size >= 1, "trigger: size must be at least 1");
  require(offset_x >= 0 && offset_y >= 0, "trigger: offsets must be non-negative");
  require(channels == image_channels,
          "trigger: pattern has " + std::to_string(channels) + " channels, images have " +
              std::to_string(image_channels));
  auto [row, col] = anchor(height, width);
  require(row >= 0 && col >= 0 && row + size <= height && col + size <= width,
          "trigger: patch of size " + std::to_string(size) + " at " + corner_name(corner) +
              " offset (" + std::to_string(offset_x) + "," + std::to_string(offset_y) +
              ") does not fit a " + std::to_string(width) + "x" + std::to_string(height) +
              " image");
  require(stencil.size() == static_cast<size_t>(size) * size, "trigger: stencil size mismatch");
  require(pattern.size() == static_cast<size_t>(size) * size * channels,
          "trigger: pattern size mismatch");
  bool any = false;
  for (uint8_t b : stencil) {
    require(b <= 1, "trigger: stencil entries must be 0 or 1");
    any = any || b;
  }
  require(any, "trigger: stencil is empty");
  for (float v : pattern)
    require(v >= 0.0f && v <= 1.0f, "trigger: pattern values must lie in [0,1]");
  require(target_class >= 0 && target_class < num_classes,
          "trigger: target class " + std::to_string(target_class) + " out of range");
}

std::vector<float> stamp(const std::vector<float>& image, int height, int width, int channels,
                         const TriggerSpec& spec) {
  require(image.size() == static_cast<size_t>(height) * width * channels,
          "stamp: image buffer does not match its geometry");
  std::vector<float> out = image;
  auto [row, col] = spec.anchor(height, width);
  for (int r = 0; r < spec.size; ++r)
    for (int c = 0; c < spec.size; ++c) {
      if (!spec.stencil[static_cast<size_t>(r) * spec.size + c]) continue;
      for (int ch = 0; ch < channels; ++ch)
        out[((static_cast<size_t>(row + r) * width) + (col + c)) * channels + ch] =
            spec.pattern[(static_cast<size_t>(r) * spec.size + c) * channels + ch];
    }
  return out;
}

std::vector<uint8_t> truth_mask(const TriggerSpec& spec, int height, int width) {
  std::vector<uint8_t> mask(static_cast<size_t>(height) * width, 0);
  auto [row, col] = spec.anchor(height, width);
  require(row >= 0 && col >= 0 && row + spec.size <= height && col + spec.size <= width,
          "truth_mask: trigger does not fit the image");
  for (int r = 0; r < spec.size; ++r)
    for (int c = 0; c < spec.size; ++c)
      if (spec.stencil[static_cast<size_t>(r) * spec.size + c])
        mask[static_cast<size_t>(row + r) * width + (col + c)] = 1;
  return mask;
}

LabeledDataset poison(const LabeledDataset& data, const std::vector<TriggerSpec>& specs,
                      double rate, uint64_t seed) {
  data.validate();
  require(!specs.empty(), "poison: no trigger specs given");
  require(rate > 0.0 && rate <= 1.0, "poison: rate must lie in (0,1]");
  for (const TriggerSpec& s : specs)
    s.validate(data.height, data.width, data.channels, data.num_classes);
  for (size_t i = 0; i < specs.size(); ++i)
    for (size_t j = i + 1; j < specs.size(); ++j)
      require(specs[i].id != specs[j].id, "poison: duplicate trigger spec id");

  std::vector<int> pool;
  for (size_t i = 0; i < data.size(); ++i)
    if (data.roles[i] == SampleRole::TrainClean) pool.push_back(static_cast<int>(i));
  require(!pool.empty(), "poison: dataset has no clean training samples");

  const int per_spec = static_cast<int>(std::floor(rate * static_cast<double>(pool.size())));
  require(per_spec >= 1, "poison: rate " + std::to_string(rate) + " yields zero samples from " +
                             std::to_string(pool.size()) + " training images");

  LabeledDataset out = data;
  for (size_t k = 0; k < specs.size(); ++k) {
    Rng rng(derive_seed(seed, 100 + k));
    std::vector<int> picks = rng.sample(static_cast<int>(pool.size()), per_spec);
    for (int p : picks) {
      int src = pool[static_cast<size_t>(p)];
      out.push(stamp(data.images[static_cast<size_t>(src)], data.height, data.width,
                     data.channels, specs[k]),
               specs[k].target_class, SampleRole::TrainPoisoned, specs[k].id);
    }
  }
  out.validate();
  return out;
}

void write_manifest(const std::string& path, const std::vector<TriggerSpec>& specs,
                    const ManifestMeta& meta) {
  require(!specs.empty(), "manifest: no specs to write");
  require(meta.config.find('\n') == std::string::npos, "manifest: config must be one line");
  std::ostringstream os;
  os << "TBRT 1\n";
  if (!meta.model_crc.empty()) os << "model-crc " << meta.model_crc << "\n";
  if (!meta.config.empty()) os << "config " << meta.config << "\n";
  for (const TriggerSpec& s : specs) {
    os << "trigger\n";
    os << "  id " << s.id << "\n";
    os << "  corner " << corner_name(s.corner) << "\n";
    os << "  offset " << s.offset_x << " " << s.offset_y << "\n";
    os << "  size " << s.size << "\n";
    os << "  channels " << s.channels << "\n";
    os << "  target " << s.target_class << "\n";
    os << "  stencil ";
    for (uint8_t b : s.stencil) os << (b ? '1' : '0');
    os << "\n  pattern";
    os << std::hex;
    for (float v : s.pattern) {
      int q = static_cast<int>(std::lround(std::fmin(std::fmax(v, 0.0f), 1.0f) * 255.0f));
      os << ' ' << (q >> 4) << (q & 15);
    }
    os << std::dec << "\nend\n";
  }
  std::ofstream f(path, std::ios::trunc);
  require(f.good(), "manifest: cannot open '" + path + "' for writing");
  f << os.str();
  require(f.good(), "manifest: short write to '" + path + "'");
}

std::vector<TriggerSpec> read_manifest(const std::string& path, ManifestMeta* meta) {
  std::ifstream f(path);
  if (!f.good()) throw Error("manifest: cannot open '" + path + "'");
  std::string word;
  require(static_cast<bool>(f >> word) && word == "TBRT", "manifest: '" + path +
                                                              "' does not start with TBRT");
  int version = 0;
  require(static_cast<bool>(f >> version) && version == 1,
          "manifest: unsupported version in '" + path + "'");

  std::vector<TriggerSpec> specs;
  while (f >> word) {
    if (word == "model-crc") {
      std::string crc;
      require(static_cast<bool>(f >> crc), "manifest: model-crc line lacks a value");
      if (meta) meta->model_crc = crc;
      continue;
    }
    if (word == "config") {
      std::string rest;
      std::getline(f, rest);
      while (!rest.empty() && (rest.front() == ' ' || rest.front() == '\t')) rest.erase(0, 1);
      if (meta) meta->config = rest;
      continue;
    }
    require(word == "trigger", "manifest: expected 'trigger', got '" + word + "'");
    TriggerSpec s;
    bool have_stencil = false, have_pattern = false;
    while (f >> word && word != "end") {
      if (word == "id") f >> s.id;
      else if (word == "corner") {
        std::string c;
        f >> c;
        s.corner = parse_corner(c);
      } else if (word == "offset") f >> s.offset_x >> s.offset_y;
      else if (word == "size") f >> s.size;
      else if (word == "channels") f >> s.channels;
      else if (word == "target") f >> s.target_class;
      else if (word == "stencil") {
        std::string bits;
        f >> bits;
        s.stencil.clear();
        for (char c : bits) {
          require(c == '0' || c == '1', "manifest: stencil must be a 0/1 string");
          s.stencil.push_back(c == '1' ? 1 : 0);
        }
        have_stencil = true;
      } else if (word == "pattern") {
        require(s.size > 0 && s.channels > 0, "manifest: pattern before size/channels");
        size_t n = static_cast<size_t>(s.size) * s.size * s.channels;
        s.pattern.clear();
        for (size_t i = 0; i < n; ++i) {
          std::string hex;
          require(static_cast<bool>(f >> hex) && hex.size() == 2 &&
                      std::isxdigit(static_cast<unsigned char>(hex[0])) &&
                      std::isxdigit(static_cast<unsigned char>(hex[1])),
                  "manifest: pattern entry is not a hex byte");
          int q = std::stoi(hex, nullptr, 16);
          s.pattern.push_back(static_cast<float>(q) / 255.0f);
        }
        have_pattern = true;
      } else {
        throw Error("manifest: unknown field '" + word + "'");
      }
      require(f.good() || f.eof(), "manifest: parse error near '" + word + "'");
    }
    require(word == "end", "manifest: trigger block not closed with 'end'");
    require(have_stencil && have_pattern, "manifest: trigger block lacks stencil or pattern");
    specs.push_back(std::move(s));
  }
  require(!specs.empty(), "manifest: '" + path + "' contains no triggers");
  return specs;
}

}  // namespace tabor
