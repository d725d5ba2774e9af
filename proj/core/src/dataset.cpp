#include "tabor/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "bytes.hpp"
#include "tabor/png_io.hpp"
#include "tabor/rng.hpp"

namespace tabor {
namespace {

constexpr char kMagic[4] = {'T', 'B', 'R', 'D'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kNoSpecByte = 255;

// Each class gets a distinct bright hue, all kept away from pure white so a
// white trigger patch stays visually and statistically separable.
constexpr float kPalette[8][3] = {
    {0.80f, 0.20f, 0.20f}, {0.20f, 0.80f, 0.30f}, {0.25f, 0.35f, 0.85f},
    {0.80f, 0.75f, 0.20f}, {0.75f, 0.20f, 0.75f}, {0.20f, 0.75f, 0.80f},
    {0.85f, 0.50f, 0.15f}, {0.50f, 0.25f, 0.80f}};

// Glyph membership test for a pixel, in centered coordinates.  Shapes are
// chunky on purpose: they must survive 16x16 resolution.
bool glyph_hit(int shape, double dr, double dc, double scale) {
  const double R = 0.30 * scale;
  const double box = 0.34 * scale;
  const double bar = 0.12 * scale;
  const double arm = 0.10 * scale;
  double dist = std::sqrt(dr * dr + dc * dc);
  double cheb = std::max(std::abs(dr), std::abs(dc));
  switch (shape) {
    case 0: return dist <= R;                                     // disk
    case 1: return std::abs(dc) <= bar && std::abs(dr) <= box;    // vertical bar
    case 2:                                                       // plus
      return (std::abs(dc) <= arm || std::abs(dr) <= arm) && cheb <= box;
    case 3: return dist >= 0.18 * scale && dist <= 0.32 * scale;  // ring
    case 4: {                                                     // triangle
      double top = -R;
      return dr >= top && dr <= R && std::abs(dc) <= (dr - top) * 0.55;
    }
    case 5:                                                       // diagonal cross
      return (std::abs(dr - dc) <= arm || std::abs(dr + dc) <= arm) && cheb <= 0.32 * scale;
    case 6: return std::abs(dr) <= bar && std::abs(dc) <= box;    // horizontal bar
    case 7: return cheb >= 0.20 * scale && cheb <= 0.32 * scale;  // hollow square
    default: return false;
  }
}

float quantize(float v) {
  float k = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f);
  return k / 255.0f;
}

}  // namespace

std::vector<int> LabeledDataset::train_indices() const {
  std::vector<int> out;
  for (size_t i = 0; i < roles.size(); ++i)
    if (roles[i] != SampleRole::Test) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> LabeledDataset::test_indices() const {
  std::vector<int> out;
  for (size_t i = 0; i < roles.size(); ++i)
    if (roles[i] == SampleRole::Test) out.push_back(static_cast<int>(i));
  return out;
}

void LabeledDataset::push(std::vector<float> image, int label, SampleRole role, int spec_id) {
  images.push_back(std::move(image));
  labels.push_back(label);
  roles.push_back(role);
  spec_ids.push_back(spec_id);
}

void LabeledDataset::validate() const {
  require(height > 0 && width > 0 && channels > 0,
          "dataset: geometry must be positive, got " + std::to_string(height) + "x" +
              std::to_string(width) + "x" + std::to_string(channels));
  require(num_classes >= 2, "dataset: need at least two classes");
  const size_t n = images.size();
  require(labels.size() == n && roles.size() == n && spec_ids.size() == n,
          "dataset: parallel arrays out of step");
  const size_t per = static_cast<size_t>(pixels_per_image());
  for (size_t i = 0; i < n; ++i) {
    require(images[i].size() == per,
            "dataset: sample " + std::to_string(i) + " has wrong pixel count");
    require(labels[i] >= 0 && labels[i] < num_classes,
            "dataset: sample " + std::to_string(i) + " label " + std::to_string(labels[i]) +
                " out of range");
    bool poisoned = roles[i] == SampleRole::TrainPoisoned;
    require(poisoned == (spec_ids[i] != kNoTriggerSpec),
            "dataset: sample " + std::to_string(i) + " poison flag and trigger id disagree");
    for (float v : images[i])
      require(v >= 0.0f && v <= 1.0f,
              "dataset: sample " + std::to_string(i) + " has pixel outside [0,1]");
  }
}

std::vector<int> labels_of(const LabeledDataset& data, const std::vector<int>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(data.labels.at(static_cast<size_t>(i)));
  return out;
}

LabeledDataset generate_synthetic(int num_classes, int per_class, int image_size, uint64_t seed) {
  require(num_classes >= 2 && num_classes <= 8,
          "generate_synthetic: class count must be in [2,8], got " + std::to_string(num_classes));
  require(per_class >= 2, "generate_synthetic: need at least two samples per class");
  require(image_size >= 12, "generate_synthetic: image size must be at least 12");

  LabeledDataset data;
  data.height = image_size;
  data.width = image_size;
  data.channels = 3;
  data.num_classes = num_classes;

  Rng rng(derive_seed(seed, 2));
  const int train_per_class = static_cast<int>(std::floor(0.8 * per_class));
  const double cy = (image_size - 1) / 2.0;
  const double cx = (image_size - 1) / 2.0;

  for (int cls = 0; cls < num_classes; ++cls) {
    for (int s = 0; s < per_class; ++s) {
      float base = static_cast<float>(rng.uniform(0.08, 0.18));
      float color[3];
      for (int ch = 0; ch < 3; ++ch) {
        color[ch] = kPalette[cls][ch] + static_cast<float>(rng.uniform(-0.15, 0.15));
        color[ch] = std::clamp(color[ch], 0.05f, 0.90f);
      }
      std::vector<float> img(static_cast<size_t>(image_size) * image_size * 3);
      size_t p = 0;
      for (int r = 0; r < image_size; ++r)
        for (int c = 0; c < image_size; ++c) {
          bool hit = glyph_hit(cls, r - cy, c - cx, image_size);
          for (int ch = 0; ch < 3; ++ch, ++p) {
            float v = hit ? color[ch] : base;
            v += static_cast<float>(rng.uniform(-0.06, 0.06));
            img[p] = quantize(v);
          }
        }
      SampleRole role = s < train_per_class ? SampleRole::TrainClean : SampleRole::Test;
      data.push(std::move(img), cls, role);
    }
  }
  data.validate();
  return data;
}

LabeledDataset ingest_directory(const std::string& path) {
  namespace fs = std::filesystem;
  require(fs::is_directory(path), "ingest: '" + path + "' is not a directory");

  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(path))
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  require(class_dirs.size() >= 2,
          "ingest: '" + path + "' needs at least two class subdirectories");

  LabeledDataset data;
  data.num_classes = static_cast<int>(class_dirs.size());

  for (size_t cls = 0; cls < class_dirs.size(); ++cls) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[cls]))
      if (entry.is_regular_file() && entry.path().extension() == ".png")
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    require(!files.empty(),
            "ingest: class directory '" + class_dirs[cls].string() + "' has no PNG files");

    const int train_count = static_cast<int>(std::floor(0.8 * static_cast<double>(files.size())));
    for (size_t i = 0; i < files.size(); ++i) {
      PngImage png = read_png(files[i].string());
      if (data.height == 0) {
        data.height = png.height;
        data.width = png.width;
        data.channels = png.channels;
      } else if (png.height != data.height || png.width != data.width ||
                 png.channels != data.channels) {
        throw Error("ingest: '" + files[i].string() + "' is " + std::to_string(png.width) + "x" +
                    std::to_string(png.height) + "x" + std::to_string(png.channels) +
                    " but the rest of the corpus is " + std::to_string(data.width) + "x" +
                    std::to_string(data.height) + "x" + std::to_string(data.channels));
      }
      std::vector<float> img(png.pixels.size());
      for (size_t j = 0; j < png.pixels.size(); ++j)
        img[j] = static_cast<float>(png.pixels[j]) / 255.0f;
      SampleRole role = static_cast<int>(i) < train_count ? SampleRole::TrainClean : SampleRole::Test;
      data.push(std::move(img), static_cast<int>(cls), role);
    }
  }
  data.validate();
  return data;
}

void write_dataset(const LabeledDataset& data, const std::string& path) {
  data.validate();
  require(data.size() > 0, "write_dataset: refusing to write an empty pack");
  require(data.height <= 0xffff && data.width <= 0xffff && data.channels <= 0xff &&
              data.num_classes <= 0xffff,
          "write_dataset: geometry does not fit the format fields");

  detail::ByteWriter w;
  w.bytes(reinterpret_cast<const uint8_t*>(kMagic), 4);
  w.u32(kVersion);
  w.u32(static_cast<uint32_t>(data.size()));
  w.u16(static_cast<uint16_t>(data.height));
  w.u16(static_cast<uint16_t>(data.width));
  w.u8(static_cast<uint8_t>(data.channels));
  w.u16(static_cast<uint16_t>(data.num_classes));
  for (size_t i = 0; i < data.size(); ++i) {
    for (float v : data.images[i])
      w.u8(static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    w.u16(static_cast<uint16_t>(data.labels[i]));
    w.u8(static_cast<uint8_t>(data.roles[i]));
    int spec = data.spec_ids[i];
    require(spec == kNoTriggerSpec || (spec >= 0 && spec < 255),
            "write_dataset: trigger spec id out of range");
    w.u8(spec == kNoTriggerSpec ? kNoSpecByte : static_cast<uint8_t>(spec));
  }
  uint32_t crc = static_cast<uint32_t>(crc32(0, w.data().data(), static_cast<uInt>(w.size())));
  w.u32(crc);
  detail::write_file(path, w.data());
}

LabeledDataset read_dataset(const std::string& path) {
  std::vector<uint8_t> bytes = detail::read_file(path);
  detail::ByteReader r(bytes);

  if (r.remaining() < 4 || std::memcmp(r.raw(4), kMagic, 4) != 0)
    throw IoError(IoCode::BadMagic, "dataset: '" + path + "' is not a TBRD pack");
  uint32_t version = r.u32();
  if (version != kVersion)
    throw IoError(IoCode::VersionMismatch, "dataset: '" + path + "' has version " +
                                               std::to_string(version) + ", expected " +
                                               std::to_string(kVersion));
  uint32_t count = r.u32();
  LabeledDataset data;
  data.height = r.u16();
  data.width = r.u16();
  data.channels = r.u8();
  data.num_classes = r.u16();
  if (data.height == 0 || data.width == 0 || data.channels == 0)
    throw IoError(IoCode::Malformed, "dataset: zero geometry field");

  const size_t per = static_cast<size_t>(data.pixels_per_image());
  const size_t expected = r.pos() + static_cast<size_t>(count) * (per + 4) + 4;
  if (bytes.size() < expected)
    throw IoError(IoCode::Truncated, "dataset: '" + path + "' ends before sample " +
                                         std::to_string(count) + " of its header count");
  if (bytes.size() > expected)
    throw IoError(IoCode::Malformed, "dataset: trailing bytes after checksum");
  uint32_t actual = static_cast<uint32_t>(
      crc32(0, bytes.data(), static_cast<uInt>(bytes.size() - 4)));
  uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<uint32_t>(bytes[bytes.size() - 4 + i]) << (8 * i);
  if (stored != actual)
    throw IoError(IoCode::CrcMismatch, "dataset: '" + path + "' fails its checksum");

  for (uint32_t i = 0; i < count; ++i) {
    const uint8_t* px = r.raw(per);
    std::vector<float> img(per);
    for (size_t j = 0; j < per; ++j) img[j] = static_cast<float>(px[j]) / 255.0f;
    int label = r.u16();
    uint8_t role = r.u8();
    uint8_t spec = r.u8();
    if (label >= data.num_classes)
      throw IoError(IoCode::Malformed, "dataset: sample " + std::to_string(i) +
                                           " label out of range");
    if (role > 2)
      throw IoError(IoCode::Malformed,
                    "dataset: sample " + std::to_string(i) + " has unknown role byte");
    data.push(std::move(img), label, static_cast<SampleRole>(role),
              spec == kNoSpecByte ? kNoTriggerSpec : static_cast<int>(spec));
  }

  try {
    data.validate();
  } catch (const Error& e) {
    throw IoError(IoCode::Malformed, std::string("dataset: ") + e.what());
  }
  return data;
}

}  // namespace tabor
