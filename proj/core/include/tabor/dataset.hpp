#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tabor/common.hpp"
#include "tabor/tensor.hpp"

namespace tabor {

// Per-sample role inside the serialized pack.  The on-disk byte doubles as
// the poisoned flag: clean and poisoned training samples are distinguishable
// and the evaluation split is never poisoned by construction.
enum class SampleRole : uint8_t {
  TrainClean = 0,
  TrainPoisoned = 1,
  Test = 2,
};

constexpr int kNoTriggerSpec = -1;

// In-memory image classification dataset.  Pixels are floats in [0,1], laid
// out H*W*C row-major per image; the train/test split and any poisoning
// bookkeeping travel with the samples.
struct LabeledDataset {
  int height = 0;
  int width = 0;
  int channels = 0;
  int num_classes = 0;
  std::vector<std::vector<float>> images;
  std::vector<int> labels;
  std::vector<SampleRole> roles;
  std::vector<int> spec_ids;  // kNoTriggerSpec for unpoisoned samples

  size_t size() const { return images.size(); }
  int64_t pixels_per_image() const {
    return static_cast<int64_t>(height) * width * channels;
  }

  std::vector<int> train_indices() const;
  std::vector<int> test_indices() const;

  void push(std::vector<float> image, int label, SampleRole role, int spec_id = kNoTriggerSpec);

  // Internal consistency: parallel arrays line up, labels are in range,
  // image buffers have the advertised size, poisoned samples carry a spec id.
  void validate() const;
};

// Gathers the chosen samples into an [N,H,W,C] batch tensor.
template <typename S>
TensorT<S> make_batch(const LabeledDataset& data, const std::vector<int>& idx) {
  require(!idx.empty(), "make_batch: empty index list");
  const int64_t per = data.pixels_per_image();
  TensorT<S> out({static_cast<int>(idx.size()), data.height, data.width, data.channels});
  auto& ov = out.values();
  for (size_t i = 0; i < idx.size(); ++i) {
    const auto& img = data.images.at(static_cast<size_t>(idx[i]));
    require(static_cast<int64_t>(img.size()) == per, "make_batch: malformed image buffer");
    for (int64_t j = 0; j < per; ++j)
      ov[static_cast<size_t>(i) * per + j] = static_cast<S>(img[static_cast<size_t>(j)]);
  }
  return out;
}

template <typename S>
TensorT<S> image_tensor(const LabeledDataset& data, int i) {
  const auto& img = data.images.at(static_cast<size_t>(i));
  std::vector<S> v(img.begin(), img.end());
  return TensorT<S>({data.height, data.width, data.channels}, std::move(v));
}

std::vector<int> labels_of(const LabeledDataset& data, const std::vector<int>& idx);

// Synthetic glyph corpus: each class is a distinct bright shape on a dark
// noisy background, 3 channels, per-class 80/20 train/test split.  Fully
// determined by the seed.
LabeledDataset generate_synthetic(int num_classes, int per_class, int image_size, uint64_t seed);

// Builds a dataset from a directory of per-class subdirectories of PNG
// files.  Class ids follow the lexicographic order of the subdirectory
// names; the per-class 80/20 split rule matches generate_synthetic.
LabeledDataset ingest_directory(const std::string& path);

// Binary pack format (magic "TBRD"), little-endian throughout, CRC-trailed.
void write_dataset(const LabeledDataset& data, const std::string& path);
LabeledDataset read_dataset(const std::string& path);

}  // namespace tabor
