#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tabor {

// 8-bit image, row-major, channels interleaved.  channels is 1 (gray) or 3
// (RGB) after decoding; alpha channels in source files are dropped.
struct PngImage {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<uint8_t> pixels;
};

// `comment` is embedded as a tEXt chunk (keyword "Comment") when non-empty;
// decoding ignores ancillary chunks, so it does not affect round-trips.
std::vector<uint8_t> encode_png(const PngImage& img, const std::string& comment = "");
PngImage decode_png(const std::vector<uint8_t>& bytes);

void write_png(const std::string& path, const PngImage& img, const std::string& comment = "");
PngImage read_png(const std::string& path);

}  // namespace tabor
