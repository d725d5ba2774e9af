#include "tabor/png_io.hpp"

#include <zlib.h>

#include <cstring>

#include "bytes.hpp"
#include "tabor/common.hpp"

namespace tabor {
namespace {

constexpr uint8_t kSignature[8] = {137, 'P', 'N', 'G', '\r', '\n', 26, '\n'};

void append_chunk(detail::ByteWriter& w, const char type[4], const std::vector<uint8_t>& data) {
  w.u32be(static_cast<uint32_t>(data.size()));
  detail::ByteWriter body;
  body.bytes(reinterpret_cast<const uint8_t*>(type), 4);
  body.bytes(data.data(), data.size());
  uint32_t crc = static_cast<uint32_t>(
      crc32(0, body.data().data(), static_cast<uInt>(body.size())));
  w.bytes(body.data().data(), body.size());
  w.u32be(crc);
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

std::vector<uint8_t> encode_png(const PngImage& img, const std::string& comment) {
  require(img.channels == 1 || img.channels == 3,
          "png: can only encode 1- or 3-channel images, got " + std::to_string(img.channels));
  require(img.height > 0 && img.width > 0, "png: empty image");
  const size_t expect = static_cast<size_t>(img.height) * img.width * img.channels;
  require(img.pixels.size() == expect, "png: pixel buffer size " +
                                           std::to_string(img.pixels.size()) + " does not match " +
                                           std::to_string(expect));

  // Raw scanlines, filter type 0 on every row.
  const size_t stride = static_cast<size_t>(img.width) * img.channels;
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(img.height) * (stride + 1));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    const uint8_t* row = img.pixels.data() + static_cast<size_t>(y) * stride;
    raw.insert(raw.end(), row, row + stride);
  }

  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> comp(comp_len);
  int rc = compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6);
  require(rc == Z_OK, "png: deflate failed");
  comp.resize(comp_len);

  detail::ByteWriter ihdr;
  ihdr.u32be(static_cast<uint32_t>(img.width));
  ihdr.u32be(static_cast<uint32_t>(img.height));
  ihdr.u8(8);                                  // bit depth
  ihdr.u8(img.channels == 1 ? 0 : 2);          // color type
  ihdr.u8(0);                                  // compression
  ihdr.u8(0);                                  // filter
  ihdr.u8(0);                                  // interlace

  detail::ByteWriter out;
  out.bytes(kSignature, 8);
  append_chunk(out, "IHDR", ihdr.data());
  if (!comment.empty()) {
    detail::ByteWriter text;
    text.str("Comment");
    text.u8(0);
    text.str(comment);
    append_chunk(out, "tEXt", text.data());
  }
  append_chunk(out, "IDAT", comp);
  append_chunk(out, "IEND", {});
  return out.data();
}

PngImage decode_png(const std::vector<uint8_t>& bytes) {
  detail::ByteReader r(bytes);
  if (r.remaining() < 8 || std::memcmp(r.raw(8), kSignature, 8) != 0)
    throw IoError(IoCode::BadMagic, "png: bad signature");

  int width = 0, height = 0, src_channels = 0;
  bool saw_ihdr = false, saw_iend = false;
  std::vector<uint8_t> idat;

  while (!r.done() && !saw_iend) {
    uint32_t len = r.u32be();
    std::string type = r.str(4);
    const uint8_t* data = r.raw(len);
    uint32_t stored_crc = r.u32be();

    detail::ByteWriter crc_body;
    crc_body.str(type);
    crc_body.bytes(data, len);
    uint32_t crc = static_cast<uint32_t>(
        crc32(0, crc_body.data().data(), static_cast<uInt>(crc_body.size())));
    if (crc != stored_crc)
      throw IoError(IoCode::CrcMismatch, "png: chunk " + type + " fails its checksum");

    if (type == "IHDR") {
      if (len != 13) throw IoError(IoCode::Malformed, "png: IHDR has wrong length");
      detail::ByteReader h(data, len);
      width = static_cast<int>(h.u32be());
      height = static_cast<int>(h.u32be());
      int depth = h.u8();
      int color = h.u8();
      h.u8();  // compression
      h.u8();  // filter
      int interlace = h.u8();
      if (depth != 8) throw IoError(IoCode::Malformed, "png: only 8-bit depth is supported");
      if (interlace != 0) throw IoError(IoCode::Malformed, "png: interlaced images not supported");
      switch (color) {
        case 0: src_channels = 1; break;
        case 2: src_channels = 3; break;
        case 4: src_channels = 2; break;
        case 6: src_channels = 4; break;
        default: throw IoError(IoCode::Malformed, "png: palette images not supported");
      }
      if (width <= 0 || height <= 0) throw IoError(IoCode::Malformed, "png: empty image");
      saw_ihdr = true;
    } else if (type == "IDAT") {
      if (!saw_ihdr) throw IoError(IoCode::Malformed, "png: IDAT before IHDR");
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      saw_iend = true;
    }
    // other chunk types are ancillary for our purposes and skipped
  }
  if (!saw_ihdr) throw IoError(IoCode::Truncated, "png: missing IHDR");
  if (!saw_iend) throw IoError(IoCode::Truncated, "png: missing IEND");
  if (idat.empty()) throw IoError(IoCode::Truncated, "png: no image data");

  const size_t stride = static_cast<size_t>(width) * src_channels;
  std::vector<uint8_t> raw(static_cast<size_t>(height) * (stride + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  int rc = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
  if (rc != Z_OK || raw_len != raw.size())
    throw IoError(IoCode::Malformed, "png: image data fails to inflate to the expected size");

  // Undo per-row filtering in place (previous row is already reconstructed).
  std::vector<uint8_t> pix(static_cast<size_t>(height) * stride);
  const int bpp = src_channels;
  for (int y = 0; y < height; ++y) {
    uint8_t filter = raw[static_cast<size_t>(y) * (stride + 1)];
    const uint8_t* src = raw.data() + static_cast<size_t>(y) * (stride + 1) + 1;
    uint8_t* dst = pix.data() + static_cast<size_t>(y) * stride;
    const uint8_t* up = y > 0 ? dst - stride : nullptr;
    for (size_t x = 0; x < stride; ++x) {
      int a = x >= static_cast<size_t>(bpp) ? dst[x - bpp] : 0;
      int b = up ? up[x] : 0;
      int c = (up && x >= static_cast<size_t>(bpp)) ? up[x - bpp] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw IoError(IoCode::Malformed, "png: unknown filter type");
      }
      dst[x] = static_cast<uint8_t>(v);
    }
  }

  PngImage out;
  out.height = height;
  out.width = width;
  // Drop any alpha channel; keep gray as gray and color as RGB.
  out.channels = src_channels >= 3 ? 3 : 1;
  out.pixels.resize(static_cast<size_t>(height) * width * out.channels);
  const int keep = out.channels;
  for (size_t p = 0; p < static_cast<size_t>(height) * width; ++p)
    for (int ch = 0; ch < keep; ++ch)
      out.pixels[p * keep + ch] = pix[p * src_channels + ch];
  return out;
}

void write_png(const std::string& path, const PngImage& img, const std::string& comment) {
  detail::write_file(path, encode_png(img, comment));
}

PngImage read_png(const std::string& path) { return decode_png(detail::read_file(path)); }

}  // namespace tabor
