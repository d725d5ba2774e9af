#include "tabor/model_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <cstring>

#include "bytes.hpp"

namespace tabor {
namespace {

constexpr char kMagic[4] = {'T', 'B', 'R', 'M'};
constexpr uint32_t kVersion = 1;

int64_t dims_count(const std::vector<int>& dims) {
  int64_t n = 1;
  for (int d : dims) n *= d;
  return n;
}

const NamedTensor* find(const std::vector<NamedTensor>& entries, const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

const NamedTensor* find_prefix(const std::vector<NamedTensor>& entries, const std::string& prefix) {
  for (const auto& e : entries)
    if (e.name.rfind(prefix, 0) == 0) return &e;
  return nullptr;
}

}  // namespace

void write_tensor_archive(const std::string& path, const std::vector<NamedTensor>& entries) {
  detail::ByteWriter w;
  w.bytes(reinterpret_cast<const uint8_t*>(kMagic), 4);
  w.u32(kVersion);
  w.u32(static_cast<uint32_t>(entries.size()));
  for (const NamedTensor& e : entries) {
    require(e.name.size() <= 0xffff, "archive: entry name too long");
    require(e.dims.size() <= 0xff, "archive: entry rank too large");
    require(static_cast<int64_t>(e.data.size()) == dims_count(e.dims),
            "archive: entry '" + e.name + "' data does not fill its dims");
    w.u16(static_cast<uint16_t>(e.name.size()));
    w.str(e.name);
    w.u8(static_cast<uint8_t>(e.dims.size()));
    for (int d : e.dims) {
      require(d > 0, "archive: entry '" + e.name + "' has a non-positive dim");
      w.u32(static_cast<uint32_t>(d));
    }
    for (float v : e.data) w.f32(v);
  }
  uint32_t crc = static_cast<uint32_t>(crc32(0, w.data().data(), static_cast<uInt>(w.size())));
  w.u32(crc);
  detail::write_file(path, w.data());
}

std::vector<NamedTensor> read_tensor_archive(const std::string& path) {
  std::vector<uint8_t> bytes = detail::read_file(path);
  detail::ByteReader r(bytes);

  if (r.remaining() < 4 || std::memcmp(r.raw(4), kMagic, 4) != 0)
    throw IoError(IoCode::BadMagic, "archive: '" + path + "' is not a TBRM archive");
  uint32_t version = r.u32();
  if (version != kVersion)
    throw IoError(IoCode::VersionMismatch, "archive: '" + path + "' has version " +
                                               std::to_string(version) + ", expected " +
                                               std::to_string(kVersion));
  if (bytes.size() < 4 + 4 + 4 + 4)
    throw IoError(IoCode::Truncated, "archive: '" + path + "' is shorter than its framing");
  uint32_t actual =
      static_cast<uint32_t>(crc32(0, bytes.data(), static_cast<uInt>(bytes.size() - 4)));
  uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<uint32_t>(bytes[bytes.size() - 4 + i]) << (8 * i);

  uint32_t count = r.u32();
  std::vector<NamedTensor> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    NamedTensor e;
    uint16_t name_len = r.u16();
    e.name = r.str(name_len);
    uint8_t rank = r.u8();
    e.dims.resize(rank);
    for (uint8_t d = 0; d < rank; ++d) {
      uint32_t v = r.u32();
      if (v == 0 || v > 0x7fffffff)
        throw IoError(IoCode::Malformed, "archive: entry '" + e.name + "' has a bad dim");
      e.dims[d] = static_cast<int>(v);
    }
    int64_t n = dims_count(e.dims);
    if (static_cast<size_t>(n) * 4 > r.remaining())
      throw IoError(IoCode::Truncated, "archive: '" + path + "' ends inside entry '" + e.name + "'");
    e.data.resize(static_cast<size_t>(n));
    for (auto& v : e.data) v = r.f32();
    entries.push_back(std::move(e));
  }
  if (r.remaining() != 4)
    throw IoError(IoCode::Malformed, "archive: trailing bytes after the last entry");
  if (stored != actual)
    throw IoError(IoCode::CrcMismatch, "archive: '" + path + "' fails its checksum");
  return entries;
}

namespace {

// Seeds are wider than a float mantissa, so they travel as four u16 chunks.
std::vector<float> seed_chunks(uint64_t seed) {
  std::vector<float> out(4);
  for (int i = 0; i < 4; ++i) out[static_cast<size_t>(i)] =
      static_cast<float>((seed >> (16 * i)) & 0xffff);
  return out;
}

uint64_t seed_from_chunks(const std::vector<float>& chunks) {
  uint64_t seed = 0;
  for (int i = 0; i < 4 && i < static_cast<int>(chunks.size()); ++i)
    seed |= static_cast<uint64_t>(static_cast<uint16_t>(chunks[static_cast<size_t>(i)])) << (16 * i);
  return seed;
}

}  // namespace

void save_model(const Network& net, const std::string& path, const std::string& config) {
  net.arch.validate();
  std::vector<NamedTensor> entries;
  entries.push_back({"meta/kind:model", {}, {0.0f}});
  entries.push_back({"meta/geometry",
                     {4},
                     {static_cast<float>(net.arch.height), static_cast<float>(net.arch.width),
                      static_cast<float>(net.arch.channels),
                      static_cast<float>(net.arch.num_classes)}});
  entries.push_back({"meta/arch:" + net.arch.describe(), {}, {0.0f}});
  entries.push_back({"meta/train",
                     {2},
                     {static_cast<float>(net.meta.epochs_trained),
                      static_cast<float>(net.meta.final_accuracy)}});
  entries.push_back({"meta/seed", {4}, seed_chunks(net.meta.seed)});
  if (!config.empty()) entries.push_back({"meta/config:" + config, {}, {0.0f}});

  std::vector<ParamShape> shapes = net.arch.param_shapes();
  require(shapes.size() == net.weights.size(), "save_model: weight list out of step");
  for (size_t i = 0; i < shapes.size(); ++i) {
    require(net.weights[i].shape() == shapes[i].shape,
            "save_model: weight '" + shapes[i].name + "' has shape " +
                shape_str(net.weights[i].shape()) + ", architecture expects " +
                shape_str(shapes[i].shape));
    entries.push_back({shapes[i].name, shapes[i].shape, net.weights[i].values()});
  }
  write_tensor_archive(path, entries);
}

Network load_model(const std::string& path) {
  std::vector<NamedTensor> entries = read_tensor_archive(path);
  if (!find(entries, "meta/kind:model"))
    throw IoError(IoCode::Malformed, "model: '" + path + "' is not a model archive");
  const NamedTensor* geo = find(entries, "meta/geometry");
  const NamedTensor* arch_entry = find_prefix(entries, "meta/arch:");
  if (!geo || geo->data.size() != 4 || !arch_entry)
    throw IoError(IoCode::Malformed, "model: '" + path + "' is missing its geometry or layer list");

  Architecture arch;
  try {
    arch = Architecture::parse(arch_entry->name.substr(std::strlen("meta/arch:")),
                               static_cast<int>(geo->data[0]), static_cast<int>(geo->data[1]),
                               static_cast<int>(geo->data[2]), static_cast<int>(geo->data[3]));
  } catch (const Error& e) {
    throw IoError(IoCode::Malformed, "model: '" + path + "': " + e.what());
  }

  Network net;
  net.arch = arch;
  for (const ParamShape& p : arch.param_shapes()) {
    const NamedTensor* e = find(entries, p.name);
    if (!e)
      throw IoError(IoCode::Malformed, "model: '" + path + "' is missing weight '" + p.name + "'");
    if (e->dims != p.shape)
      throw IoError(IoCode::Malformed, "model: weight '" + p.name + "' has dims " +
                                           shape_str(e->dims) + ", architecture expects " +
                                           shape_str(p.shape));
    net.weights.emplace_back(e->dims, e->data);
  }

  if (const NamedTensor* t = find(entries, "meta/train"); t && t->data.size() == 2) {
    net.meta.epochs_trained = static_cast<int>(t->data[0]);
    net.meta.final_accuracy = t->data[1];
  }
  if (const NamedTensor* s = find(entries, "meta/seed"); s && s->data.size() == 4)
    net.meta.seed = seed_from_chunks(s->data);
  return net;
}

std::string archive_config(const std::string& path) {
  std::vector<NamedTensor> entries = read_tensor_archive(path);
  if (const NamedTensor* e = find_prefix(entries, "meta/config:"))
    return e->name.substr(std::strlen("meta/config:"));
  return "";
}

std::string file_crc32_hex(const std::string& path) {
  std::vector<uint8_t> bytes = detail::read_file(path);
  uint32_t crc = static_cast<uint32_t>(
      ::crc32(0L, bytes.empty() ? Z_NULL : bytes.data(), static_cast<uInt>(bytes.size())));
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", crc);
  return buf;
}

std::string artifact_crc32_hex(const std::string& path) {
  std::vector<uint8_t> bytes = detail::read_file(path);
  if (bytes.size() < 4)
    throw IoError(IoCode::Truncated,
                  "artifact: '" + path + "' is shorter than its checksum trailer");
  uint32_t crc =
      static_cast<uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size() - 4)));
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", crc);
  return buf;
}

}  // namespace tabor
