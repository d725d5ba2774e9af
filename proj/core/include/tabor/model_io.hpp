#pragma once

#include <string>
#include <vector>

#include "tabor/network.hpp"

namespace tabor {

// One entry of a TBRM tensor archive.  Rank 0 means a single scalar; string
// payloads ride in the entry name (the format carries no other text).
struct NamedTensor {
  std::string name;
  std::vector<int> dims;
  std::vector<float> data;
};

// Generic container: magic "TBRM", little-endian u32 version and entry
// count, then per entry a u16-length name, u8 rank, u32 dims and f32 data,
// closed by a CRC32 trailer over everything before it.
void write_tensor_archive(const std::string& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> read_tensor_archive(const std::string& path);

// Model archives add a fixed entry layout on top: geometry, architecture
// description, training metadata and one entry per weight tensor.  `config`
// is an arbitrary provenance string (the CLI stores its invocation) embedded
// verbatim in the archive.
void save_model(const Network& net, const std::string& path, const std::string& config = "");
Network load_model(const std::string& path);

// The provenance string of an archive (model or candidate), empty if none.
std::string archive_config(const std::string& path);

// CRC32 of a whole file as lowercase hex.  Not an identity for TBRM/TBRD
// artifacts: those end in a CRC32 trailer of their own payload, and a CRC
// over a message with its checksum appended collapses to the fixed residue
// 2144df1c for every valid file.
std::string file_crc32_hex(const std::string& path);

// CRC32 of everything before the four-byte checksum trailer, as lowercase
// hex.  This is the digest the artifact itself carries, so it distinguishes
// files by content; reports and trigger manifests use it to tie themselves
// to the exact model bytes they were produced from.
std::string artifact_crc32_hex(const std::string& path);

}  // namespace tabor
