#pragma once

// Single-file checkpoint container.
//
// Layout (little-endian):
//   "AGPICKPT"            8-byte magic
//   u32 version
//   u32 entry count
//   per entry:
//     u8  kind            0 = tensor, 1 = text
//     u32 name length, name bytes
//     tensor: u32 rank, i64 dims[rank], f64 values[prod(dims)]
//     text:   u64 length, bytes
//   u64 FNV-1a hash of every preceding byte
//
// Entries are written in name order, so identical contents give identical
// bytes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "agpi/tensor.hpp"

namespace agpi {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointFile {
  std::uint32_t version = kCheckpointVersion;
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> texts;

  // Entries under "prefix." with the prefix stripped.
  std::map<std::string, Tensor> tensors_under(const std::string& prefix) const;
  void put_tensors(const std::string& prefix, const std::map<std::string, Tensor>& values);
};

std::string serialize_checkpoint(const CheckpointFile& file);
CheckpointFile parse_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file);
// Throws CheckpointError on truncation, corruption or version mismatch.
CheckpointFile read_checkpoint(const std::filesystem::path& path);

}  // namespace agpi
