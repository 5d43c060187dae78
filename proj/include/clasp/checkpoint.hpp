#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "clasp/tensor.hpp"

namespace clasp {

// On-disk layout: 8-byte magic, u64 manifest length, manifest JSON, then the
// raw little-endian payloads at the offsets the manifest declares. Every
// tensor carries a CRC-32 that is verified before anything is copied out.
// Payloads are written as f64 (the working precision); f32 payloads are
// accepted on read for interoperability.
struct CheckpointData {
  long step = 0;
  std::string config_json;  // opaque snapshot of the run configuration
  std::vector<std::pair<std::string, Tensor>> tensors;

  Tensor* find(const std::string& name);
  const Tensor* find(const std::string& name) const;
  Tensor& require(const std::string& name);
  const Tensor& require(const std::string& name) const;
};

// Atomic: writes a sibling temp file and renames it into place.
void save_checkpoint(const CheckpointData& data, const std::string& path);
CheckpointData load_checkpoint(const std::string& path);

std::uint32_t crc32_ieee(const unsigned char* data, std::size_t n);

}  // namespace clasp
