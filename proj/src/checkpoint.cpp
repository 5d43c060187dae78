#include "clasp/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "clasp/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads assume a little-endian host");

namespace clasp {

namespace {

constexpr char kMagic[8] = {'C', 'L', 'S', 'P', 'C', 'K', 'P', 'T'};

}  // namespace

std::uint32_t crc32_ieee(const unsigned char* data, std::size_t n) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k)
        c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i)
    crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

Tensor* CheckpointData::find(const std::string& name) {
  for (auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

const Tensor* CheckpointData::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

Tensor& CheckpointData::require(const std::string& name) {
  Tensor* t = find(name);
  if (!t) throw CheckpointError("checkpoint is missing tensor: " + name);
  return *t;
}

const Tensor& CheckpointData::require(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw CheckpointError("checkpoint is missing tensor: " + name);
  return *t;
}

void save_checkpoint(const CheckpointData& data, const std::string& path) {
  nlohmann::ordered_json manifest;
  manifest["format_version"] = 1;
  manifest["step"] = data.step;
  if (!data.config_json.empty()) {
    try {
      manifest["config"] = nlohmann::json::parse(data.config_json);
    } catch (const std::exception&) {
      throw CheckpointError("config snapshot is not valid JSON");
    }
  }
  manifest["tensors"] = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : data.tensors) {
    const std::uint64_t bytes = tensor.size() * sizeof(double);
    nlohmann::ordered_json tj;
    tj["name"] = name;
    tj["shape"] = tensor.shape;
    tj["dtype"] = "f64";
    tj["offset"] = offset;
    tj["bytes"] = bytes;
    tj["crc32"] = crc32_ieee(
        reinterpret_cast<const unsigned char*>(tensor.ptr()), bytes);
    manifest["tensors"].push_back(std::move(tj));
    offset += bytes;
  }
  const std::string mtext = manifest.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open for write: " + tmp);
    out.write(kMagic, sizeof kMagic);
    const std::uint64_t mlen = mtext.size();
    out.write(reinterpret_cast<const char*>(&mlen), sizeof mlen);
    out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
    for (const auto& [name, tensor] : data.tensors)
      out.write(reinterpret_cast<const char*>(tensor.ptr()),
                static_cast<std::streamsize>(tensor.size() * sizeof(double)));
    out.flush();
    if (!out) throw CheckpointError("short write on checkpoint: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw CheckpointError("cannot move checkpoint into place: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);

  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw CheckpointError("not a checkpoint file: " + path);

  std::uint64_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), sizeof mlen);
  if (!in || mlen == 0 || mlen > (1ull << 30))
    throw CheckpointError("corrupt manifest length in: " + path);
  std::string mtext(mlen, '\0');
  in.read(mtext.data(), static_cast<std::streamsize>(mlen));
  if (!in) throw CheckpointError("truncated manifest in: " + path);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mtext);
  } catch (const std::exception& e) {
    throw CheckpointError("manifest is not valid JSON: " + std::string(e.what()));
  }

  CheckpointData data;
  data.step = manifest.value("step", 0L);
  if (manifest.contains("config")) data.config_json = manifest["config"].dump();

  const std::streampos payload_base = in.tellg();
  for (const auto& tj : manifest.at("tensors")) {
    const std::string name = tj.at("name").get<std::string>();
    const auto shape = tj.at("shape").get<std::vector<std::size_t>>();
    const std::string dtype = tj.value("dtype", "f64");
    const auto offset = tj.at("offset").get<std::uint64_t>();
    const auto bytes = tj.at("bytes").get<std::uint64_t>();
    const auto want_crc = tj.at("crc32").get<std::uint32_t>();

    std::size_t count = 1;
    for (const std::size_t d : shape) count *= d;
    const std::size_t unit = dtype == "f64" ? 8 : dtype == "f32" ? 4 : 0;
    if (unit == 0)
      throw CheckpointError("tensor " + name + ": unsupported dtype " + dtype);
    if (bytes != count * unit)
      throw CheckpointError("tensor " + name + ": byte count does not match shape");

    std::vector<unsigned char> raw(bytes);
    in.seekg(payload_base + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(raw.data()),
            static_cast<std::streamsize>(bytes));
    if (!in) throw CheckpointError("tensor " + name + ": truncated payload");
    if (crc32_ieee(raw.data(), raw.size()) != want_crc)
      throw CheckpointError("tensor " + name + ": checksum mismatch");

    Tensor t(shape);
    if (dtype == "f64") {
      std::memcpy(t.ptr(), raw.data(), bytes);
    } else {
      const float* src = reinterpret_cast<const float*>(raw.data());
      for (std::size_t i = 0; i < count; ++i) t.at(i) = src[i];
    }
    data.tensors.emplace_back(name, std::move(t));
  }
  return data;
}

}  // namespace clasp
