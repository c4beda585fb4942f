#pragma once

#include "choi/numerics/params.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

namespace choi {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void append_f32_le(std::string& out, float f) {
  std::uint32_t u = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xffu));
}

inline float read_f32_le(const unsigned char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(u);
}

/// Manifest {name -> {shape, offset}} plus a flat little-endian float32 blob.
/// Offsets count floats, not bytes.
inline void save_checkpoint(const ParamStore& store, const std::string& manifest_path, const std::string& blob_path,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json manifest;
  manifest["format"] = "choi-checkpoint";
  manifest["version"] = 1;
  manifest["blob"] = std::filesystem::path(blob_path).filename().string();
  manifest["extra"] = extra;
  nlohmann::json blocks = nlohmann::json::object();
  std::string blob;
  std::size_t offset = 0;
  for (const auto& e : store.entries()) {
    blocks[e.name] = {{"shape", e.param->value.shape()}, {"offset", offset}};
    for (double v : e.param->value.values()) append_f32_le(blob, static_cast<float>(v));
    offset += e.param->value.size();
  }
  manifest["params"] = blocks;
  manifest["count"] = offset;
  std::ofstream mf(manifest_path);
  if (!mf) throw FormatError("cannot write " + manifest_path);
  mf << manifest.dump(1) << '\n';
  std::ofstream bf(blob_path, std::ios::binary);
  if (!bf) throw FormatError("cannot write " + blob_path);
  bf.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

inline nlohmann::json load_checkpoint(ParamStore& store, const std::string& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw FormatError("cannot read " + manifest_path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(manifest_path + ": " + ex.what());
  }
  if (manifest.value("format", "") != "choi-checkpoint" || manifest.value("version", 0) != 1)
    throw FormatError(manifest_path + ": not a version-1 checkpoint manifest");
  const auto blob_path = std::filesystem::path(manifest_path).parent_path() / manifest.at("blob").get<std::string>();
  std::ifstream bf(blob_path, std::ios::binary);
  if (!bf) throw FormatError("cannot read " + blob_path.string());
  std::string blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
  const auto count = manifest.at("count").get<std::size_t>();
  if (blob.size() != count * 4) throw FormatError(blob_path.string() + ": blob size does not match manifest");
  const auto& blocks = manifest.at("params");
  for (const auto& e : store.entries()) {
    if (!blocks.contains(e.name)) throw FormatError(manifest_path + ": missing parameter '" + e.name + "'");
    const auto& b = blocks.at(e.name);
    if (b.at("shape").get<Shape>() != e.param->value.shape())
      throw FormatError(manifest_path + ": shape mismatch for '" + e.name + "'");
    const auto off = b.at("offset").get<std::size_t>();
    if (off + e.param->value.size() > count) throw FormatError(manifest_path + ": offset out of range for " + e.name);
    const auto* p = reinterpret_cast<const unsigned char*>(blob.data()) + off * 4;
    for (std::size_t i = 0; i < e.param->value.size(); ++i) e.param->value[i] = read_f32_le(p + 4 * i);
    e.param->zero_grad();
  }
  return manifest.value("extra", nlohmann::json::object());
}

}  // namespace choi
