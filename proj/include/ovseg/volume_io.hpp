#pragma once

// Label-volume file formats.
//
//   raw:  <name>.lbl   little-endian u32 voxels, z-major then y then x
//         <name>.json  {"dims":[Z,Y,X],"dtype":"u32","anisotropy":[az,ay,ax]}
//   tiff: one page per z-layer, 8/16/32-bit unsigned samples. Anisotropy is
//         round-tripped through a JSON ImageDescription when present.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovseg/error.hpp"
#include "ovseg/tiff.hpp"
#include "ovseg/volume.hpp"

namespace ovseg {

enum class VolumeFormat { Auto, Raw, Tiff };

namespace io {

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

inline std::string read_text(const std::filesystem::path& path) {
  const auto b = read_bytes(path);
  return std::string(b.begin(), b.end());
}

inline void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline VolumeFormat resolve_format(const std::filesystem::path& path, VolumeFormat hint) {
  if (hint != VolumeFormat::Auto) return hint;
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".tif" || ext == ".tiff") return VolumeFormat::Tiff;
  return VolumeFormat::Raw;
}

/// Both halves of a raw volume, whichever of them the caller named.
inline std::pair<std::filesystem::path, std::filesystem::path> raw_pair(
    const std::filesystem::path& path) {
  auto stem = path;
  if (stem.extension() == ".lbl" || stem.extension() == ".json") stem.replace_extension();
  auto lbl = stem;
  lbl += ".lbl";
  auto json = stem;
  json += ".json";
  return {lbl, json};
}

inline nlohmann::json anisotropy_json(const Anisotropy& a) { return {a.z, a.y, a.x}; }

inline Anisotropy anisotropy_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw FormatError("anisotropy must be a 3-element array");
  for (const auto& v : j) {
    if (!v.is_number()) throw FormatError("anisotropy entries must be numbers");
  }
  Anisotropy a{j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
  if (!(a.z > 0 && a.y > 0 && a.x > 0)) throw FormatError("anisotropy must be strictly positive");
  return a;
}

}  // namespace io

inline LabelVolume load_volume(const std::filesystem::path& path,
                               VolumeFormat hint = VolumeFormat::Auto,
                               Anisotropy default_anisotropy = {}) {
  if (io::resolve_format(path, hint) == VolumeFormat::Tiff) {
    auto stack = tiff::decode(io::read_bytes(path));
    Anisotropy aniso = default_anisotropy;
    if (!stack.description.empty()) {
      auto meta = nlohmann::json::parse(stack.description, nullptr, false);
      if (!meta.is_discarded() && meta.is_object() && meta.contains("anisotropy")) {
        aniso = io::anisotropy_from_json(meta["anisotropy"]);
      }
    }
    return LabelVolume(stack.dims, std::move(stack.data), aniso);
  }

  const auto [lbl, json_path] = io::raw_pair(path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(io::read_text(json_path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt volume header " + json_path.string() + ": " + e.what());
  }
  if (!header.is_object() || !header.contains("dims") || !header["dims"].is_array() ||
      header["dims"].size() != 3) {
    throw FormatError("volume header needs \"dims\": [Z, Y, X]");
  }
  Dims dims;
  try {
    dims = Dims{header["dims"][0].get<std::size_t>(), header["dims"][1].get<std::size_t>(),
                header["dims"][2].get<std::size_t>()};
  } catch (const nlohmann::json::exception&) {
    throw FormatError("volume dims must be non-negative integers");
  }
  const std::string dtype = header.value("dtype", std::string("u32"));
  if (dtype != "u32") throw FormatError("unsupported sample type \"" + dtype + "\"");
  const Anisotropy aniso = header.contains("anisotropy")
                               ? io::anisotropy_from_json(header["anisotropy"])
                               : default_anisotropy;

  const auto bytes = io::read_bytes(lbl);
  if (bytes.size() % 4 != 0 || bytes.size() / 4 != dims.voxels()) {
    throw FormatError("payload holds " + std::to_string(bytes.size() / 4) + " values but dims " +
                      "require " + std::to_string(dims.voxels()));
  }
  std::vector<Label> data(dims.voxels());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::uint8_t* p = bytes.data() + 4 * i;
    data[i] = static_cast<Label>(p[0]) | (static_cast<Label>(p[1]) << 8) |
              (static_cast<Label>(p[2]) << 16) | (static_cast<Label>(p[3]) << 24);
  }
  return LabelVolume(dims, std::move(data), aniso);
}

/// Header written alongside a raw volume; `extra` keys are merged in.
inline nlohmann::json volume_header(const LabelVolume& v, const nlohmann::json& extra = {}) {
  nlohmann::json h = {{"dims", {v.dims().z, v.dims().y, v.dims().x}},
                      {"dtype", "u32"},
                      {"anisotropy", io::anisotropy_json(v.anisotropy())}};
  if (extra.is_object()) h.update(extra);
  return h;
}

inline void write_volume(const LabelVolume& volume, const std::filesystem::path& path,
                         VolumeFormat hint = VolumeFormat::Auto,
                         const nlohmann::json& extra_header = {}) {
  if (io::resolve_format(path, hint) == VolumeFormat::Tiff) {
    nlohmann::json desc = {{"anisotropy", io::anisotropy_json(volume.anisotropy())}};
    io::write_bytes(path, tiff::encode(volume.dims(), volume.data(), desc.dump()));
    return;
  }
  const auto [lbl, json_path] = io::raw_pair(path);
  std::vector<std::uint8_t> bytes;
  bytes.reserve(volume.data().size() * 4);
  for (Label v : volume.data()) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  io::write_bytes(lbl, bytes);
  io::write_text(json_path, volume_header(volume, extra_header).dump(2) + "\n");
}

}  // namespace ovseg
