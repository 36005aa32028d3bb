#ifndef SYNSEG_RAW3D_HPP
#define SYNSEG_RAW3D_HPP

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "synseg/common.hpp"
#include "synseg/volume.hpp"

// RAW3D: little-endian float32, C order with z slowest (x contiguous), in a
// `name.raw3d` file next to a `name.raw3d.json` sidecar carrying
// {shape:[x,y,z], spacing:[sx,sy,sz], origin:[ox,oy,oz], kind:"volume"|"mask"}.

namespace synseg {

namespace detail {

inline void write_file_bytes(const std::string& path, const void* data, std::size_t n) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IOFailure("cannot open for writing: " + path);
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!f) throw IOFailure("short write: " + path);
}

inline std::vector<char> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw UnreadableFile("cannot open: " + path);
  const auto n = static_cast<std::size_t>(f.tellg());
  f.seekg(0);
  std::vector<char> buf(n);
  if (n > 0) f.read(buf.data(), static_cast<std::streamsize>(n));
  if (!f) throw UnreadableFile("short read: " + path);
  return buf;
}

inline bool is_little_endian() {
  const std::uint16_t v = 1;
  unsigned char b;
  std::memcpy(&b, &v, 1);
  return b == 1;
}

inline void byteswap32_buffer(void* data, std::size_t count) {
  auto* p = static_cast<unsigned char*>(data);
  for (std::size_t i = 0; i < count; ++i, p += 4) {
    std::swap(p[0], p[3]);
    std::swap(p[1], p[2]);
  }
}

}  // namespace detail

struct Raw3dHeader {
  Vec3i shape;
  Vec3d spacing;
  Vec3d origin;
  std::string kind;  // "volume" or "mask"
};

inline std::string raw3d_sidecar_path(const std::string& raw_path) { return raw_path + ".json"; }

inline Raw3dHeader read_raw3d_header(const std::string& raw_path) {
  const std::string side = raw3d_sidecar_path(raw_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file_bytes(side));
  } catch (const nlohmann::json::exception& e) {
    throw UnreadableFile("bad RAW3D sidecar " + side + ": " + e.what());
  }
  Raw3dHeader h;
  try {
    for (int a = 0; a < 3; ++a) {
      h.shape[a] = j.at("shape").at(a).get<int>();
      h.spacing[a] = j.at("spacing").at(a).get<double>();
      h.origin[a] = j.at("origin").at(a).get<double>();
    }
    h.kind = j.at("kind").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw UnreadableFile("bad RAW3D sidecar " + side + ": " + e.what());
  }
  if (h.kind != "volume" && h.kind != "mask")
    throw UnreadableFile("RAW3D sidecar kind must be volume|mask, got " + h.kind);
  return h;
}

inline std::vector<float> read_raw3d_data(const std::string& raw_path, const Vec3i& shape) {
  auto bytes = detail::read_file_bytes(raw_path);
  const auto expected = static_cast<std::size_t>(volume_of(shape)) * 4;
  if (bytes.size() != expected)
    throw UnreadableFile(raw_path + ": expected " + std::to_string(expected) + " bytes, got " +
                         std::to_string(bytes.size()));
  std::vector<float> out(bytes.size() / 4);
  if (!detail::is_little_endian()) detail::byteswap32_buffer(bytes.data(), out.size());
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

inline Volume read_raw3d_volume(const std::string& raw_path) {
  const Raw3dHeader h = read_raw3d_header(raw_path);
  Volume v;
  v.shape = h.shape;
  v.spacing = h.spacing;
  v.origin = h.origin;
  v.data = read_raw3d_data(raw_path, h.shape);
  v.validate();
  return v;
}

// binarize: threshold values > 0.5 to 1; otherwise values must be exactly 0 or 1.
inline LabelMask read_raw3d_mask(const std::string& raw_path, bool binarize = false) {
  const Raw3dHeader h = read_raw3d_header(raw_path);
  const auto raw = read_raw3d_data(raw_path, h.shape);
  LabelMask m;
  m.shape = h.shape;
  m.spacing = h.spacing;
  m.origin = h.origin;
  m.data.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const float x = raw[i];
    if (!std::isfinite(x)) throw UnreadableFile(raw_path + ": mask contains NaN/Inf");
    if (binarize) {
      m.data[i] = x > 0.5f ? 1 : 0;
    } else {
      if (x == 0.0f)
        m.data[i] = 0;
      else if (x == 1.0f)
        m.data[i] = 1;
      else
        throw NonBinaryLabels(raw_path + ": mask value " + std::to_string(x) + " outside {0,1}");
    }
  }
  return m;
}

namespace detail {

inline void write_raw3d_impl(const std::string& raw_path, const Vec3i& shape, const Vec3d& spacing,
                             const Vec3d& origin, const std::string& kind, const float* data) {
  const auto n = static_cast<std::size_t>(volume_of(shape));
  if (is_little_endian()) {
    write_file_bytes(raw_path, data, n * 4);
  } else {
    std::vector<float> tmp(data, data + n);
    byteswap32_buffer(tmp.data(), n);
    write_file_bytes(raw_path, tmp.data(), n * 4);
  }
  nlohmann::json j;
  j["shape"] = {shape[0], shape[1], shape[2]};
  j["spacing"] = {spacing[0], spacing[1], spacing[2]};
  j["origin"] = {origin[0], origin[1], origin[2]};
  j["kind"] = kind;
  const std::string text = j.dump(2) + "\n";
  write_file_bytes(raw3d_sidecar_path(raw_path), text.data(), text.size());
}

}  // namespace detail

inline void write_raw3d(const std::string& raw_path, const Volume& v) {
  detail::write_raw3d_impl(raw_path, v.shape, v.spacing, v.origin, "volume", v.data.data());
}

inline void write_raw3d(const std::string& raw_path, const LabelMask& m) {
  std::vector<float> tmp(m.data.size());
  for (std::size_t i = 0; i < tmp.size(); ++i) tmp[i] = static_cast<float>(m.data[i]);
  detail::write_raw3d_impl(raw_path, m.shape, m.spacing, m.origin, "mask", tmp.data());
}

}  // namespace synseg

#endif
