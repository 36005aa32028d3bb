#ifndef SYNSEG_VOLUME_HPP
#define SYNSEG_VOLUME_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "synseg/common.hpp"

namespace synseg {

// Dense 3D scalar grid, float32, x fastest in memory:
// index = x + nx * (y + ny * z).
struct Volume {
  Vec3i shape{0, 0, 0};
  Vec3d spacing{1.0, 1.0, 1.0};
  Vec3d origin{0.0, 0.0, 0.0};
  std::string modality;
  std::vector<float> data;

  Volume() = default;
  Volume(Vec3i s, float fill = 0.0f) : shape(s), data(static_cast<std::size_t>(volume_of(s)), fill) {}

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(shape[0]) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(shape[1]) * z);
  }
  float& at(int x, int y, int z) { return data[index(x, y, z)]; }
  float at(int x, int y, int z) const { return data[index(x, y, z)]; }
  std::size_t size() const { return data.size(); }

  void validate() const {
    if (shape[0] < 1 || shape[1] < 1 || shape[2] < 1)
      throw UnreadableFile("volume has a degenerate dimension " + shape_str(shape));
    if (spacing[0] <= 0 || spacing[1] <= 0 || spacing[2] <= 0)
      throw UnreadableFile("volume has non-positive spacing");
    if (data.size() != static_cast<std::size_t>(volume_of(shape)))
      throw UnreadableFile("volume data size does not match shape");
    for (float v : data)
      if (!std::isfinite(v)) throw UnreadableFile("volume contains NaN/Inf voxels");
  }
};

// Binary label grid aligned with its paired Volume. Values are {0, 1}.
struct LabelMask {
  Vec3i shape{0, 0, 0};
  Vec3d spacing{1.0, 1.0, 1.0};
  Vec3d origin{0.0, 0.0, 0.0};
  std::vector<std::uint8_t> data;

  LabelMask() = default;
  LabelMask(Vec3i s, std::uint8_t fill = 0) : shape(s), data(static_cast<std::size_t>(volume_of(s)), fill) {}

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(shape[0]) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(shape[1]) * z);
  }
  std::uint8_t& at(int x, int y, int z) { return data[index(x, y, z)]; }
  std::uint8_t at(int x, int y, int z) const { return data[index(x, y, z)]; }
  std::size_t size() const { return data.size(); }

  std::size_t foreground_count() const {
    std::size_t n = 0;
    for (auto v : data) n += v;
    return n;
  }

  void validate_against(const Volume& v) const {
    if (shape != v.shape)
      throw ShapeMismatch("mask shape " + shape_str(shape) + " != volume shape " + shape_str(v.shape));
    for (auto lv : data)
      if (lv > 1) throw NonBinaryLabels("mask contains label value " + std::to_string(lv));
  }
};

}  // namespace synseg

#endif
