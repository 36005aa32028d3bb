#ifndef SYNSEG_VOLUME_OPS_HPP
#define SYNSEG_VOLUME_OPS_HPP

#include <algorithm>
#include <cmath>

#include "synseg/common.hpp"
#include "synseg/volume.hpp"

namespace synseg {

namespace detail {

// Voxel-center aligned source coordinate for output index i at scale in/out.
inline double src_coord(int i, double scale) { return (static_cast<double>(i) + 0.5) * scale - 0.5; }

inline void check_target(const Vec3i& t) {
  if (t[0] < 1 || t[1] < 1 || t[2] < 1)
    throw InvalidArgument("resample target shape must be >= 1 per axis, got " + shape_str(t));
}

inline Vec3d rescaled_spacing(const Vec3i& in, const Vec3i& out, const Vec3d& spacing) {
  Vec3d s;
  for (int a = 0; a < 3; ++a)
    s[a] = spacing[a] * static_cast<double>(in[a]) / static_cast<double>(out[a]);
  return s;
}

}  // namespace detail

// Trilinear resampling; physical extent is preserved by rescaling spacing.
inline Volume resample_to_shape(const Volume& v, const Vec3i& target) {
  detail::check_target(target);
  Volume out(target);
  out.spacing = detail::rescaled_spacing(v.shape, target, v.spacing);
  out.origin = v.origin;
  out.modality = v.modality;

  const Vec3d scale = {static_cast<double>(v.shape[0]) / target[0],
                       static_cast<double>(v.shape[1]) / target[1],
                       static_cast<double>(v.shape[2]) / target[2]};

  for (int z = 0; z < target[2]; ++z) {
    const double fz = detail::src_coord(z, scale[2]);
    const int z0 = std::clamp(static_cast<int>(std::floor(fz)), 0, v.shape[2] - 1);
    const int z1 = std::min(z0 + 1, v.shape[2] - 1);
    const double wz = std::clamp(fz - z0, 0.0, 1.0);
    for (int y = 0; y < target[1]; ++y) {
      const double fy = detail::src_coord(y, scale[1]);
      const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, v.shape[1] - 1);
      const int y1 = std::min(y0 + 1, v.shape[1] - 1);
      const double wy = std::clamp(fy - y0, 0.0, 1.0);
      for (int x = 0; x < target[0]; ++x) {
        const double fx = detail::src_coord(x, scale[0]);
        const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, v.shape[0] - 1);
        const int x1 = std::min(x0 + 1, v.shape[0] - 1);
        const double wx = std::clamp(fx - x0, 0.0, 1.0);

        const double c00 = v.at(x0, y0, z0) * (1 - wx) + v.at(x1, y0, z0) * wx;
        const double c10 = v.at(x0, y1, z0) * (1 - wx) + v.at(x1, y1, z0) * wx;
        const double c01 = v.at(x0, y0, z1) * (1 - wx) + v.at(x1, y0, z1) * wx;
        const double c11 = v.at(x0, y1, z1) * (1 - wx) + v.at(x1, y1, z1) * wx;
        const double c0 = c00 * (1 - wy) + c10 * wy;
        const double c1 = c01 * (1 - wy) + c11 * wy;
        out.at(x, y, z) = static_cast<float>(c0 * (1 - wz) + c1 * wz);
      }
    }
  }
  return out;
}

// Nearest-neighbor resampling; label set is never enlarged.
inline LabelMask resample_to_shape(const LabelMask& m, const Vec3i& target) {
  detail::check_target(target);
  LabelMask out(target);
  out.spacing = detail::rescaled_spacing(m.shape, target, m.spacing);
  out.origin = m.origin;

  const Vec3d scale = {static_cast<double>(m.shape[0]) / target[0],
                       static_cast<double>(m.shape[1]) / target[1],
                       static_cast<double>(m.shape[2]) / target[2]};
  for (int z = 0; z < target[2]; ++z) {
    const int sz = std::clamp(static_cast<int>(std::lround(detail::src_coord(z, scale[2]))), 0, m.shape[2] - 1);
    for (int y = 0; y < target[1]; ++y) {
      const int sy = std::clamp(static_cast<int>(std::lround(detail::src_coord(y, scale[1]))), 0, m.shape[1] - 1);
      for (int x = 0; x < target[0]; ++x) {
        const int sx = std::clamp(static_cast<int>(std::lround(detail::src_coord(x, scale[0]))), 0, m.shape[0] - 1);
        out.at(x, y, z) = m.at(sx, sy, sz);
      }
    }
  }
  return out;
}

// Per-volume z-score (population std). Constant volumes map to all zeros.
inline Volume normalize_intensity(const Volume& v) {
  if (v.data.empty()) throw InvalidArgument("normalize_intensity on empty volume");
  double sum = 0.0;
  for (float x : v.data) sum += x;
  const double mean = sum / static_cast<double>(v.data.size());
  double ss = 0.0;
  for (float x : v.data) {
    const double d = x - mean;
    ss += d * d;
  }
  const double std_dev = std::sqrt(ss / static_cast<double>(v.data.size()));

  Volume out = v;
  if (std_dev < 1e-8) {
    std::fill(out.data.begin(), out.data.end(), 0.0f);
    return out;
  }
  const double inv = 1.0 / std_dev;
  for (auto& x : out.data) x = static_cast<float>((x - mean) * inv);
  return out;
}

}  // namespace synseg

#endif
