#ifndef SYNSEG_SAMPLING_HPP
#define SYNSEG_SAMPLING_HPP

#include <algorithm>
#include <vector>

#include "synseg/common.hpp"
#include "synseg/rng.hpp"
#include "synseg/tensor.hpp"
#include "synseg/volume.hpp"

namespace synseg {

// Reflected (mirror, no edge duplication) index for out-of-range access.
inline int mirror_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

// One training case: intensity-normalized channels, mask, cached foreground
// voxel list for the biased sampler.
struct TrainCase {
  std::string id;
  std::vector<Volume> channels;  // channel 0 is the image; cascades append a prior
  LabelMask mask;
  std::vector<std::size_t> fg_voxels;

  void rebuild_fg_cache() {
    fg_voxels.clear();
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask.data[i]) fg_voxels.push_back(i);
  }
};

struct PatchSample {
  Tensor5<float> input;   // (1, C, z, y, x)
  Tensor5<float> target;  // (1, 1, z, y, x)
  bool fg_centered = false;
};

namespace detail {

inline float sample_mirrored(const Volume& v, int x, int y, int z) {
  return v.at(mirror_index(x, v.shape[0]), mirror_index(y, v.shape[1]), mirror_index(z, v.shape[2]));
}

inline std::uint8_t sample_mirrored(const LabelMask& m, int x, int y, int z) {
  return m.at(mirror_index(x, m.shape[0]), mirror_index(y, m.shape[1]), mirror_index(z, m.shape[2]));
}

}  // namespace detail

// 50% of samples are centered on a uniformly drawn foreground voxel, the rest
// uniform over valid positions; volumes smaller than the patch are reflected.
inline PatchSample sample_patch(const TrainCase& c, const Vec3i& patch, Rng& rng) {
  const Vec3i shape = c.mask.shape;
  PatchSample s;

  Vec3i start;
  const bool want_fg = !c.fg_voxels.empty() && rng.uniform() < 0.5;
  s.fg_centered = want_fg;
  if (want_fg) {
    const std::size_t pick = c.fg_voxels[static_cast<std::size_t>(rng.uniform_below(c.fg_voxels.size()))];
    const int fx = static_cast<int>(pick % shape[0]);
    const int fy = static_cast<int>((pick / shape[0]) % shape[1]);
    const int fz = static_cast<int>(pick / (static_cast<std::size_t>(shape[0]) * shape[1]));
    const Vec3i center{fx, fy, fz};
    for (int a = 0; a < 3; ++a)
      start[a] = std::clamp(center[a] - patch[a] / 2, std::min(0, shape[a] - patch[a]),
                            std::max(0, shape[a] - patch[a]));
  } else {
    for (int a = 0; a < 3; ++a) {
      const int span = shape[a] - patch[a];
      start[a] = span > 0 ? static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(span) + 1))
                          : std::min(0, span) / 2;
    }
  }

  const int C = static_cast<int>(c.channels.size());
  s.input.resize(1, C, patch[2], patch[1], patch[0]);
  s.target.resize(1, 1, patch[2], patch[1], patch[0]);
  for (int ch = 0; ch < C; ++ch) {
    float* dst = s.input.plane(0, ch);
    const Volume& vol = c.channels[static_cast<std::size_t>(ch)];
    for (int z = 0; z < patch[2]; ++z)
      for (int y = 0; y < patch[1]; ++y)
        for (int x = 0; x < patch[0]; ++x)
          *dst++ = detail::sample_mirrored(vol, start[0] + x, start[1] + y, start[2] + z);
  }
  float* tdst = s.target.plane(0, 0);
  for (int z = 0; z < patch[2]; ++z)
    for (int y = 0; y < patch[1]; ++y)
      for (int x = 0; x < patch[0]; ++x)
        *tdst++ = static_cast<float>(
            detail::sample_mirrored(c.mask, start[0] + x, start[1] + y, start[2] + z));
  return s;
}

}  // namespace synseg

#endif
