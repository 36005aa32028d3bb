#ifndef SYNSEG_MORPHOLOGY_HPP
#define SYNSEG_MORPHOLOGY_HPP

#include <cstdint>
#include <queue>
#include <vector>

#include "synseg/volume.hpp"

namespace synseg {

// 6-connected component labels for foreground voxels; -1 marks background.
// Returns the number of components; sizes (when given) receives per-component
// voxel counts.
inline std::int32_t label_components(const LabelMask& m, std::vector<std::int32_t>& labels,
                                     std::vector<std::size_t>* sizes = nullptr) {
  const Vec3i s = m.shape;
  labels.assign(m.size(), -1);
  std::int32_t n_comp = 0;
  if (sizes) sizes->clear();
  const int dx[6] = {1, -1, 0, 0, 0, 0};
  const int dy[6] = {0, 0, 1, -1, 0, 0};
  const int dz[6] = {0, 0, 0, 0, 1, -1};

  for (int z = 0; z < s[2]; ++z)
    for (int y = 0; y < s[1]; ++y)
      for (int x = 0; x < s[0]; ++x) {
        const std::size_t i = m.index(x, y, z);
        if (m.data[i] == 0 || labels[i] >= 0) continue;
        std::size_t size = 0;
        std::queue<Vec3i> q;
        q.push({x, y, z});
        labels[i] = n_comp;
        while (!q.empty()) {
          const Vec3i p = q.front();
          q.pop();
          ++size;
          for (int d = 0; d < 6; ++d) {
            const int nx = p[0] + dx[d], ny = p[1] + dy[d], nz = p[2] + dz[d];
            if (nx < 0 || ny < 0 || nz < 0 || nx >= s[0] || ny >= s[1] || nz >= s[2]) continue;
            const std::size_t ni = m.index(nx, ny, nz);
            if (m.data[ni] == 1 && labels[ni] < 0) {
              labels[ni] = n_comp;
              q.push({nx, ny, nz});
            }
          }
        }
        if (sizes) sizes->push_back(size);
        ++n_comp;
      }
  return n_comp;
}

inline std::int32_t count_components(const LabelMask& m) {
  std::vector<std::int32_t> labels;
  return label_components(m, labels);
}

// Keeps only the largest 6-connected foreground component (first in scan
// order on ties). Empty masks stay empty.
inline void keep_largest_component(LabelMask& m) {
  std::vector<std::int32_t> labels;
  std::vector<std::size_t> sizes;
  const std::int32_t n = label_components(m, labels, &sizes);
  if (n <= 1) return;
  std::int32_t best = 0;
  for (std::int32_t c = 1; c < n; ++c)
    if (sizes[static_cast<std::size_t>(c)] > sizes[static_cast<std::size_t>(best)]) best = c;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m.data[i] == 1 && labels[i] != best) m.data[i] = 0;
}

}  // namespace synseg

#endif
