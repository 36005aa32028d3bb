#ifndef SYNSEG_TENSOR_HPP
#define SYNSEG_TENSOR_HPP

#include <array>
#include <cstddef>
#include <vector>

#include "synseg/common.hpp"
#include "synseg/volume.hpp"

namespace synseg {

// Dense 5-axis activation tensor (batch, channels, z, y, x), x fastest.
template <class T>
struct Tensor5 {
  int n = 0, c = 0, z = 0, y = 0, x = 0;
  std::vector<T> v;

  Tensor5() = default;
  Tensor5(int n_, int c_, int z_, int y_, int x_) { resize(n_, c_, z_, y_, x_); }

  void resize(int n_, int c_, int z_, int y_, int x_) {
    n = n_;
    c = c_;
    z = z_;
    y = y_;
    x = x_;
    v.assign(static_cast<std::size_t>(n) * c * z * y * x, T(0));
  }

  std::size_t spatial() const { return static_cast<std::size_t>(z) * y * x; }
  std::size_t size() const { return v.size(); }

  T* plane(int b, int ch) { return v.data() + (static_cast<std::size_t>(b) * c + ch) * spatial(); }
  const T* plane(int b, int ch) const {
    return v.data() + (static_cast<std::size_t>(b) * c + ch) * spatial();
  }

  T& at(int b, int ch, int zz, int yy, int xx) {
    return v[((static_cast<std::size_t>(b) * c + ch) * z + zz) * y * x + static_cast<std::size_t>(yy) * x + xx];
  }
  T at(int b, int ch, int zz, int yy, int xx) const {
    return v[((static_cast<std::size_t>(b) * c + ch) * z + zz) * y * x + static_cast<std::size_t>(yy) * x + xx];
  }

  void zero() { std::fill(v.begin(), v.end(), T(0)); }

  bool same_shape(const Tensor5& o) const {
    return n == o.n && c == o.c && z == o.z && y == o.y && x == o.x;
  }
};

// Volume (x fastest, x/y/z order) -> single-channel tensor (z,y,x order).
template <class T>
inline Tensor5<T> tensor_from_volume(const Volume& vol) {
  Tensor5<T> t(1, 1, vol.shape[2], vol.shape[1], vol.shape[0]);
  T* dst = t.plane(0, 0);
  for (int z = 0; z < vol.shape[2]; ++z)
    for (int y = 0; y < vol.shape[1]; ++y)
      for (int x = 0; x < vol.shape[0]; ++x)
        *dst++ = static_cast<T>(vol.at(x, y, z));
  return t;
}

template <class T>
inline Volume volume_from_tensor(const Tensor5<T>& t, const Vec3d& spacing = {1, 1, 1},
                                 const Vec3d& origin = {0, 0, 0}) {
  Volume v({t.x, t.y, t.z});
  v.spacing = spacing;
  v.origin = origin;
  const T* src = t.plane(0, 0);
  for (int z = 0; z < t.z; ++z)
    for (int y = 0; y < t.y; ++y)
      for (int x = 0; x < t.x; ++x)
        v.at(x, y, z) = static_cast<float>(*src++);
  return v;
}

}  // namespace synseg

#endif
