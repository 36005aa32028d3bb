#ifndef SYNSEG_LAYERS_HPP
#define SYNSEG_LAYERS_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "synseg/common.hpp"
#include "synseg/rng.hpp"
#include "synseg/tensor.hpp"

namespace synseg {

template <class T>
using RowMajorMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMajorMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMajorMat<T>>;

// Flat parameter vector plus a name registry; gradients live in equally sized
// external buffers so per-thread accumulation stays allocation-free.
template <class T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    std::size_t offset = 0;
    std::size_t count = 0;
  };

  std::size_t allocate(const std::string& name, std::size_t count) {
    Entry e{name, values_.size(), count};
    entries_.push_back(e);
    values_.resize(values_.size() + count, T(0));
    return e.offset;
  }

  std::size_t size() const { return values_.size(); }
  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }
  std::vector<T>& values() { return values_; }
  const std::vector<T>& values() const { return values_; }
  const std::vector<Entry>& entries() const { return entries_; }

  const Entry& entry(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e;
    throw InvalidArgument("unknown parameter: " + name);
  }

 private:
  std::vector<T> values_;
  std::vector<Entry> entries_;
};

// --- 3D convolution, stride 1; k = 3 with same-padding, or k = 1 -----------

template <class T>
struct Conv3d {
  int cin = 0, cout = 0, k = 1;
  bool has_bias = false;
  std::size_t w_off = 0, b_off = 0;

  static Conv3d make(ParamStore<T>& store, const std::string& name, int cin, int cout, int k,
                     bool bias) {
    Conv3d c;
    c.cin = cin;
    c.cout = cout;
    c.k = k;
    c.has_bias = bias;
    c.w_off = store.allocate(name + ".w", static_cast<std::size_t>(cout) * cin * k * k * k);
    if (bias) c.b_off = store.allocate(name + ".b", static_cast<std::size_t>(cout));
    return c;
  }

  void init(T* params, Rng& rng) const {
    const std::size_t fan_in = static_cast<std::size_t>(cin) * k * k * k;
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    T* w = params + w_off;
    for (std::size_t i = 0; i < static_cast<std::size_t>(cout) * fan_in; ++i)
      w[i] = static_cast<T>(rng.normal(0.0, std_dev));
    if (has_bias) std::fill(params + b_off, params + b_off + cout, T(0));
  }

  std::size_t col_rows() const { return static_cast<std::size_t>(cin) * k * k * k; }

  // Expands the receptive fields of one sample into rows of `col`
  // (cin*k^3 x spatial), zero padding outside the grid.
  void im2col(const Tensor5<T>& in, int b, std::vector<T>& col) const {
    const int Z = in.z, Y = in.y, X = in.x;
    const std::size_t N = in.spatial();
    col.resize(col_rows() * N);
    if (k == 1) {
      std::memcpy(col.data(), in.plane(b, 0), sizeof(T) * static_cast<std::size_t>(cin) * N);
      return;
    }
    const int r = k / 2;
    std::size_t row = 0;
    for (int ci = 0; ci < cin; ++ci) {
      const T* src = in.plane(b, ci);
      for (int dz = -r; dz <= r; ++dz)
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx, ++row) {
            T* dst = col.data() + row * N;
            for (int z = 0; z < Z; ++z) {
              const int sz = z + dz;
              if (sz < 0 || sz >= Z) {
                std::fill(dst, dst + static_cast<std::size_t>(Y) * X, T(0));
                dst += static_cast<std::size_t>(Y) * X;
                continue;
              }
              for (int y = 0; y < Y; ++y, dst += X) {
                const int sy = y + dy;
                if (sy < 0 || sy >= Y) {
                  std::fill(dst, dst + X, T(0));
                  continue;
                }
                const T* s = src + (static_cast<std::size_t>(sz) * Y + sy) * X;
                const int x_lo = std::max(0, -dx);
                const int x_hi = std::min(X, X - dx);
                if (x_lo > 0) std::fill(dst, dst + x_lo, T(0));
                if (x_hi > x_lo) std::memcpy(dst + x_lo, s + x_lo + dx, sizeof(T) * (x_hi - x_lo));
                if (x_hi < X) std::fill(dst + x_hi, dst + X, T(0));
              }
            }
          }
    }
  }

  // Transpose of im2col: scatter-adds col rows back onto the input grid.
  void col2im_add(const std::vector<T>& col, Tensor5<T>& d_in, int b) const {
    const int Z = d_in.z, Y = d_in.y, X = d_in.x;
    const std::size_t N = d_in.spatial();
    if (k == 1) {
      T* dst = d_in.plane(b, 0);
      const T* s = col.data();
      for (std::size_t i = 0; i < static_cast<std::size_t>(cin) * N; ++i) dst[i] += s[i];
      return;
    }
    const int r = k / 2;
    std::size_t row = 0;
    for (int ci = 0; ci < cin; ++ci) {
      T* dst_plane = d_in.plane(b, ci);
      for (int dz = -r; dz <= r; ++dz)
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx, ++row) {
            const T* src = col.data() + row * N;
            for (int z = 0; z < Z; ++z) {
              const int sz = z + dz;
              if (sz < 0 || sz >= Z) {
                src += static_cast<std::size_t>(Y) * X;
                continue;
              }
              for (int y = 0; y < Y; ++y, src += X) {
                const int sy = y + dy;
                if (sy < 0 || sy >= Y) continue;
                T* d = dst_plane + (static_cast<std::size_t>(sz) * Y + sy) * X;
                const int x_lo = std::max(0, -dx);
                const int x_hi = std::min(X, X - dx);
                for (int x = x_lo; x < x_hi; ++x) d[x + dx] += src[x];
              }
            }
          }
    }
  }

  void forward(const Tensor5<T>& in, const T* params, Tensor5<T>& out, std::vector<T>& scratch) const {
    if (in.c != cin) throw ShapeIncompatible("conv input channels");
    out.resize(in.n, cout, in.z, in.y, in.x);
    const std::size_t N = in.spatial();
    const std::size_t K = col_rows();
    ConstMatMap<T> W(params + w_off, cout, static_cast<Eigen::Index>(K));
    for (int b = 0; b < in.n; ++b) {
      im2col(in, b, scratch);
      ConstMatMap<T> col(scratch.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(N));
      MatMap<T> o(out.plane(b, 0), cout, static_cast<Eigen::Index>(N));
      o.noalias() = W * col;
      if (has_bias) {
        const T* bias = params + b_off;
        for (int c = 0; c < cout; ++c) o.row(c).array() += bias[c];
      }
    }
  }

  // d_in is accumulated into (callers zero it when appropriate).
  void backward(const Tensor5<T>& in, const Tensor5<T>& d_out, const T* params, T* grads,
                Tensor5<T>* d_in, std::vector<T>& scratch, std::vector<T>& scratch2) const {
    const std::size_t N = in.spatial();
    const std::size_t K = col_rows();
    ConstMatMap<T> W(params + w_off, cout, static_cast<Eigen::Index>(K));
    MatMap<T> dW(grads + w_off, cout, static_cast<Eigen::Index>(K));
    for (int b = 0; b < in.n; ++b) {
      im2col(in, b, scratch);
      ConstMatMap<T> col(scratch.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(N));
      ConstMatMap<T> g(d_out.plane(b, 0), cout, static_cast<Eigen::Index>(N));
      dW.noalias() += g * col.transpose();
      if (has_bias) {
        // Fixed-order accumulation; vectorized redux would depend on the
        // buffer's runtime alignment and break run-to-run determinism.
        T* db = grads + b_off;
        for (int c = 0; c < cout; ++c) {
          const T* row = d_out.plane(b, c);
          double s = 0.0;
          for (std::size_t i = 0; i < N; ++i) s += row[i];
          db[c] += static_cast<T>(s);
        }
      }
      if (d_in) {
        scratch2.resize(K * N);
        MatMap<T> dcol(scratch2.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(N));
        dcol.noalias() = W.transpose() * g;
        col2im_add(scratch2, *d_in, b);
      }
    }
  }
};

// --- instance normalization --------------------------------------------------

template <class T>
struct InstanceNormCtx {
  Tensor5<T> xhat;
  std::vector<T> inv_std;  // per (batch, channel)
};

template <class T>
struct InstanceNorm {
  int channels = 0;
  std::size_t gamma_off = 0, beta_off = 0;
  static constexpr double kEps = 1e-5;

  static InstanceNorm make(ParamStore<T>& store, const std::string& name, int channels) {
    InstanceNorm n;
    n.channels = channels;
    n.gamma_off = store.allocate(name + ".gamma", static_cast<std::size_t>(channels));
    n.beta_off = store.allocate(name + ".beta", static_cast<std::size_t>(channels));
    return n;
  }

  void init(T* params) const {
    std::fill(params + gamma_off, params + gamma_off + channels, T(1));
    std::fill(params + beta_off, params + beta_off + channels, T(0));
  }

  void forward(const Tensor5<T>& in, const T* params, Tensor5<T>& out, InstanceNormCtx<T>& ctx) const {
    out.resize(in.n, in.c, in.z, in.y, in.x);
    ctx.xhat.resize(in.n, in.c, in.z, in.y, in.x);
    ctx.inv_std.assign(static_cast<std::size_t>(in.n) * in.c, T(0));
    const std::size_t N = in.spatial();
    const T* gamma = params + gamma_off;
    const T* beta = params + beta_off;
    for (int b = 0; b < in.n; ++b)
      for (int c = 0; c < in.c; ++c) {
        const T* x = in.plane(b, c);
        double sum = 0.0, sum_sq = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
          sum += x[i];
          sum_sq += static_cast<double>(x[i]) * x[i];
        }
        const double mean = sum / static_cast<double>(N);
        const double var = std::max(0.0, sum_sq / static_cast<double>(N) - mean * mean);
        const T inv = static_cast<T>(1.0 / std::sqrt(var + kEps));
        ctx.inv_std[static_cast<std::size_t>(b) * in.c + c] = inv;
        T* xh = ctx.xhat.plane(b, c);
        T* o = out.plane(b, c);
        const T m = static_cast<T>(mean);
        for (std::size_t i = 0; i < N; ++i) {
          xh[i] = (x[i] - m) * inv;
          o[i] = gamma[c] * xh[i] + beta[c];
        }
      }
  }

  void backward(const Tensor5<T>& d_out, const T* params, T* grads, const InstanceNormCtx<T>& ctx,
                Tensor5<T>& d_in) const {
    d_in.resize(d_out.n, d_out.c, d_out.z, d_out.y, d_out.x);
    const std::size_t N = d_out.spatial();
    const T* gamma = params + gamma_off;
    T* dgamma = grads + gamma_off;
    T* dbeta = grads + beta_off;
    for (int b = 0; b < d_out.n; ++b)
      for (int c = 0; c < d_out.c; ++c) {
        const T* g = d_out.plane(b, c);
        const T* xh = ctx.xhat.plane(b, c);
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
          sum_g += g[i];
          sum_gx += static_cast<double>(g[i]) * xh[i];
        }
        dgamma[c] += static_cast<T>(sum_gx);
        dbeta[c] += static_cast<T>(sum_g);
        const T inv = ctx.inv_std[static_cast<std::size_t>(b) * d_out.c + c];
        const T mg = static_cast<T>(sum_g / static_cast<double>(N));
        const T mgx = static_cast<T>(sum_gx / static_cast<double>(N));
        T* di = d_in.plane(b, c);
        for (std::size_t i = 0; i < N; ++i)
          di[i] = gamma[c] * inv * (g[i] - mg - xh[i] * mgx);
      }
  }
};

// --- leaky rectifier ---------------------------------------------------------

template <class T>
struct LeakyRelu {
  static constexpr T kSlope = static_cast<T>(0.01);

  static void forward(const Tensor5<T>& in, Tensor5<T>& out) {
    out.resize(in.n, in.c, in.z, in.y, in.x);
    for (std::size_t i = 0; i < in.size(); ++i)
      out.v[i] = in.v[i] > T(0) ? in.v[i] : kSlope * in.v[i];
  }

  static void backward(const Tensor5<T>& d_out, const Tensor5<T>& pre_act, Tensor5<T>& d_in) {
    d_in.resize(d_out.n, d_out.c, d_out.z, d_out.y, d_out.x);
    for (std::size_t i = 0; i < d_out.size(); ++i)
      d_in.v[i] = pre_act.v[i] > T(0) ? d_out.v[i] : kSlope * d_out.v[i];
  }
};

// --- max pooling with per-axis factors in {1,2} -------------------------------

template <class T>
struct MaxPoolCtx {
  std::vector<std::uint32_t> argmax;  // per output element, source offset in its channel plane
};

template <class T>
struct MaxPool {
  Vec3i factor{1, 1, 1};

  void forward(const Tensor5<T>& in, Tensor5<T>& out, MaxPoolCtx<T>& ctx) const {
    const int Zo = in.z / factor[2], Yo = in.y / factor[1], Xo = in.x / factor[0];
    out.resize(in.n, in.c, Zo, Yo, Xo);
    ctx.argmax.assign(out.size(), 0);
    std::size_t oi = 0;
    for (int b = 0; b < in.n; ++b)
      for (int c = 0; c < in.c; ++c) {
        const T* src = in.plane(b, c);
        for (int z = 0; z < Zo; ++z)
          for (int y = 0; y < Yo; ++y)
            for (int x = 0; x < Xo; ++x, ++oi) {
              T best = -std::numeric_limits<T>::infinity();
              std::uint32_t best_idx = 0;
              for (int dz = 0; dz < factor[2]; ++dz)
                for (int dy = 0; dy < factor[1]; ++dy)
                  for (int dx = 0; dx < factor[0]; ++dx) {
                    const std::size_t idx =
                        (static_cast<std::size_t>(z * factor[2] + dz) * in.y + (y * factor[1] + dy)) * in.x +
                        (x * factor[0] + dx);
                    if (src[idx] > best) {
                      best = src[idx];
                      best_idx = static_cast<std::uint32_t>(idx);
                    }
                  }
              out.v[oi] = best;
              ctx.argmax[oi] = best_idx;
            }
      }
  }

  void backward(const Tensor5<T>& d_out, const Tensor5<T>& in_like, const MaxPoolCtx<T>& ctx,
                Tensor5<T>& d_in) const {
    d_in.resize(in_like.n, in_like.c, in_like.z, in_like.y, in_like.x);
    d_in.zero();
    const std::size_t No = d_out.spatial();
    std::size_t oi = 0;
    for (int b = 0; b < d_out.n; ++b)
      for (int c = 0; c < d_out.c; ++c) {
        T* dst = d_in.plane(b, c);
        for (std::size_t i = 0; i < No; ++i, ++oi) dst[ctx.argmax[oi]] += d_out.v[oi];
      }
  }
};

// --- nearest-neighbor upsampling ----------------------------------------------

template <class T>
struct Upsample {
  Vec3i factor{1, 1, 1};

  void forward(const Tensor5<T>& in, Tensor5<T>& out) const {
    out.resize(in.n, in.c, in.z * factor[2], in.y * factor[1], in.x * factor[0]);
    for (int b = 0; b < in.n; ++b)
      for (int c = 0; c < in.c; ++c) {
        const T* src = in.plane(b, c);
        T* dst = out.plane(b, c);
        for (int z = 0; z < out.z; ++z)
          for (int y = 0; y < out.y; ++y)
            for (int x = 0; x < out.x; ++x)
              *dst++ = src[(static_cast<std::size_t>(z / factor[2]) * in.y + (y / factor[1])) * in.x +
                           (x / factor[0])];
      }
  }

  void backward(const Tensor5<T>& d_out, const Vec3i& in_zyx_shape, int channels, Tensor5<T>& d_in) const {
    d_in.resize(d_out.n, channels, in_zyx_shape[0], in_zyx_shape[1], in_zyx_shape[2]);
    d_in.zero();
    for (int b = 0; b < d_out.n; ++b)
      for (int c = 0; c < channels; ++c) {
        const T* g = d_out.plane(b, c);
        T* dst = d_in.plane(b, c);
        for (int z = 0; z < d_out.z; ++z)
          for (int y = 0; y < d_out.y; ++y)
            for (int x = 0; x < d_out.x; ++x)
              dst[(static_cast<std::size_t>(z / factor[2]) * d_in.y + (y / factor[1])) * d_in.x +
                  (x / factor[0])] += *g++;
      }
  }
};

// Channel concatenation [a; b].
template <class T>
inline void concat_channels(const Tensor5<T>& a, const Tensor5<T>& b, Tensor5<T>& out) {
  if (a.z != b.z || a.y != b.y || a.x != b.x || a.n != b.n)
    throw ShapeIncompatible("concat spatial dims differ");
  out.resize(a.n, a.c + b.c, a.z, a.y, a.x);
  const std::size_t N = a.spatial();
  for (int s = 0; s < a.n; ++s) {
    std::memcpy(out.plane(s, 0), a.plane(s, 0), sizeof(T) * a.c * N);
    std::memcpy(out.plane(s, a.c), b.plane(s, 0), sizeof(T) * b.c * N);
  }
}

template <class T>
inline void split_channels_add(const Tensor5<T>& d_out, Tensor5<T>& d_a, Tensor5<T>& d_b) {
  const std::size_t N = d_out.spatial();
  for (int s = 0; s < d_out.n; ++s) {
    const T* src = d_out.plane(s, 0);
    T* da = d_a.plane(s, 0);
    for (std::size_t i = 0; i < static_cast<std::size_t>(d_a.c) * N; ++i) da[i] += src[i];
    const T* srcb = d_out.plane(s, d_a.c);
    T* db = d_b.plane(s, 0);
    for (std::size_t i = 0; i < static_cast<std::size_t>(d_b.c) * N; ++i) db[i] += srcb[i];
  }
}

}  // namespace synseg

#endif
