#ifndef SYNSEG_VQ_HPP
#define SYNSEG_VQ_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <type_traits>
#include <vector>

#include "synseg/common.hpp"
#include "synseg/rng.hpp"
#include "synseg/tensor.hpp"

namespace synseg {

// K x D table of discrete latent embeddings with EMA usage tracking.
template <class T>
struct Codebook {
  int K = 0, D = 0;
  std::vector<T> embeddings;  // row-major K x D
  std::vector<T> usage_ema;   // K, nonnegative
  double decay = 0.99;

  Codebook() = default;
  Codebook(int k, int d, double decay_ = 0.99) : K(k), D(d), decay(decay_) {
    if (k < 2) throw InvalidArgument("codebook needs K >= 2");
    if (!(decay_ > 0.0 && decay_ < 1.0)) throw InvalidArgument("codebook decay must be in (0,1)");
    embeddings.assign(static_cast<std::size_t>(K) * D, T(0));
    usage_ema.assign(static_cast<std::size_t>(K), T(0));
  }

  void init(Rng& rng, double stddev = 0.5) {
    for (auto& e : embeddings) e = static_cast<T>(rng.normal(0.0, stddev));
  }

  T* row(int k) { return embeddings.data() + static_cast<std::size_t>(k) * D; }
  const T* row(int k) const { return embeddings.data() + static_cast<std::size_t>(k) * D; }
};

// Frozen-detach state for finite-difference checks: the straight-through
// estimator and the stop-gradients in the auxiliary losses define gradients of
// a surrogate whose detached values are held at the linearization point.
// Capturing once and replaying makes central differences of the surrogate
// match the implemented backward exactly.
template <class T>
struct VqFreeze {
  bool captured = false;
  std::vector<int> indices;
  std::vector<T> e_sel;   // selected embeddings at capture, N x D
  std::vector<T> z_base;  // pre-quantization features at capture, N x D
};

template <class T>
struct VqResult {
  Tensor5<T> zq;             // same shape as z
  std::vector<int> indices;  // one per spatial location
  double vq_loss = 0.0;      // mean squared gap, stop-gradient on z
  double commit_loss = 0.0;  // mean squared gap, stop-gradient on e
  double perplexity = 1.0;
};

namespace detail {

template <class T>
inline int nearest_code(const Codebook<T>& cb, const T* vec) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < cb.K; ++k) {
    const T* e = cb.row(k);
    double d = 0.0;
    for (int c = 0; c < cb.D; ++c) {
      const double diff = static_cast<double>(vec[c]) - e[c];
      d += diff * diff;
    }
    if (d < best_d) {  // ties keep the smallest index
      best_d = d;
      best = k;
    }
  }
  return best;
}

inline double perplexity_from_counts(const std::vector<std::size_t>& counts, std::size_t total) {
  if (total == 0) return 1.0;
  double h = 0.0;
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log(p);
  }
  return std::exp(h);
}

}  // namespace detail

// Nearest-code quantization of a (1, D, z, y, x) feature map. Channel vectors
// at each spatial location are snapped to their closest codebook row.
template <class T>
inline VqResult<T> vq_quantize(const Tensor5<T>& z, const Codebook<T>& cb,
                               VqFreeze<T>* freeze = nullptr) {
  if (z.c != cb.D) throw DimensionMismatch("vq input channels != codebook D");
  const std::size_t N = z.spatial();
  const int D = cb.D;

  VqResult<T> r;
  r.zq.resize(z.n, z.c, z.z, z.y, z.x);
  r.indices.resize(static_cast<std::size_t>(z.n) * N);

  std::vector<T> vec(static_cast<std::size_t>(D));
  std::vector<std::size_t> counts(static_cast<std::size_t>(cb.K), 0);
  double vq_acc = 0.0, commit_acc = 0.0;

  const bool replay = freeze && freeze->captured;
  if (freeze && !freeze->captured) {
    freeze->indices.resize(r.indices.size());
    freeze->e_sel.resize(r.indices.size() * D);
    freeze->z_base.resize(r.indices.size() * D);
  }

  for (int b = 0; b < z.n; ++b) {
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t loc = static_cast<std::size_t>(b) * N + i;
      for (int c = 0; c < D; ++c) vec[static_cast<std::size_t>(c)] = z.plane(b, c)[i];

      int k;
      if (replay) {
        k = freeze->indices[loc];
      } else {
        k = detail::nearest_code(cb, vec.data());
      }
      r.indices[loc] = k;
      ++counts[static_cast<std::size_t>(k)];

      const T* e = cb.row(k);
      for (int c = 0; c < D; ++c) {
        const std::size_t fi = loc * static_cast<std::size_t>(D) + c;
        if (replay) {
          // zq = z + (e_sel - z_base), detached values frozen at capture.
          r.zq.plane(b, c)[i] = vec[static_cast<std::size_t>(c)] +
                                (freeze->e_sel[fi] - freeze->z_base[fi]);
          const double dv = static_cast<double>(freeze->z_base[fi]) - e[c];
          vq_acc += dv * dv;
          const double dc = static_cast<double>(vec[static_cast<std::size_t>(c)]) - freeze->e_sel[fi];
          commit_acc += dc * dc;
        } else {
          r.zq.plane(b, c)[i] = e[c];
          const double d = static_cast<double>(vec[static_cast<std::size_t>(c)]) - e[c];
          vq_acc += d * d;
          commit_acc += d * d;
          if (freeze) {
            freeze->indices[loc] = k;
            freeze->e_sel[fi] = e[c];
            freeze->z_base[fi] = vec[static_cast<std::size_t>(c)];
          }
        }
      }
    }
  }
  if (freeze && !freeze->captured) freeze->captured = true;

  const double denom = static_cast<double>(r.indices.size()) * D;
  r.vq_loss = vq_acc / denom;
  r.commit_loss = commit_acc / denom;
  r.perplexity = detail::perplexity_from_counts(counts, r.indices.size());
  return r;
}

// Straight-through backward: gradients reaching zq pass to z unchanged;
// the commitment term adds commit_scale * 2 (z - e) / (N*D). In gradient
// codebook mode the vq term adds vq_scale * 2 (e - z) / (N*D) onto the
// codebook gradient (EMA mode passes codebook_grads = nullptr).
template <class T>
inline void vq_backward(const Tensor5<T>& z, const Tensor5<T>& d_zq, const VqResult<T>& r,
                        const Codebook<T>& cb, T commit_scale, T vq_scale, Tensor5<T>& d_z,
                        std::type_identity_t<T>* codebook_grads) {
  const std::size_t N = z.spatial();
  const int D = cb.D;
  d_z.resize(z.n, z.c, z.z, z.y, z.x);
  const T inv = static_cast<T>(1.0 / (static_cast<double>(r.indices.size()) * D));
  for (int b = 0; b < z.n; ++b)
    for (std::size_t i = 0; i < N; ++i) {
      const int k = r.indices[static_cast<std::size_t>(b) * N + i];
      const T* e = cb.row(k);
      for (int c = 0; c < D; ++c) {
        const T zv = z.plane(b, c)[i];
        const T gap = zv - e[c];
        d_z.plane(b, c)[i] = d_zq.plane(b, c)[i] + commit_scale * T(2) * gap * inv;
        if (codebook_grads)
          codebook_grads[static_cast<std::size_t>(k) * D + c] += vq_scale * T(-2) * gap * inv;
      }
    }
}

// Per-code sums of assigned vectors, for the EMA update. Accumulation order is
// fixed so training stays bitwise deterministic.
template <class T>
struct VqBatchStats {
  std::vector<double> sum;          // K x D
  std::vector<std::size_t> counts;  // K
  std::size_t total = 0;

  void reset(int K, int D) {
    sum.assign(static_cast<std::size_t>(K) * D, 0.0);
    counts.assign(static_cast<std::size_t>(K), 0);
    total = 0;
  }

  void accumulate(const Tensor5<T>& z, const std::vector<int>& indices) {
    const std::size_t N = z.spatial();
    const int D = z.c;
    for (int b = 0; b < z.n; ++b)
      for (std::size_t i = 0; i < N; ++i) {
        const int k = indices[static_cast<std::size_t>(b) * N + i];
        ++counts[static_cast<std::size_t>(k)];
        ++total;
        for (int c = 0; c < D; ++c)
          sum[static_cast<std::size_t>(k) * D + c] += z.plane(b, c)[i];
      }
  }
};

// e_k <- decay * e_k + (1-decay) * mean(assigned z); unassigned codes keep
// their embedding. usage_ema tracks assignment fractions with the same decay.
template <class T>
inline void codebook_update(Codebook<T>& cb, const VqBatchStats<T>& stats) {
  const double d = cb.decay;
  for (int k = 0; k < cb.K; ++k) {
    const std::size_t n = stats.counts[static_cast<std::size_t>(k)];
    const double frac =
        stats.total > 0 ? static_cast<double>(n) / static_cast<double>(stats.total) : 0.0;
    cb.usage_ema[static_cast<std::size_t>(k)] =
        static_cast<T>(d * cb.usage_ema[static_cast<std::size_t>(k)] + (1.0 - d) * frac);
    if (n == 0) continue;
    T* e = cb.row(k);
    for (int c = 0; c < cb.D; ++c) {
      const double mean = stats.sum[static_cast<std::size_t>(k) * cb.D + c] / static_cast<double>(n);
      e[c] = static_cast<T>(d * e[c] + (1.0 - d) * mean);
    }
  }
}

// Collapse mitigation: codes whose usage EMA dropped below the threshold are
// re-seeded to encoder outputs drawn from the given feature map.
template <class T>
inline int reseed_dead_codes(Codebook<T>& cb, const Tensor5<T>& z, Rng& rng, double threshold = 1e-3) {
  const std::size_t N = z.spatial() * static_cast<std::size_t>(z.n);
  if (N == 0) return 0;
  int reseeded = 0;
  for (int k = 0; k < cb.K; ++k) {
    if (cb.usage_ema[static_cast<std::size_t>(k)] >= static_cast<T>(threshold)) continue;
    const std::size_t pick = static_cast<std::size_t>(rng.uniform_below(N));
    const int b = static_cast<int>(pick / z.spatial());
    const std::size_t i = pick % z.spatial();
    T* e = cb.row(k);
    for (int c = 0; c < cb.D; ++c) e[c] = z.plane(b, c)[i];
    cb.usage_ema[static_cast<std::size_t>(k)] = static_cast<T>(threshold);
    ++reseeded;
  }
  return reseeded;
}

}  // namespace synseg

#endif
