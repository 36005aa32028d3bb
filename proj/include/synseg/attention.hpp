#ifndef SYNSEG_ATTENTION_HPP
#define SYNSEG_ATTENTION_HPP

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "synseg/common.hpp"
#include "synseg/layers.hpp"
#include "synseg/tensor.hpp"

namespace synseg {

template <class T>
struct CrossAttentionCtx {
  Tensor5<T> q, k, v;        // (1, D, z, y, x) each
  std::vector<RowMajorMat<T>> probs;  // per head, N x N softmax rows over keys
  Tensor5<T> attn_out;       // pre-projection head concat
};

// Volumetric multi-head cross-attention over flattened spatial positions.
// Queries come from the first input, keys/values from the second; the output
// adds the projected attention result back onto the query stream.
template <class T>
struct CrossAttention {
  int dim = 0;    // channel dim of both streams
  int heads = 1;
  std::size_t wq_off = 0, wk_off = 0, wv_off = 0, wo_off = 0;

  static CrossAttention make(ParamStore<T>& store, const std::string& name, int dim, int heads) {
    if (dim % heads != 0) throw InvalidArgument("attention dim must be divisible by heads");
    CrossAttention a;
    a.dim = dim;
    a.heads = heads;
    const std::size_t n = static_cast<std::size_t>(dim) * dim;
    a.wq_off = store.allocate(name + ".wq", n);
    a.wk_off = store.allocate(name + ".wk", n);
    a.wv_off = store.allocate(name + ".wv", n);
    a.wo_off = store.allocate(name + ".wo", n);
    return a;
  }

  void init(T* params, Rng& rng) const {
    const double std_dev = std::sqrt(1.0 / static_cast<double>(dim));
    for (std::size_t off : {wq_off, wk_off, wv_off, wo_off}) {
      T* w = params + off;
      for (std::size_t i = 0; i < static_cast<std::size_t>(dim) * dim; ++i)
        w[i] = static_cast<T>(rng.normal(0.0, std_dev));
    }
  }

  void forward(const Tensor5<T>& queries_src, const Tensor5<T>& kv_src, const T* params,
               Tensor5<T>& fused, CrossAttentionCtx<T>& ctx) const {
    if (queries_src.z != kv_src.z || queries_src.y != kv_src.y || queries_src.x != kv_src.x)
      throw ShapeIncompatible("attention inputs must share spatial dims");
    if (queries_src.c != dim || kv_src.c != dim)
      throw ShapeIncompatible("attention inputs must have `dim` channels");
    if (queries_src.n != 1) throw ShapeIncompatible("attention runs per sample");

    const auto N = static_cast<Eigen::Index>(queries_src.spatial());
    const int dh = dim / heads;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

    ctx.q.resize(1, dim, queries_src.z, queries_src.y, queries_src.x);
    ctx.k.resize(1, dim, kv_src.z, kv_src.y, kv_src.x);
    ctx.v.resize(1, dim, kv_src.z, kv_src.y, kv_src.x);
    ctx.attn_out.resize(1, dim, queries_src.z, queries_src.y, queries_src.x);
    ctx.probs.assign(static_cast<std::size_t>(heads), RowMajorMat<T>());

    ConstMatMap<T> F1(queries_src.plane(0, 0), dim, N);
    ConstMatMap<T> F2(kv_src.plane(0, 0), dim, N);
    MatMap<T> Q(ctx.q.plane(0, 0), dim, N);
    MatMap<T> K(ctx.k.plane(0, 0), dim, N);
    MatMap<T> V(ctx.v.plane(0, 0), dim, N);
    ConstMatMap<T> Wq(params + wq_off, dim, dim);
    ConstMatMap<T> Wk(params + wk_off, dim, dim);
    ConstMatMap<T> Wv(params + wv_off, dim, dim);
    ConstMatMap<T> Wo(params + wo_off, dim, dim);

    Q.noalias() = Wq * F1;
    K.noalias() = Wk * F2;
    V.noalias() = Wv * F2;

    MatMap<T> O(ctx.attn_out.plane(0, 0), dim, N);
    for (int h = 0; h < heads; ++h) {
      auto Qh = Q.middleRows(h * dh, dh);
      auto Kh = K.middleRows(h * dh, dh);
      auto Vh = V.middleRows(h * dh, dh);

      RowMajorMat<T>& P = ctx.probs[static_cast<std::size_t>(h)];
      P.noalias() = (Qh.transpose() * Kh) * scale;  // N x N scores, rows = queries
      for (Eigen::Index i = 0; i < N; ++i) {
        auto row = P.row(i);
        const T m = row.maxCoeff();
        row = (row.array() - m).exp();
        row /= row.sum();
      }
      O.middleRows(h * dh, dh).noalias() = Vh * P.transpose();
    }

    fused.resize(1, dim, queries_src.z, queries_src.y, queries_src.x);
    MatMap<T> Fo(fused.plane(0, 0), dim, N);
    Fo.noalias() = F1 + Wo * O;
  }

  // Accumulates into d_queries_src / d_kv_src (callers size and zero them).
  void backward(const Tensor5<T>& queries_src, const Tensor5<T>& kv_src, const Tensor5<T>& d_fused,
                const T* params, T* grads, const CrossAttentionCtx<T>& ctx, Tensor5<T>& d_queries_src,
                Tensor5<T>& d_kv_src) const {
    const auto N = static_cast<Eigen::Index>(queries_src.spatial());
    const int dh = dim / heads;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

    ConstMatMap<T> F1(queries_src.plane(0, 0), dim, N);
    ConstMatMap<T> F2(kv_src.plane(0, 0), dim, N);
    ConstMatMap<T> Q(ctx.q.plane(0, 0), dim, N);
    ConstMatMap<T> K(ctx.k.plane(0, 0), dim, N);
    ConstMatMap<T> V(ctx.v.plane(0, 0), dim, N);
    ConstMatMap<T> O(ctx.attn_out.plane(0, 0), dim, N);
    ConstMatMap<T> G(d_fused.plane(0, 0), dim, N);
    ConstMatMap<T> Wq(params + wq_off, dim, dim);
    ConstMatMap<T> Wk(params + wk_off, dim, dim);
    ConstMatMap<T> Wv(params + wv_off, dim, dim);
    ConstMatMap<T> Wo(params + wo_off, dim, dim);
    MatMap<T> dWq(grads + wq_off, dim, dim);
    MatMap<T> dWk(grads + wk_off, dim, dim);
    MatMap<T> dWv(grads + wv_off, dim, dim);
    MatMap<T> dWo(grads + wo_off, dim, dim);
    MatMap<T> dF1(d_queries_src.plane(0, 0), dim, N);
    MatMap<T> dF2(d_kv_src.plane(0, 0), dim, N);

    // Residual path.
    dF1.noalias() += G;

    dWo.noalias() += G * O.transpose();
    RowMajorMat<T> dO = Wo.transpose() * G;  // dim x N

    RowMajorMat<T> dQ = RowMajorMat<T>::Zero(dim, N);
    RowMajorMat<T> dK = RowMajorMat<T>::Zero(dim, N);
    RowMajorMat<T> dV = RowMajorMat<T>::Zero(dim, N);

    for (int h = 0; h < heads; ++h) {
      auto Qh = Q.middleRows(h * dh, dh);
      auto Kh = K.middleRows(h * dh, dh);
      auto Vh = V.middleRows(h * dh, dh);
      auto dOh = dO.middleRows(h * dh, dh);
      const RowMajorMat<T>& P = ctx.probs[static_cast<std::size_t>(h)];

      dV.middleRows(h * dh, dh).noalias() = dOh * P;
      RowMajorMat<T> dP = dOh.transpose() * Vh;  // N x N

      // Row-wise softmax jacobian.
      RowMajorMat<T> dS(N, N);
      for (Eigen::Index i = 0; i < N; ++i) {
        const T dot = dP.row(i).cwiseProduct(P.row(i)).sum();
        dS.row(i) = P.row(i).cwiseProduct((dP.row(i).array() - dot).matrix());
      }
      dS *= scale;

      dQ.middleRows(h * dh, dh).noalias() = Kh * dS.transpose();
      dK.middleRows(h * dh, dh).noalias() = Qh * dS;
    }

    dWq.noalias() += dQ * F1.transpose();
    dWk.noalias() += dK * F2.transpose();
    dWv.noalias() += dV * F2.transpose();
    dF1.noalias() += Wq.transpose() * dQ;
    dF2.noalias() += Wk.transpose() * dK;
    dF2.noalias() += Wv.transpose() * dV;
  }
};

}  // namespace synseg

#endif
