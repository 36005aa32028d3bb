#ifndef SYNSEG_NETWORK_HPP
#define SYNSEG_NETWORK_HPP

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "synseg/attention.hpp"
#include "synseg/layers.hpp"
#include "synseg/plan.hpp"
#include "synseg/tensor.hpp"
#include "synseg/vq.hpp"

namespace synseg {

template <class T>
struct ConvBlockLayers {
  Conv3d<T> conv;
  InstanceNorm<T> norm;
};

template <class T>
struct ConvBlockCtx {
  Tensor5<T> conv_out;
  InstanceNormCtx<T> norm_ctx;
  Tensor5<T> norm_out;  // pre-activation
  Tensor5<T> act;
};

template <class T>
struct EncoderStageCtx {
  Tensor5<T> input;
  ConvBlockCtx<T> b1, b2;  // b2.act is the stage feature
  Tensor5<T> pooled;
  MaxPoolCtx<T> pool_ctx;
};

template <class T>
struct BottleneckCtx {
  Tensor5<T> f1;  // continuous latent
  Tensor5<T> z;   // pre-quantization features
  VqResult<T> vq;
  CrossAttentionCtx<T> attn;
  Tensor5<T> fused;
};

template <class T>
struct DecoderStageCtx {
  Tensor5<T> up_out;
  Tensor5<T> cat;
  ConvBlockCtx<T> b1, b2;
};

template <class T>
struct Workspace {
  Tensor5<T> input;
  std::vector<EncoderStageCtx<T>> enc;
  BottleneckCtx<T> bottleneck;
  std::vector<DecoderStageCtx<T>> dec;
  Tensor5<T> logits;
  std::vector<T> scratch, scratch2;  // im2col buffers
};

template <class T>
struct SynergyStats {
  double vq_loss = 0.0;
  double commit_loss = 0.0;
  double aux_loss = 0.0;  // vq_loss + commitment_beta * commit_loss
  double perplexity = 1.0;
};

// Encoder-decoder with skip connections; the bottleneck projects the deepest
// features into a continuous stream and a vector-quantized discrete stream and
// fuses them with multi-head cross-attention (continuous queries the discrete
// vocabulary by default).
template <class T>
class SynergyUNet {
 public:
  SynergyUNet(const PlanConfig& plan, int in_channels, std::uint64_t seed,
              bool reverse_attention = false, double codebook_decay = 0.99,
              double commitment_beta = 0.25)
      : plan_(plan),
        in_channels_(in_channels),
        reverse_attention_(reverse_attention),
        commitment_beta_(commitment_beta) {
    plan_.validate();
    if (commitment_beta_ < 0.0) throw InvalidArgument("commitment_beta must be >= 0");
    build();
    Rng rng(seed);
    init_params(rng);
    codebook_ = Codebook<T>(plan_.codebook_size, plan_.latent_dim, codebook_decay);
    codebook_.init(rng);
  }

  const PlanConfig& plan() const { return plan_; }
  int in_channels() const { return in_channels_; }
  bool reverse_attention() const { return reverse_attention_; }
  double commitment_beta() const { return commitment_beta_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  Codebook<T>& codebook() { return codebook_; }
  const Codebook<T>& codebook() const { return codebook_; }
  const CrossAttention<T>& attention() const { return attn_; }

  int n_stages() const { return plan_.n_stages; }

  // Pyramid of per-stage features; ws.enc[s].b2.act holds stage s output.
  void encode(const Tensor5<T>& input, Workspace<T>& ws) const {
    check_input(input);
    ws.input = input;
    ws.enc.resize(static_cast<std::size_t>(plan_.n_stages));
    const T* p = params_.data();
    for (int s = 0; s < plan_.n_stages; ++s) {
      auto& ctx = ws.enc[static_cast<std::size_t>(s)];
      if (s == 0) {
        ctx.input = ws.input;
      } else {
        auto& prev = ws.enc[static_cast<std::size_t>(s - 1)];
        pools_[static_cast<std::size_t>(s - 1)].forward(prev.b2.act, prev.pooled, prev.pool_ctx);
        ctx.input = prev.pooled;
      }
      run_block(enc_blocks_[static_cast<std::size_t>(s)].first, ctx.input, ctx.b1, ws, p);
      run_block(enc_blocks_[static_cast<std::size_t>(s)].second, ctx.b1.act, ctx.b2, ws, p);
    }
  }

  // Fuses the continuous and quantized streams of the deepest encoder stage.
  SynergyStats<T> bottleneck(Workspace<T>& ws, VqFreeze<T>* freeze = nullptr) const {
    const Tensor5<T>& deep = ws.enc.back().b2.act;
    auto& ctx = ws.bottleneck;
    const T* p = params_.data();
    f1_proj_.forward(deep, p, ctx.f1, ws.scratch);
    f2_proj_.forward(deep, p, ctx.z, ws.scratch);
    ctx.vq = vq_quantize(ctx.z, codebook_, freeze);

    const Tensor5<T>& q_src = reverse_attention_ ? ctx.vq.zq : ctx.f1;
    const Tensor5<T>& kv_src = reverse_attention_ ? ctx.f1 : ctx.vq.zq;
    attn_.forward(q_src, kv_src, p, ctx.fused, ctx.attn);

    SynergyStats<T> stats;
    stats.vq_loss = ctx.vq.vq_loss;
    stats.commit_loss = ctx.vq.commit_loss;
    stats.aux_loss = ctx.vq.vq_loss + commitment_beta_ * ctx.vq.commit_loss;
    stats.perplexity = ctx.vq.perplexity;
    return stats;
  }

  // Decoder over stored skips; logits match the input patch spatially.
  const Tensor5<T>& decode(Workspace<T>& ws) const {
    const int S = plan_.n_stages;
    ws.dec.resize(static_cast<std::size_t>(S - 1));
    const T* p = params_.data();
    const Tensor5<T>* x = &ws.bottleneck.fused;
    for (int j = 0; j < S - 1; ++j) {
      const int level = S - 2 - j;  // skip stage this decoder level refines
      auto& ctx = ws.dec[static_cast<std::size_t>(j)];
      ups_[static_cast<std::size_t>(j)].forward(*x, ctx.up_out);
      concat_channels(ctx.up_out, ws.enc[static_cast<std::size_t>(level)].b2.act, ctx.cat);
      run_block(dec_blocks_[static_cast<std::size_t>(j)].first, ctx.cat, ctx.b1, ws, p);
      run_block(dec_blocks_[static_cast<std::size_t>(j)].second, ctx.b1.act, ctx.b2, ws, p);
      x = &ctx.b2.act;
    }
    final_conv_.forward(*x, p, ws.logits, ws.scratch);
    return ws.logits;
  }

  SynergyStats<T> forward(const Tensor5<T>& input, Workspace<T>& ws,
                          VqFreeze<T>* freeze = nullptr) const {
    encode(input, ws);
    const SynergyStats<T> stats = bottleneck(ws, freeze);
    decode(ws);
    return stats;
  }

  // Accumulates parameter gradients for one sample. commit_scale and vq_scale
  // already include the loss weights and batch normalization factors.
  void backward(const Tensor5<T>& d_logits, Workspace<T>& ws, T* grads, T* codebook_grads,
                T commit_scale, T vq_scale) const {
    const int S = plan_.n_stages;
    const T* p = params_.data();

    // Final conv.
    const Tensor5<T>& final_in = (S > 1) ? ws.dec.back().b2.act : ws.bottleneck.fused;
    Tensor5<T> d_x(final_in.n, final_in.c, final_in.z, final_in.y, final_in.x);
    d_x.zero();
    final_conv_.backward(final_in, d_logits, p, grads, &d_x, ws.scratch, ws.scratch2);

    // Decoder, deep direction; d_skip collects gradients for encoder features.
    std::vector<Tensor5<T>> d_skip(static_cast<std::size_t>(S));
    for (int s = 0; s < S; ++s) {
      const auto& f = ws.enc[static_cast<std::size_t>(s)].b2.act;
      d_skip[static_cast<std::size_t>(s)].resize(f.n, f.c, f.z, f.y, f.x);
    }

    Tensor5<T> d_fused;
    for (int j = S - 2; j >= 0; --j) {
      const int level = S - 2 - j;
      auto& ctx = ws.dec[static_cast<std::size_t>(j)];
      Tensor5<T> d_b1_act;
      backward_block(dec_blocks_[static_cast<std::size_t>(j)].second, ctx.b1.act, ctx.b2, d_x,
                     &d_b1_act, ws, p, grads);
      Tensor5<T> d_cat;
      backward_block(dec_blocks_[static_cast<std::size_t>(j)].first, ctx.cat, ctx.b1, d_b1_act,
                     &d_cat, ws, p, grads);

      Tensor5<T> d_up(ctx.up_out.n, ctx.up_out.c, ctx.up_out.z, ctx.up_out.y, ctx.up_out.x);
      d_up.zero();
      split_channels_add(d_cat, d_up, d_skip[static_cast<std::size_t>(level)]);

      const Tensor5<T>& up_in = (j == 0) ? ws.bottleneck.fused : ws.dec[static_cast<std::size_t>(j - 1)].b2.act;
      Tensor5<T> d_up_in;
      ups_[static_cast<std::size_t>(j)].backward(d_up, {up_in.z, up_in.y, up_in.x}, up_in.c, d_up_in);
      if (j == 0) {
        d_fused = std::move(d_up_in);
      } else {
        d_x = std::move(d_up_in);
      }
    }
    if (S == 1) d_fused = std::move(d_x);

    // Bottleneck.
    auto& bctx = ws.bottleneck;
    const Tensor5<T>& q_src = reverse_attention_ ? bctx.vq.zq : bctx.f1;
    const Tensor5<T>& kv_src = reverse_attention_ ? bctx.f1 : bctx.vq.zq;
    Tensor5<T> d_q_src(q_src.n, q_src.c, q_src.z, q_src.y, q_src.x);
    Tensor5<T> d_kv_src(kv_src.n, kv_src.c, kv_src.z, kv_src.y, kv_src.x);
    d_q_src.zero();
    d_kv_src.zero();
    attn_.backward(q_src, kv_src, d_fused, p, grads, bctx.attn, d_q_src, d_kv_src);

    Tensor5<T>& d_f1 = reverse_attention_ ? d_kv_src : d_q_src;
    Tensor5<T>& d_zq = reverse_attention_ ? d_q_src : d_kv_src;

    Tensor5<T> d_z;
    vq_backward(bctx.z, d_zq, bctx.vq, codebook_, commit_scale, vq_scale, d_z, codebook_grads);

    const Tensor5<T>& deep = ws.enc.back().b2.act;
    Tensor5<T> d_deep(deep.n, deep.c, deep.z, deep.y, deep.x);
    d_deep.zero();
    f1_proj_.backward(deep, d_f1, p, grads, &d_deep, ws.scratch, ws.scratch2);
    f2_proj_.backward(deep, d_z, p, grads, &d_deep, ws.scratch, ws.scratch2);

    // Encoder, deep to shallow; the deepest stage gets the bottleneck gradient.
    {
      auto& acc = d_skip[static_cast<std::size_t>(S - 1)];
      for (std::size_t i = 0; i < acc.size(); ++i) acc.v[i] += d_deep.v[i];
    }
    for (int s = S - 1; s >= 0; --s) {
      auto& ctx = ws.enc[static_cast<std::size_t>(s)];
      Tensor5<T> d_b1_act;
      backward_block(enc_blocks_[static_cast<std::size_t>(s)].second, ctx.b1.act, ctx.b2,
                     d_skip[static_cast<std::size_t>(s)], &d_b1_act, ws, p, grads);
      Tensor5<T> d_input;
      backward_block(enc_blocks_[static_cast<std::size_t>(s)].first, ctx.input, ctx.b1, d_b1_act,
                     s > 0 ? &d_input : nullptr, ws, p, grads);
      if (s > 0) {
        auto& prev = ws.enc[static_cast<std::size_t>(s - 1)];
        Tensor5<T> d_prev_act;
        pools_[static_cast<std::size_t>(s - 1)].backward(d_input, prev.b2.act, prev.pool_ctx, d_prev_act);
        auto& acc = d_skip[static_cast<std::size_t>(s - 1)];
        for (std::size_t i = 0; i < acc.size(); ++i) acc.v[i] += d_prev_act.v[i];
      }
    }
  }

 private:
  void check_input(const Tensor5<T>& input) const {
    if (input.c != in_channels_) throw ShapeIncompatible("network input channels");
    const Vec3i prod = plan_.pooling_product();
    if (input.x % prod[0] != 0 || input.y % prod[1] != 0 || input.z % prod[2] != 0)
      throw ShapeIncompatible("input spatial dims must be divisible by the pooling product");
  }

  void run_block(const ConvBlockLayers<T>& block, const Tensor5<T>& in, ConvBlockCtx<T>& ctx,
                 Workspace<T>& ws, const T* p) const {
    block.conv.forward(in, p, ctx.conv_out, ws.scratch);
    block.norm.forward(ctx.conv_out, p, ctx.norm_out, ctx.norm_ctx);
    LeakyRelu<T>::forward(ctx.norm_out, ctx.act);
  }

  // d_in (when non-null) is freshly sized and zeroed before accumulation.
  void backward_block(const ConvBlockLayers<T>& block, const Tensor5<T>& in, ConvBlockCtx<T>& ctx,
                      const Tensor5<T>& d_act, Tensor5<T>* d_in, Workspace<T>& ws, const T* p,
                      T* grads) const {
    Tensor5<T> d_norm_out, d_conv_out;
    LeakyRelu<T>::backward(d_act, ctx.norm_out, d_norm_out);
    block.norm.backward(d_norm_out, p, grads, ctx.norm_ctx, d_conv_out);
    if (d_in) {
      d_in->resize(in.n, in.c, in.z, in.y, in.x);
      d_in->zero();
    }
    block.conv.backward(in, d_conv_out, p, grads, d_in, ws.scratch, ws.scratch2);
  }

  void build() {
    const int S = plan_.n_stages;
    int prev_c = in_channels_;
    for (int s = 0; s < S; ++s) {
      const int c = plan_.channels_per_stage[static_cast<std::size_t>(s)];
      const std::string base = "enc" + std::to_string(s);
      ConvBlockLayers<T> b1{Conv3d<T>::make(params_, base + ".conv1", prev_c, c, 3, false),
                            InstanceNorm<T>::make(params_, base + ".norm1", c)};
      ConvBlockLayers<T> b2{Conv3d<T>::make(params_, base + ".conv2", c, c, 3, false),
                            InstanceNorm<T>::make(params_, base + ".norm2", c)};
      enc_blocks_.push_back({b1, b2});
      prev_c = c;
      if (s + 1 < S) {
        const Vec3i pool = plan_.pooling_per_axis_per_stage[static_cast<std::size_t>(s)];
        pools_.push_back(MaxPool<T>{{pool[0] ? 2 : 1, pool[1] ? 2 : 1, pool[2] ? 2 : 1}});
      }
    }

    const int deep_c = plan_.channels_per_stage.back();
    const int D = plan_.latent_dim;
    f1_proj_ = Conv3d<T>::make(params_, "bottleneck.f1", deep_c, D, 1, true);
    f2_proj_ = Conv3d<T>::make(params_, "bottleneck.f2", deep_c, D, 1, true);
    attn_ = CrossAttention<T>::make(params_, "bottleneck.attn", D, plan_.attention_heads);

    int prev = D;
    for (int j = 0; j < S - 1; ++j) {
      const int level = S - 2 - j;
      const Vec3i pool = plan_.pooling_per_axis_per_stage[static_cast<std::size_t>(level)];
      ups_.push_back(Upsample<T>{{pool[0] ? 2 : 1, pool[1] ? 2 : 1, pool[2] ? 2 : 1}});
      const int skip_c = plan_.channels_per_stage[static_cast<std::size_t>(level)];
      const std::string base = "dec" + std::to_string(level);
      ConvBlockLayers<T> b1{Conv3d<T>::make(params_, base + ".conv1", prev + skip_c, skip_c, 3, false),
                            InstanceNorm<T>::make(params_, base + ".norm1", skip_c)};
      ConvBlockLayers<T> b2{Conv3d<T>::make(params_, base + ".conv2", skip_c, skip_c, 3, false),
                            InstanceNorm<T>::make(params_, base + ".norm2", skip_c)};
      dec_blocks_.push_back({b1, b2});
      prev = skip_c;
    }
    final_conv_ = Conv3d<T>::make(params_, "final", prev, 1, 1, true);
  }

  void init_params(Rng& rng) {
    T* p = params_.data();
    for (auto& [b1, b2] : enc_blocks_) {
      b1.conv.init(p, rng);
      b1.norm.init(p);
      b2.conv.init(p, rng);
      b2.norm.init(p);
    }
    f1_proj_.init(p, rng);
    f2_proj_.init(p, rng);
    attn_.init(p, rng);
    for (auto& [b1, b2] : dec_blocks_) {
      b1.conv.init(p, rng);
      b1.norm.init(p);
      b2.conv.init(p, rng);
      b2.norm.init(p);
    }
    final_conv_.init(p, rng);
  }

  PlanConfig plan_;
  int in_channels_ = 1;
  bool reverse_attention_ = false;
  double commitment_beta_ = 0.25;
  ParamStore<T> params_;
  Codebook<T> codebook_;
  std::vector<std::pair<ConvBlockLayers<T>, ConvBlockLayers<T>>> enc_blocks_;
  std::vector<MaxPool<T>> pools_;
  Conv3d<T> f1_proj_, f2_proj_;
  CrossAttention<T> attn_;
  std::vector<Upsample<T>> ups_;
  std::vector<std::pair<ConvBlockLayers<T>, ConvBlockLayers<T>>> dec_blocks_;
  Conv3d<T> final_conv_;
};

}  // namespace synseg

#endif
