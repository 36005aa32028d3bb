#ifndef SYNSEG_INFER_HPP
#define SYNSEG_INFER_HPP

#include <cmath>
#include <functional>
#include <vector>

#include "synseg/common.hpp"
#include "synseg/losses.hpp"
#include "synseg/morphology.hpp"
#include "synseg/sampling.hpp"
#include "synseg/tensor.hpp"
#include "synseg/volume.hpp"
#include "synseg/volume_ops.hpp"

namespace synseg {

// Maps a patch-sized multichannel input tensor to single-channel logits.
using PatchPredictor = std::function<Tensor5<float>(const Tensor5<float>&)>;

namespace detail {

inline std::vector<int> tile_starts(int dim, int patch) {
  std::vector<int> starts;
  const int step = std::max(1, patch / 2);  // 50% overlap
  for (int s = 0;; s += step) {
    if (s + patch >= dim) {
      starts.push_back(std::max(0, dim - patch));
      break;
    }
    starts.push_back(s);
  }
  return starts;
}

// Separable Gaussian tile weight, sigma = patch/8 per axis.
inline std::vector<double> gaussian_profile(int patch) {
  std::vector<double> w(static_cast<std::size_t>(patch));
  const double sigma = static_cast<double>(patch) / 8.0;
  const double center = (patch - 1) / 2.0;
  for (int i = 0; i < patch; ++i) {
    const double d = (i - center) / sigma;
    w[static_cast<std::size_t>(i)] = std::exp(-0.5 * d * d);
  }
  return w;
}

}  // namespace detail

// Accumulated blending weight at every voxel (the pre-division normalizer of
// sliding-window prediction); exposed for coverage checks.
inline std::vector<double> sliding_window_weights(const Vec3i& shape, const Vec3i& patch) {
  const Vec3i padded = {std::max(shape[0], patch[0]), std::max(shape[1], patch[1]),
                        std::max(shape[2], patch[2])};
  std::vector<double> acc(static_cast<std::size_t>(volume_of(padded)), 0.0);
  const auto sx = detail::tile_starts(padded[0], patch[0]);
  const auto sy = detail::tile_starts(padded[1], patch[1]);
  const auto sz = detail::tile_starts(padded[2], patch[2]);
  const auto wx = detail::gaussian_profile(patch[0]);
  const auto wy = detail::gaussian_profile(patch[1]);
  const auto wz = detail::gaussian_profile(patch[2]);
  for (int tz : sz)
    for (int ty : sy)
      for (int tx : sx)
        for (int z = 0; z < patch[2]; ++z)
          for (int y = 0; y < patch[1]; ++y)
            for (int x = 0; x < patch[0]; ++x) {
              const std::size_t i = static_cast<std::size_t>(tx + x) +
                                    static_cast<std::size_t>(padded[0]) *
                                        ((ty + y) + static_cast<std::size_t>(padded[1]) * (tz + z));
              acc[i] += wx[static_cast<std::size_t>(x)] * wy[static_cast<std::size_t>(y)] *
                        wz[static_cast<std::size_t>(z)];
            }
  return acc;
}

// Tiles the volume with 50% overlap, Gaussian-blends sigmoid probabilities,
// and returns a probability volume of the input shape. Inputs smaller than
// the patch are mirror-padded and the result cropped back.
inline Volume sliding_window_predict(const std::vector<const Volume*>& channels, const Vec3i& patch,
                                     const PatchPredictor& predict) {
  if (channels.empty()) throw InvalidArgument("sliding window needs at least one channel");
  const Vec3i shape = channels[0]->shape;
  for (const Volume* c : channels)
    if (c->shape != shape) throw ShapeMismatch("sliding window channels differ in shape");

  const Vec3i padded = {std::max(shape[0], patch[0]), std::max(shape[1], patch[1]),
                        std::max(shape[2], patch[2])};

  std::vector<double> prob_acc(static_cast<std::size_t>(volume_of(padded)), 0.0);
  std::vector<double> w_acc(prob_acc.size(), 0.0);

  const auto sx = detail::tile_starts(padded[0], patch[0]);
  const auto sy = detail::tile_starts(padded[1], patch[1]);
  const auto sz = detail::tile_starts(padded[2], patch[2]);
  const auto wx = detail::gaussian_profile(patch[0]);
  const auto wy = detail::gaussian_profile(patch[1]);
  const auto wz = detail::gaussian_profile(patch[2]);

  Tensor5<float> tile(1, static_cast<int>(channels.size()), patch[2], patch[1], patch[0]);
  for (int tz : sz)
    for (int ty : sy)
      for (int tx : sx) {
        for (int ch = 0; ch < static_cast<int>(channels.size()); ++ch) {
          float* dst = tile.plane(0, ch);
          const Volume& v = *channels[static_cast<std::size_t>(ch)];
          for (int z = 0; z < patch[2]; ++z)
            for (int y = 0; y < patch[1]; ++y)
              for (int x = 0; x < patch[0]; ++x)
                *dst++ = detail::sample_mirrored(v, tx + x, ty + y, tz + z);
        }
        const Tensor5<float> logits = predict(tile);
        if (logits.c != 1 || logits.z != patch[2] || logits.y != patch[1] || logits.x != patch[0])
          throw ShapeIncompatible("patch predictor returned wrong shape");

        const float* lp = logits.plane(0, 0);
        for (int z = 0; z < patch[2]; ++z)
          for (int y = 0; y < patch[1]; ++y)
            for (int x = 0; x < patch[0]; ++x) {
              const double w = wx[static_cast<std::size_t>(x)] * wy[static_cast<std::size_t>(y)] *
                               wz[static_cast<std::size_t>(z)];
              const std::size_t i = static_cast<std::size_t>(tx + x) +
                                    static_cast<std::size_t>(padded[0]) *
                                        ((ty + y) + static_cast<std::size_t>(padded[1]) * (tz + z));
              prob_acc[i] += w * sigmoid(static_cast<double>(*lp++));
              w_acc[i] += w;
            }
      }

  Volume out(shape);
  out.spacing = channels[0]->spacing;
  out.origin = channels[0]->origin;
  for (int z = 0; z < shape[2]; ++z)
    for (int y = 0; y < shape[1]; ++y)
      for (int x = 0; x < shape[0]; ++x) {
        const std::size_t i = static_cast<std::size_t>(x) +
                              static_cast<std::size_t>(padded[0]) *
                                  (y + static_cast<std::size_t>(padded[1]) * z);
        out.at(x, y, z) = static_cast<float>(prob_acc[i] / w_acc[i]);
      }
  return out;
}

// Threshold, then keep only the largest 6-connected component.
inline LabelMask postprocess(const Volume& prob, double threshold = 0.5) {
  LabelMask m(prob.shape);
  m.spacing = prob.spacing;
  m.origin = prob.origin;
  for (std::size_t i = 0; i < prob.size(); ++i) m.data[i] = prob.data[i] > threshold ? 1 : 0;
  keep_largest_component(m);
  return m;
}

// Volume-level predictor: logits over a whole (already normalized) volume.
using VolumePredictor = std::function<Volume(const std::vector<const Volume*>&)>;

// Coarse-to-fine wiring: the low-resolution stage predicts on the downsampled
// volume, its upsampled sigmoid prediction joins the full-resolution input as
// a second channel, and the refinement stage produces the final logits.
inline Volume forward_cascade(const VolumePredictor& lowres_predict,
                              const VolumePredictor& fullres_predict, const Volume& volume,
                              const Vec3i& lowres_scale) {
  Vec3i low_shape;
  for (int a = 0; a < 3; ++a)
    low_shape[a] = std::max(1, volume.shape[a] / std::max(1, lowres_scale[a]));

  const Volume low_vol = (low_shape == volume.shape) ? volume : resample_to_shape(volume, low_shape);
  Volume low_logits = lowres_predict({&low_vol});

  // Sigmoid prediction upsampled back to full resolution.
  for (auto& v : low_logits.data) v = static_cast<float>(sigmoid(static_cast<double>(v)));
  const Volume prior =
      (low_shape == volume.shape) ? low_logits : resample_to_shape(low_logits, volume.shape);

  return fullres_predict({&volume, &prior});
}

}  // namespace synseg

#endif
