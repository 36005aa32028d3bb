#ifndef SYNSEG_LOSSES_HPP
#define SYNSEG_LOSSES_HPP

#include <cmath>

#include "synseg/common.hpp"
#include "synseg/tensor.hpp"

namespace synseg {

constexpr double kDiceEps = 1e-5;

template <class T>
inline T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Partial sums for the combined loss; summing these across samples yields the
// batch-global loss, so per-sample work can run in parallel.
struct LossSums {
  double bce = 0.0;        // sum of per-voxel BCE
  double intersect = 0.0;  // sum p*t
  double psum = 0.0;       // sum p
  double tsum = 0.0;       // sum t
  std::size_t count = 0;
};

struct LossParts {
  double bce = 0.0;
  double dice = 0.0;
  double total = 0.0;
};

template <class T>
inline LossSums accumulate_loss_sums(const Tensor5<T>& logits, const Tensor5<T>& target) {
  if (!logits.same_shape(target)) throw ShapeMismatch("loss inputs differ in shape");
  LossSums s;
  s.count = logits.size();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double x = logits.v[i];
    const double t = target.v[i];
    // max(x,0) - x t + log(1 + exp(-|x|))
    s.bce += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
    const double p = sigmoid(x);
    s.intersect += p * t;
    s.psum += p;
    s.tsum += t;
  }
  return s;
}

inline LossSums operator+(const LossSums& a, const LossSums& b) {
  LossSums s;
  s.bce = a.bce + b.bce;
  s.intersect = a.intersect + b.intersect;
  s.psum = a.psum + b.psum;
  s.tsum = a.tsum + b.tsum;
  s.count = a.count + b.count;
  return s;
}

inline LossParts loss_from_sums(const LossSums& s, double w_bce = 1.0, double w_dice = 1.0) {
  LossParts parts;
  parts.bce = s.bce / static_cast<double>(s.count);
  parts.dice = 1.0 - (2.0 * s.intersect + kDiceEps) / (s.psum + s.tsum + kDiceEps);
  parts.total = w_bce * parts.bce + w_dice * parts.dice;
  return parts;
}

// mean BCE on sigmoid(logits) + soft-Dice, both over the whole tensor.
template <class T>
inline LossParts bce_dice_loss(const Tensor5<T>& logits, const Tensor5<T>& target) {
  return loss_from_sums(accumulate_loss_sums(logits, target));
}

// Gradient of w_bce*BCE + w_dice*Dice for one sample, given the batch-global
// sums. d_logits is assigned.
template <class T>
inline void bce_dice_backward(const Tensor5<T>& logits, const Tensor5<T>& target,
                              const LossSums& global, double w_bce, double w_dice,
                              Tensor5<T>& d_logits) {
  d_logits.resize(logits.n, logits.c, logits.z, logits.y, logits.x);
  const double inv_count = 1.0 / static_cast<double>(global.count);
  const double A = 2.0 * global.intersect + kDiceEps;
  const double B = global.psum + global.tsum + kDiceEps;
  const double invB2 = 1.0 / (B * B);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double x = logits.v[i];
    const double t = target.v[i];
    const double p = sigmoid(x);
    const double d_bce = (p - t) * inv_count;
    const double d_dice = -(2.0 * t * B - A) * invB2 * p * (1.0 - p);
    d_logits.v[i] = static_cast<T>(w_bce * d_bce + w_dice * d_dice);
  }
}

}  // namespace synseg

#endif
