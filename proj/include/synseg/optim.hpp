#ifndef SYNSEG_OPTIM_HPP
#define SYNSEG_OPTIM_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "synseg/common.hpp"

namespace synseg {

// AdamW with decoupled weight decay. Moments are kept in double so float
// parameter updates stay well conditioned and bitwise reproducible.
template <class T>
class AdamW {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 1e-2;

  explicit AdamW(std::size_t n = 0) { reset(n); }

  void reset(std::size_t n) {
    m_.assign(n, 0.0);
    v_.assign(n, 0.0);
    t_ = 0;
  }

  std::size_t size() const { return m_.size(); }

  // One update over the full parameter vector.
  void step(T* params, const T* grads, std::size_t n, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grads[i];
      m_[i] = beta1 * m_[i] + (1.0 - beta1) * g;
      v_[i] = beta2 * v_[i] + (1.0 - beta2) * g * g;
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      const double update = mhat / (std::sqrt(vhat) + eps) + weight_decay * params[i];
      params[i] = static_cast<T>(params[i] - lr * update);
    }
  }

 private:
  std::vector<double> m_, v_;
  long t_ = 0;
};

// Scales gradients in place when their global L2 norm exceeds max_norm.
template <class T>
inline double clip_global_norm(std::vector<T*> grad_spans, std::vector<std::size_t> sizes,
                               double max_norm) {
  double sq = 0.0;
  for (std::size_t s = 0; s < grad_spans.size(); ++s)
    for (std::size_t i = 0; i < sizes[s]; ++i) sq += static_cast<double>(grad_spans[s][i]) * grad_spans[s][i];
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (std::size_t s = 0; s < grad_spans.size(); ++s)
      for (std::size_t i = 0; i < sizes[s]; ++i)
        grad_spans[s][i] = static_cast<T>(grad_spans[s][i] * scale);
  }
  return norm;
}

// lr_min + (lr_init - lr_min) * (1 + cos(pi * epoch / max_epochs)) / 2
inline double cosine_lr(int epoch, int max_epochs, double lr_init, double lr_min) {
  if (max_epochs <= 0) return lr_init;
  const double phase = 3.14159265358979323846 * static_cast<double>(epoch) / max_epochs;
  return lr_min + (lr_init - lr_min) * (1.0 + std::cos(phase)) / 2.0;
}

// lr_init * factor^floor(epoch / period)
inline double step_lr(int epoch, int period, double lr_init, double factor) {
  if (period <= 0) return lr_init;
  return lr_init * std::pow(factor, static_cast<double>(epoch / period));
}

}  // namespace synseg

#endif
