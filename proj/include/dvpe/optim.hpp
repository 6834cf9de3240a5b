#pragma once

#include "dvpe/config.hpp"
#include "dvpe/num/ops.hpp"

#include <string>
#include <vector>

namespace dvpe {

/// Linear warmup then cosine decay to lr * min_lr_ratio.
double cosine_lr(int step, const OptimConfig& cfg);

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(num::ParamStore<T>& store, double max_norm);

/// Decoupled-weight-decay Adam or momentum SGD over a whole ParamStore.
/// Decay applies to matrices named "*.w" only.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimConfig cfg) : cfg_(std::move(cfg)) {}

  void step(num::ParamStore<T>& store, double lr);

  long steps_taken() const { return t_; }
  void set_steps_taken(long t) { t_ = t; }
  /// First / second moment (or velocity) per parameter, in store order.
  std::vector<std::vector<T>>& first() { return m_; }
  std::vector<std::vector<T>>& second() { return v_; }
  const std::vector<std::vector<T>>& first() const { return m_; }
  const std::vector<std::vector<T>>& second() const { return v_; }
  const OptimConfig& config() const { return cfg_; }

 private:
  OptimConfig cfg_;
  long t_ = 0;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

}  // namespace dvpe
