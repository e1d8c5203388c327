#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "dreamprm/autodiff/param_vector.hpp"

namespace dreamprm::ad {

/// Adam moment buffers. `step` counts completed updates.
struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  static OptimizerState fresh(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0}; }
  bool operator==(const OptimizerState&) const = default;
};

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// params - lr * grad.
ParamVector sgd_step(const ParamVector& params, const ParamVector& grad, double lr);

/// Decoupled weight decay Adam:
///   m = b1 m + (1-b1) g,  v = b2 v + (1-b2) g^2,
///   p = p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
/// with bias-corrected m_hat, v_hat. Inputs are not modified.
std::pair<ParamVector, OptimizerState> adamw_step(const ParamVector& params, const ParamVector& grad,
                                                  const OptimizerState& state, const AdamWConfig& cfg);

/// lr0 * gamma^floor(t / step_size).
double step_decay_lr(double lr0, std::int64_t step_size, double gamma, std::int64_t t);

}  // namespace dreamprm::ad
