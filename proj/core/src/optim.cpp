#include "dreamprm/autodiff/optim.hpp"

#include <cmath>

#include "dreamprm/error.hpp"

namespace dreamprm::ad {

ParamVector sgd_step(const ParamVector& params, const ParamVector& grad, double lr) {
  require_same_size(params, grad, "sgd_step");
  if (!(lr > 0.0)) throw Error("sgd_step: lr must be positive");
  ParamVector out = params;
  out.as_eigen() -= lr * grad.as_eigen();
  return out;
}

std::pair<ParamVector, OptimizerState> adamw_step(const ParamVector& params, const ParamVector& grad,
                                                  const OptimizerState& state, const AdamWConfig& cfg) {
  require_same_size(params, grad, "adamw_step");
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adamw_step: optimizer state length does not match parameters");
  }
  if (!(cfg.lr > 0.0)) throw Error("adamw_step: lr must be positive");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
    throw Error("adamw_step: betas must lie in [0, 1)");
  }
  if (!(cfg.eps > 0.0)) throw Error("adamw_step: eps must be positive");

  OptimizerState next = state;
  next.step = state.step + 1;
  // Same operation order as the on-tape update so both paths agree bitwise.
  const double inv_bc1 = 1.0 / (1.0 - std::pow(cfg.beta1, static_cast<double>(next.step)));
  const double inv_bc2 = 1.0 / (1.0 - std::pow(cfg.beta2, static_cast<double>(next.step)));

  ParamVector out = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    next.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    next.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * (g * g);
    const double m_hat = next.m[i] * inv_bc1;
    const double v_hat = next.v[i] * inv_bc2;
    double direction = m_hat / (std::sqrt(v_hat) + cfg.eps);
    if (cfg.weight_decay != 0.0) direction += cfg.weight_decay * params[i];
    out[i] = params[i] - direction * cfg.lr;
  }
  return {std::move(out), std::move(next)};
}

double step_decay_lr(double lr0, std::int64_t step_size, double gamma, std::int64_t t) {
  if (step_size < 1) throw Error("step_decay_lr: step_size must be >= 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw Error("step_decay_lr: gamma must lie in (0, 1]");
  if (t < 0) t = 0;
  return lr0 * std::pow(gamma, static_cast<double>(t / step_size));
}

}  // namespace dreamprm::ad
