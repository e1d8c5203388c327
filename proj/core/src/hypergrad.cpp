#include "dreamprm/autodiff/hypergrad.hpp"

#include <cmath>
#include <string>

#include "dreamprm/error.hpp"

namespace dreamprm::ad {

namespace {

Matrix column(const ParamVector& p) { return p.as_eigen(); }

ParamVector with_layout(const Matrix& col, const ParamVector& like) {
  std::vector<double> v(col.data(), col.data() + col.size());
  return ParamVector(std::move(v), like.blocks());
}

}  // namespace

Var inner_update_on_tape(Tape& tape, Var phi, Var grad, const UnrollConfig& cfg, OptimizerState& state) {
  if (cfg.optimizer == InnerOptimizer::SGD) return phi - affine(grad, cfg.lr, 0.0);

  const auto n = static_cast<std::size_t>(phi.rows());
  if (state.m.size() != n || state.v.size() != n) throw ShapeError("inner_update_on_tape: optimizer state length");
  const std::int64_t t = state.step + 1;
  const double inv_bc1 = 1.0 / (1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
  const double inv_bc2 = 1.0 / (1.0 - std::pow(cfg.beta2, static_cast<double>(t)));

  // Previous moments enter as constants.
  Eigen::Map<const Eigen::VectorXd> m_prev(state.m.data(), static_cast<Eigen::Index>(n));
  Eigen::Map<const Eigen::VectorXd> v_prev(state.v.data(), static_cast<Eigen::Index>(n));
  Var m = tape.constant(cfg.beta1 * m_prev) + affine(grad, 1.0 - cfg.beta1, 0.0);
  Var v = tape.constant(cfg.beta2 * v_prev) + affine(square(grad), 1.0 - cfg.beta2, 0.0);
  Var m_hat = affine(m, inv_bc1, 0.0);
  Var v_hat = affine(v, inv_bc2, 0.0);
  Var direction = m_hat / affine(sqrt(v_hat), 1.0, cfg.eps);
  if (cfg.weight_decay != 0.0) direction = direction + affine(phi, cfg.weight_decay, 0.0);

  const Matrix& mv = m.value();
  const Matrix& vv = v.value();
  state.m.assign(mv.data(), mv.data() + n);
  state.v.assign(vv.data(), vv.data() + n);
  state.step = t;
  return phi - affine(direction, cfg.lr, 0.0);
}

UnrollResult hypergrad_unrolled(const InnerLossFn& inner_loss, const MetaLossFn& meta_loss, const ParamVector& phi0,
                                const ParamVector& alpha, const UnrollConfig& cfg,
                                const std::optional<OptimizerState>& state) {
  if (cfg.steps < 1) throw Error("hypergrad_unrolled: need at least one unroll step");
  if (!(cfg.lr > 0.0)) throw Error("hypergrad_unrolled: inner lr must be positive");

  UnrollResult result;
  result.state = state.value_or(OptimizerState::fresh(phi0.size()));
  if (cfg.optimizer == InnerOptimizer::ADAMW &&
      (result.state.m.size() != phi0.size() || result.state.v.size() != phi0.size())) {
    throw ShapeError("hypergrad_unrolled: optimizer state does not match parameter length");
  }

  Tape tape;
  Var a = tape.leaf(column(alpha), "alpha");
  Var phi = tape.leaf(column(phi0), "phi");

  for (int step = 0; step < cfg.steps; ++step) {
    Var loss = inner_loss(tape, phi, a, step);
    const double value = loss.scalar();
    if (!std::isfinite(value)) {
      throw NumericalError("inner step " + std::to_string(step),
                           "non-finite inner loss at inner step " + std::to_string(step));
    }
    result.inner_losses.push_back(value);
    Var g;
    try {
      const Var wrt[] = {phi};
      g = tape.grad(loss, wrt, /*create_graph=*/true)[0];
    } catch (const NumericalError& e) {
      throw NumericalError("inner step " + std::to_string(step), "inner step " + std::to_string(step) + ": " + e.what());
    }
    phi = inner_update_on_tape(tape, phi, g, cfg, result.state);
    if (!phi.value().allFinite()) {
      throw NumericalError("inner step " + std::to_string(step),
                           "non-finite parameters after inner step " + std::to_string(step));
    }
  }

  Var meta = meta_loss(tape, phi);
  result.meta_loss = meta.scalar();
  if (!std::isfinite(result.meta_loss)) throw NumericalError("meta loss", "non-finite meta loss after unroll");

  const Var wrt[] = {a};
  const auto grads = tape.gradients(meta, wrt);
  result.meta_grad = with_layout(grads[0], alpha);
  result.phi = with_layout(phi.value(), phi0);
  return result;
}

}  // namespace dreamprm::ad
