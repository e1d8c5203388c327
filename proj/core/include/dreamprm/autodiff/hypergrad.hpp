#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "dreamprm/autodiff/optim.hpp"
#include "dreamprm/autodiff/param_vector.hpp"
#include "dreamprm/autodiff/tape.hpp"

namespace dreamprm::ad {

enum class InnerOptimizer { SGD, ADAMW };

/// Builds the lower-level loss on `tape` from the current inner parameters
/// (a column vector node) and the upper-level weights. `step` is the index of
/// the inner update inside the unroll window.
using InnerLossFn = std::function<Var(Tape& tape, Var phi, Var alpha, int step)>;
/// Builds the upper-level loss from the unrolled inner parameters.
using MetaLossFn = std::function<Var(Tape& tape, Var phi)>;

struct UnrollConfig {
  int steps = 5;
  double lr = 1e-3;
  InnerOptimizer optimizer = InnerOptimizer::SGD;
  // AdamW only.
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamWConfig adamw() const { return {lr, weight_decay, beta1, beta2, eps}; }
};

struct UnrollResult {
  ParamVector phi;                   // parameters after `steps` inner updates
  ParamVector meta_grad;             // d meta_loss(phi_k) / d alpha
  double meta_loss = 0.0;            // at phi_k
  std::vector<double> inner_losses;  // one per inner step, before its update
  OptimizerState state;              // inner optimizer state after the window
};

/// Runs `steps` inner updates phi <- phi - lr * grad_phi inner_loss(phi, alpha)
/// on one tape and differentiates meta_loss(phi_k) with respect to alpha by
/// reverse-mode through the whole unroll.
///
/// SGD steps are differentiated exactly, including the mixed second-order
/// terms. For AdamW the moment buffers carried in from the previous step are
/// treated as constants; the current step's m and v stay functions of the
/// current gradient. `state` seeds the AdamW buffers (fresh if absent).
UnrollResult hypergrad_unrolled(const InnerLossFn& inner_loss, const MetaLossFn& meta_loss, const ParamVector& phi0,
                                const ParamVector& alpha, const UnrollConfig& cfg,
                                const std::optional<OptimizerState>& state = std::nullopt);

/// One inner update expressed on the tape; shared by the unroll and by callers
/// that need the same arithmetic. Advances `state` for AdamW.
Var inner_update_on_tape(Tape& tape, Var phi, Var grad, const UnrollConfig& cfg, OptimizerState& state);

}  // namespace dreamprm::ad
