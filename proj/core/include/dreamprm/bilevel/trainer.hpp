#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dreamprm/autodiff/hypergrad.hpp"
#include "dreamprm/autodiff/optim.hpp"
#include "dreamprm/prm/losses.hpp"
#include "dreamprm/prm/model.hpp"

namespace dreamprm::bilevel {

/// Whether the inner AdamW buffers survive from one unroll window to the next.
enum class InnerState { PERSIST, RESET };
/// Upper-level objective: aggregated-score loss, or the step-level MSE ablation.
enum class UpperObjective { AFL, PER_STEP };

struct TrainConfig {
  int unroll_steps = 5;
  double inner_lr = 1e-3;
  ad::InnerOptimizer inner_optimizer = ad::InnerOptimizer::ADAMW;
  double inner_weight_decay = 0.0;
  InnerState inner_state = InnerState::PERSIST;

  double outer_lr = 0.01;
  double outer_weight_decay = 1e-3;
  std::int64_t outer_step_size = 5000;
  double outer_gamma = 0.5;

  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  std::int64_t total_outer_iterations = 2000;
  UpperObjective upper_objective = UpperObjective::AFL;
  int batch_size = 32;       // prefixes per domain per inner step
  int meta_batch_size = 64;  // meta trajectories (AFL) or meta prefixes (PER_STEP) per outer step
  std::int64_t checkpoint_every = 500;
  double divergence_threshold = 1e6;

  prm::Architecture arch;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  ad::UnrollConfig unroll() const;
  ad::AdamWConfig outer_adamw(std::int64_t iteration) const;
};

/// Everything the training loops read; built once from the labelled data.
struct TrainData {
  std::vector<std::string> domain_names;
  std::vector<prm::PrefixTable> domains;
  prm::TrajectoryTable meta;       // used by AFL
  prm::PrefixTable meta_prefixes;  // used by PER_STEP

  std::size_t num_domains() const { return domains.size(); }
};

struct HistoryRecord {
  std::int64_t iteration = 0;
  double inner_loss = 0.0;  // mean weighted training loss over the window
  double meta_loss = 0.0;   // upper objective on the meta batch after the window
  std::vector<double> alpha;
  double lr = 0.0;  // scheduled upper-level learning rate

  bool operator==(const HistoryRecord&) const = default;
};

struct TrainHistory {
  std::vector<std::string> domain_names;
  std::vector<HistoryRecord> records;

  std::size_t size() const { return records.size(); }
  bool operator==(const TrainHistory&) const = default;
};

struct TrainResult {
  ad::ParamVector phi;
  ad::ParamVector alpha;
  TrainHistory history;
};

using CheckpointFn =
    std::function<void(std::int64_t completed_iterations, const ad::ParamVector& phi, const ad::ParamVector& alpha)>;

/// One optimizer step on the weighted training loss with alpha held fixed.
/// Advances `state` when the inner optimizer is AdamW.
ad::ParamVector inner_update(const ad::ParamVector& phi, const ad::ParamVector& alpha,
                             std::span<const prm::PrefixTable> batches, const TrainConfig& cfg,
                             ad::OptimizerState& state);

/// One AdamW step on alpha with the step-decayed upper learning rate for `iteration`.
ad::ParamVector outer_update(const ad::ParamVector& alpha, const ad::ParamVector& hypergrad,
                             ad::OptimizerState& outer_state, std::int64_t iteration, const TrainConfig& cfg);

/// Alternates `unroll_steps` inner updates with one hypergradient step on
/// alpha for `total_outer_iterations` iterations. Deterministic in cfg.seed.
/// Throws DivergenceError naming the iteration on non-finite or exploding loss.
TrainResult train_dreamprm(const TrainConfig& cfg, const TrainData& data, const CheckpointFn& on_checkpoint = {});

/// Same loop and batch stream with alpha frozen at 1 and no outer updates.
/// The meta loss is only monitored when `data.meta` is non-empty.
TrainResult train_vanilla(const TrainConfig& cfg, const TrainData& data, const CheckpointFn& on_checkpoint = {});

/// CSV columns: iteration,inner_loss,meta_loss,alpha_1..alpha_K,lr
void write_history_csv(const std::filesystem::path& path, const TrainHistory& history);
TrainHistory read_history_csv(const std::filesystem::path& path);

/// Trailing mean of `window` values ending at index `at` (inclusive).
double smoothed(std::span<const double> values, std::size_t at, std::size_t window);

}  // namespace dreamprm::bilevel
