#pragma once

#include <span>
#include <vector>

#include "dreamprm/autodiff/param_vector.hpp"
#include "dreamprm/autodiff/tape.hpp"
#include "dreamprm/mc/supervision.hpp"
#include "dreamprm/prm/model.hpp"
#include "dreamprm/sim/simulator.hpp"

namespace dreamprm::prm {

/// Clamp applied to step scores before taking log-odds.
inline constexpr double kScoreClampEps = 1e-6;

/// Precomputed PRM inputs and Monte-Carlo targets for a labelled domain.
struct PrefixTable {
  ad::Matrix inputs;        // N x input_dim
  Eigen::VectorXd targets;  // N, the p_i labels

  Eigen::Index size() const { return inputs.rows(); }
};

/// Precomputed inputs for whole trajectories of a common length n. Rows are
/// grouped by trajectory: row t * n + (i - 1) holds prefix i of trajectory t.
struct TrajectoryTable {
  ad::Matrix inputs;         // (T * n) x input_dim
  Eigen::VectorXd outcomes;  // T, correctness signal r in {0, 1}
  int steps = 0;

  Eigen::Index size() const { return outcomes.size(); }
};

PrefixTable make_prefix_table(std::span<const mc::LabeledPrefix> labels);
/// Throws if trajectories differ in length.
TrajectoryTable make_trajectory_table(std::span<const sim::Trajectory> trajectories);

PrefixTable gather(const PrefixTable& table, std::span<const Eigen::Index> rows);
TrajectoryTable gather(const TrajectoryTable& table, std::span<const Eigen::Index> trajectories);

// Tape builders. `phi` is the flat parameter column, `alpha` a K x 1 column.

/// mean_i (V(x_i) - p_i)^2
ad::Var train_loss_node(ad::Var phi, const Architecture& arch, const PrefixTable& batch);
/// sum_k alpha_k * train_loss(D_k)
ad::Var weighted_train_loss_node(ad::Var phi, ad::Var alpha, const Architecture& arch,
                                 std::span<const PrefixTable> per_domain);
/// Per-trajectory sum of clamped step log-odds, as a 1 x T node.
ad::Var aggregate_node(ad::Var step_scores, int steps);
/// mean_t (sigmoid(A(p_t)) - r_t)^2
ad::Var meta_loss_node(ad::Var phi, const Architecture& arch, const TrajectoryTable& batch);

// Plain evaluations.

double train_loss_single_domain(const ad::ParamVector& phi, const Architecture& arch,
                                std::span<const mc::LabeledPrefix> labels);
double weighted_train_loss(const ad::ParamVector& phi, const ad::ParamVector& alpha, const Architecture& arch,
                           std::span<const std::vector<mc::LabeledPrefix>> per_domain);
/// sum_i log(p_i / (1 - p_i)) with p_i clamped to [eps, 1 - eps].
double aggregate(std::span<const double> step_scores);
/// 1 iff the trajectory's recorded final answer is correct.
int correctness_signal(const sim::Trajectory& trajectory);
double meta_loss(const ad::ParamVector& phi, const Architecture& arch, std::span<const sim::Trajectory> meta_set);
/// Step-level meta objective used when the aggregation loss is ablated.
double per_step_meta_loss(const ad::ParamVector& phi, const Architecture& arch,
                          std::span<const mc::LabeledPrefix> labeled_meta);

}  // namespace dreamprm::prm
