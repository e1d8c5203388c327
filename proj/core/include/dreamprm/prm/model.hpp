#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dreamprm/autodiff/param_vector.hpp"
#include "dreamprm/autodiff/tape.hpp"
#include "dreamprm/sim/simulator.hpp"

namespace dreamprm::prm {

/// Feed-forward step scorer: input -> tanh(hidden) -> tanh(hidden) -> sigmoid.
///
/// The input row for a prefix of i steps is
///   mean(step features over the prefix) ++ features of step i ++ i/n
/// so its width is 2 * feature_dim + 1.
struct Architecture {
  int feature_dim = sim::kFeatureDim;
  int hidden = 32;

  int input_dim() const { return 2 * feature_dim + 1; }
  /// W1, b1, W2, b2, W3, b3 in that order; weights are (in x out).
  std::vector<ad::Block> blocks() const;
  std::size_t num_params() const;
  bool operator==(const Architecture&) const = default;
};

/// Uniform(-s, s) weights with s = sqrt(6 / (fan_in + fan_out)), zero biases.
/// With `zero_output` the last layer starts at zero so every score is 0.5.
ad::ParamVector init_params(const Architecture& arch, std::uint64_t seed, bool zero_output = true);

/// Input row for a prefix given its per-step feature rows. i/n is read from
/// the position feature of the last step. Throws on an empty or non-finite prefix.
std::vector<double> prefix_input(std::span<const std::vector<double>> prefix_features);
std::vector<double> prefix_input(std::span<const sim::Step> prefix);

/// Scores of every input row (B x input_dim) as a B x 1 node.
ad::Var forward(ad::Var phi, const Architecture& arch, ad::Var inputs);

/// Same computation without a tape.
Eigen::VectorXd score_rows(const ad::ParamVector& phi, const Architecture& arch, const ad::Matrix& inputs);

/// V_phi(prefix), in (0, 1).
double score_step(const ad::ParamVector& phi, const Architecture& arch, std::span<const sim::Step> prefix);

/// Score of every prefix 1..n of a trajectory.
std::vector<double> score_trajectory(const ad::ParamVector& phi, const Architecture& arch,
                                     const sim::Trajectory& trajectory);

}  // namespace dreamprm::prm
