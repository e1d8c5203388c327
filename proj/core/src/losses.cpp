#include "dreamprm/prm/losses.hpp"

#include <algorithm>
#include <cmath>

#include "dreamprm/error.hpp"

namespace dreamprm::prm {

namespace {

ad::Matrix column(const ad::ParamVector& p) { return p.as_eigen(); }

}  // namespace

PrefixTable make_prefix_table(std::span<const mc::LabeledPrefix> labels) {
  PrefixTable t;
  if (labels.empty()) return t;
  const auto first = prefix_input(labels.front().features);
  t.inputs.resize(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(first.size()));
  t.targets.resize(static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = prefix_input(labels[i].features);
    if (row.size() != first.size()) throw ShapeError("make_prefix_table: inconsistent feature width");
    t.inputs.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(row.data(), static_cast<Eigen::Index>(row.size()));
    t.targets(static_cast<Eigen::Index>(i)) = labels[i].p();
  }
  return t;
}

TrajectoryTable make_trajectory_table(std::span<const sim::Trajectory> trajectories) {
  TrajectoryTable t;
  if (trajectories.empty()) return t;
  const int n = static_cast<int>(trajectories.front().steps.size());
  if (n == 0) throw Error("make_trajectory_table: empty trajectory");
  const auto width = static_cast<Eigen::Index>(2 * trajectories.front().steps.front().features.size() + 1);
  t.steps = n;
  t.inputs.resize(static_cast<Eigen::Index>(trajectories.size()) * n, width);
  t.outcomes.resize(static_cast<Eigen::Index>(trajectories.size()));
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    const auto& traj = trajectories[k];
    if (static_cast<int>(traj.steps.size()) != n) throw ShapeError("make_trajectory_table: trajectories differ in length");
    const std::span<const sim::Step> steps(traj.steps);
    for (int i = 0; i < n; ++i) {
      const auto row = prefix_input(steps.first(static_cast<std::size_t>(i + 1)));
      t.inputs.row(static_cast<Eigen::Index>(k) * n + i) =
          Eigen::Map<const Eigen::RowVectorXd>(row.data(), static_cast<Eigen::Index>(row.size()));
    }
    t.outcomes(static_cast<Eigen::Index>(k)) = correctness_signal(traj);
  }
  return t;
}

PrefixTable gather(const PrefixTable& table, std::span<const Eigen::Index> rows) {
  PrefixTable out;
  out.inputs.resize(static_cast<Eigen::Index>(rows.size()), table.inputs.cols());
  out.targets.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.inputs.row(static_cast<Eigen::Index>(i)) = table.inputs.row(rows[i]);
    out.targets(static_cast<Eigen::Index>(i)) = table.targets(rows[i]);
  }
  return out;
}

TrajectoryTable gather(const TrajectoryTable& table, std::span<const Eigen::Index> trajectories) {
  TrajectoryTable out;
  const int n = table.steps;
  out.steps = n;
  out.inputs.resize(static_cast<Eigen::Index>(trajectories.size()) * n, table.inputs.cols());
  out.outcomes.resize(static_cast<Eigen::Index>(trajectories.size()));
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    out.inputs.middleRows(static_cast<Eigen::Index>(k) * n, n) = table.inputs.middleRows(trajectories[k] * n, n);
    out.outcomes(static_cast<Eigen::Index>(k)) = table.outcomes(trajectories[k]);
  }
  return out;
}

ad::Var train_loss_node(ad::Var phi, const Architecture& arch, const PrefixTable& batch) {
  if (batch.size() == 0) throw Error("train_loss: empty batch");
  ad::Tape& tape = phi.tape();
  auto scores = forward(phi, arch, tape.constant(batch.inputs));
  return ad::mean(ad::square(scores - tape.constant(batch.targets)));
}

ad::Var weighted_train_loss_node(ad::Var phi, ad::Var alpha, const Architecture& arch,
                                 std::span<const PrefixTable> per_domain) {
  if (static_cast<std::size_t>(alpha.rows()) != per_domain.size() || alpha.cols() != 1) {
    throw ShapeError("weighted_train_loss: " + std::to_string(alpha.rows()) + " weights for " +
                     std::to_string(per_domain.size()) + " domains");
  }
  if (per_domain.empty()) throw Error("weighted_train_loss: no domains");
  ad::Var total;
  for (std::size_t k = 0; k < per_domain.size(); ++k) {
    auto term = ad::slice(alpha, static_cast<Eigen::Index>(k), 1, 1) * train_loss_node(phi, arch, per_domain[k]);
    total = total.valid() ? total + term : term;
  }
  return total;
}

ad::Var aggregate_node(ad::Var step_scores, int steps) {
  if (steps < 1 || step_scores.cols() != 1 || step_scores.rows() % steps != 0) {
    throw ShapeError("aggregate: score column does not split into trajectories of length " + std::to_string(steps));
  }
  auto c = ad::clamp(step_scores, kScoreClampEps, 1.0 - kScoreClampEps);
  auto log_odds = ad::log(c) - ad::log(1.0 - c);
  return ad::sum_rows(ad::reshape(log_odds, steps, step_scores.rows() / steps));
}

ad::Var meta_loss_node(ad::Var phi, const Architecture& arch, const TrajectoryTable& batch) {
  if (batch.size() == 0) throw Error("meta_loss: empty meta batch");
  ad::Tape& tape = phi.tape();
  auto scores = forward(phi, arch, tape.constant(batch.inputs));
  auto agg = aggregate_node(scores, batch.steps);
  return ad::mean(ad::square(ad::sigmoid(agg) - tape.constant(batch.outcomes.transpose())));
}

double train_loss_single_domain(const ad::ParamVector& phi, const Architecture& arch,
                                std::span<const mc::LabeledPrefix> labels) {
  if (labels.empty()) throw Error("train_loss_single_domain: no labelled prefixes");
  ad::Tape tape;
  auto p = tape.constant(column(phi));
  return train_loss_node(p, arch, make_prefix_table(labels)).scalar();
}

double weighted_train_loss(const ad::ParamVector& phi, const ad::ParamVector& alpha, const Architecture& arch,
                           std::span<const std::vector<mc::LabeledPrefix>> per_domain) {
  if (alpha.size() != per_domain.size()) {
    throw ShapeError("weighted_train_loss: " + std::to_string(alpha.size()) + " weights for " +
                     std::to_string(per_domain.size()) + " domains");
  }
  std::vector<PrefixTable> tables;
  for (const auto& d : per_domain) tables.push_back(make_prefix_table(d));
  ad::Tape tape;
  return weighted_train_loss_node(tape.constant(column(phi)), tape.constant(column(alpha)), arch, tables).scalar();
}

double aggregate(std::span<const double> step_scores) {
  if (step_scores.empty()) throw Error("aggregate: empty score list");
  double total = 0.0;
  for (double p : step_scores) {
    const double c = std::clamp(p, kScoreClampEps, 1.0 - kScoreClampEps);
    total += std::log(c) - std::log(1.0 - c);
  }
  return total;
}

int correctness_signal(const sim::Trajectory& trajectory) { return trajectory.final_correct ? 1 : 0; }

double meta_loss(const ad::ParamVector& phi, const Architecture& arch, std::span<const sim::Trajectory> meta_set) {
  if (meta_set.empty()) throw Error("meta_loss: empty meta set");
  ad::Tape tape;
  return meta_loss_node(tape.constant(column(phi)), arch, make_trajectory_table(meta_set)).scalar();
}

double per_step_meta_loss(const ad::ParamVector& phi, const Architecture& arch,
                          std::span<const mc::LabeledPrefix> labeled_meta) {
  return train_loss_single_domain(phi, arch, labeled_meta);
}

}  // namespace dreamprm::prm
