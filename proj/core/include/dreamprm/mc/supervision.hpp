#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dreamprm/sim/simulator.hpp"

namespace dreamprm::mc {

/// One process-supervision example: the first `prefix_len` steps of a sampled
/// trajectory and the fraction of completions from there that ended correct.
struct LabeledPrefix {
  std::uint64_t question_id = 0;
  int trajectory = 0;  // index of the source trajectory within its question
  int prefix_len = 1;  // i, 1-based
  int steps = 1;       // n, full trajectory length
  std::vector<std::vector<double>> features;  // one row per prefix step
  int correct = 0;
  int num_rollouts = 1;

  double p() const { return static_cast<double>(correct) / static_cast<double>(num_rollouts); }
  bool operator==(const LabeledPrefix&) const = default;
};

struct LabeledDataset {
  std::string domain;
  std::uint64_t seed = 0;
  int num_rollouts = 8;
  std::vector<LabeledPrefix> items;

  bool operator==(const LabeledDataset&) const = default;
};

/// Runs `num_rollouts` completions of `prefix` (seeds derived from `seed` and
/// the rollout index) and records the number that finished correct.
LabeledPrefix monte_carlo_label(const sim::Completer& completer, std::uint64_t question_id,
                                std::span<const sim::Step> prefix, int num_rollouts, std::uint64_t seed);

/// One LabeledPrefix per step of every trajectory in `domain`.
///
/// Prefixes shorter than the trajectory are labelled by Monte-Carlo
/// completion. A full-length prefix has exactly one possible completion (the
/// trajectory itself), so its label is the recorded final_correct flag.
LabeledDataset label_dataset(const sim::Domain& domain, int num_rollouts, std::uint64_t seed);

/// False when every label of the question is 0 or every label is 1.
/// Throws on an empty list.
bool dynamic_filter(std::span<const LabeledPrefix> labels_for_question);

struct FilterStats {
  std::size_t questions_total = 0;
  std::size_t questions_discarded = 0;

  double discard_fraction() const {
    return questions_total == 0 ? 0.0
                                : static_cast<double>(questions_discarded) / static_cast<double>(questions_total);
  }
};

/// Applies dynamic_filter per question (all trajectories pooled). Labels of one
/// question must be contiguous, as produced by label_dataset.
LabeledDataset filter_dataset(const LabeledDataset& data, FilterStats* stats = nullptr);

inline constexpr int kLabelSchemaVersion = 1;

/// One LabeledPrefix per line with provenance (domain, seed, num_rollouts).
void write_labels_jsonl(const std::filesystem::path& path, const LabeledDataset& data);
LabeledDataset read_labels_jsonl(const std::filesystem::path& path);

}  // namespace dreamprm::mc
