#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dreamprm/rng.hpp"

namespace dreamprm::sim {

/// Feature layout shared by every domain: dim 0 carries the flaw indicator
/// (plus noise), dim 1 the normalized position i/n, the rest are distractors.
inline constexpr int kFeatureDim = 8;
inline constexpr int kFlawDim = 0;
inline constexpr int kPositionDim = 1;
/// Answer id of a correct final answer; wrong answers use 1..kNumDistractors.
inline constexpr int kCorrectAnswer = 0;
inline constexpr int kNumDistractors = 4;

/// Generator knobs for one synthetic domain.
struct DomainSpec {
  std::string name = "domain";
  int num_questions = 1000;
  int steps_per_trajectory = 5;
  int trajectories_per_question = 8;
  double flaw_rate = 0.3;            // per-step flaw probability
  double label_noise = 0.0;          // probability a recorded correctness flag is flipped
  double triviality = 0.0;           // probability a question is easy (always solved)
  double feature_noise_sigma = 0.1;  // noise on the flaw-indicator dimension
  double base_solve_prob = 1.0;      // q0
  double flaw_decay = 0.1;           // rho

  /// Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const DomainSpec&) const = default;
};

struct Step {
  std::vector<double> features;
  bool flawed = false;
  int index = 1;  // 1-based position in the trajectory

  bool operator==(const Step&) const = default;
};

struct Trajectory {
  std::uint64_t question_id = 0;
  std::vector<Step> steps;
  bool final_correct = false;  // recorded flag (after label noise)
  int answer = kCorrectAnswer;

  int num_flaws() const;
  bool operator==(const Trajectory&) const = default;
};

struct Question {
  std::uint64_t id = 0;
  bool easy = false;
  std::vector<Trajectory> trajectories;

  bool operator==(const Question&) const = default;
};

struct Domain {
  DomainSpec spec;
  std::uint64_t seed = 0;
  std::vector<Question> questions;

  std::size_t num_trajectories() const;
  bool operator==(const Domain&) const = default;
};

/// Stand-in for the generating model: finishes partial trajectories.
///
/// The chance that a completion reaches the right answer is
/// q0 * rho^(flawed steps), independent of where the flaws sit.
struct Completer {
  double q0 = 0.9;
  double rho = 0.5;
  double flaw_rate = 0.3;
  double feature_noise_sigma = 0.1;
  double label_noise = 0.0;
  int steps = 5;

  /// Completer for `question` drawn from `spec`; easy questions always succeed.
  static Completer for_question(const DomainSpec& spec, const Question& question);
  static Completer for_question(const DomainSpec& spec, bool easy);
};

/// Deterministic in (spec, seed). Question q is generated from its own
/// stream derive_seed(seed, q), so questions can be produced in any order.
Domain generate_domain(const DomainSpec& spec, std::uint64_t seed);
Question generate_question(const DomainSpec& spec, std::uint64_t seed, std::uint64_t question_id);

/// q0 * rho^f clipped to [0, 1], f = flawed steps in `prefix`.
double true_correctness_prob(const Completer& completer, std::span<const Step> prefix);

/// Probability that complete_from_prefix records a correct outcome: the
/// steps still to come are flawed at `flaw_rate` each, so
/// P = q0 * rho^f * (1 - flaw_rate * (1 - rho))^(n - i), then label noise
/// mixes P with 1 - P. Equals true_correctness_prob when nothing is left to
/// sample and there is no label noise.
double expected_completion_prob(const Completer& completer, std::span<const Step> prefix);
/// Appends freshly sampled steps until the trajectory has `completer.steps`
/// steps and draws final correctness from the full flaw count.
/// Throws if the prefix is already complete.
Trajectory complete_from_prefix(const Completer& completer, std::uint64_t question_id, std::span<const Step> prefix,
                                std::uint64_t seed);

/// Draws one step at 1-based `index`: flaw flag, then features.
Step sample_step(Rng& rng, int index, int steps, double flaw_rate, double feature_noise_sigma);

}  // namespace dreamprm::sim
