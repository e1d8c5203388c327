#include "dreamprm/sim/simulator.hpp"

#include <algorithm>
#include <cmath>

#include "dreamprm/error.hpp"

namespace dreamprm::sim {

namespace {

double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

void require_probability(double v, const std::string& field) {
  if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(field, "must lie in [0, 1]");
}

struct Outcome {
  bool recorded_correct;
  int answer;
};

// Always consumes three draws so the stream layout does not depend on the knobs.
Outcome draw_outcome(Rng& rng, double success_prob, double label_noise) {
  const bool truly_correct = uniform01(rng) < success_prob;
  const bool flip = uniform01(rng) < label_noise;
  const int distractor = 1 + std::uniform_int_distribution<int>(0, kNumDistractors - 1)(rng);
  return {truly_correct != flip, truly_correct ? kCorrectAnswer : distractor};
}

}  // namespace

void DomainSpec::validate() const {
  if (name.empty()) throw ConfigError("name", "domain name must be non-empty");
  if (num_questions < 1) throw ConfigError(name + ".num_questions", "must be >= 1");
  if (steps_per_trajectory < 1) throw ConfigError(name + ".steps_per_trajectory", "must be >= 1");
  if (trajectories_per_question < 1) throw ConfigError(name + ".trajectories_per_question", "must be >= 1");
  require_probability(flaw_rate, name + ".flaw_rate");
  require_probability(label_noise, name + ".label_noise");
  require_probability(triviality, name + ".triviality");
  if (!(feature_noise_sigma >= 0.0) || !std::isfinite(feature_noise_sigma)) {
    throw ConfigError(name + ".feature_noise_sigma", "must be finite and >= 0");
  }
  if (!(base_solve_prob > 0.0 && base_solve_prob <= 1.0)) {
    throw ConfigError(name + ".base_solve_prob", "must lie in (0, 1]");
  }
  if (!(flaw_decay > 0.0 && flaw_decay < 1.0)) throw ConfigError(name + ".flaw_decay", "must lie in (0, 1)");
}

int Trajectory::num_flaws() const {
  return static_cast<int>(std::count_if(steps.begin(), steps.end(), [](const Step& s) { return s.flawed; }));
}

std::size_t Domain::num_trajectories() const {
  std::size_t n = 0;
  for (const auto& q : questions) n += q.trajectories.size();
  return n;
}

Completer Completer::for_question(const DomainSpec& spec, const Question& question) {
  return for_question(spec, question.easy);
}

Completer Completer::for_question(const DomainSpec& spec, bool easy) {
  Completer c;
  c.q0 = easy ? 1.0 : spec.base_solve_prob;
  c.rho = easy ? 1.0 : spec.flaw_decay;
  c.flaw_rate = spec.flaw_rate;
  c.feature_noise_sigma = spec.feature_noise_sigma;
  c.label_noise = spec.label_noise;
  c.steps = spec.steps_per_trajectory;
  return c;
}

Step sample_step(Rng& rng, int index, int steps, double flaw_rate, double feature_noise_sigma) {
  Step s;
  s.index = index;
  s.flawed = uniform01(rng) < flaw_rate;
  s.features.resize(kFeatureDim);
  std::normal_distribution<double> normal(0.0, 1.0);
  s.features[kFlawDim] = (s.flawed ? 1.0 : 0.0) + feature_noise_sigma * normal(rng);
  s.features[kPositionDim] = static_cast<double>(index) / static_cast<double>(steps);
  for (int d = 2; d < kFeatureDim; ++d) s.features[d] = normal(rng);
  return s;
}

double true_correctness_prob(const Completer& completer, std::span<const Step> prefix) {
  const auto flaws = std::count_if(prefix.begin(), prefix.end(), [](const Step& s) { return s.flawed; });
  const double p = completer.q0 * std::pow(completer.rho, static_cast<double>(flaws));
  return std::clamp(p, 0.0, 1.0);
}

double expected_completion_prob(const Completer& completer, std::span<const Step> prefix) {
  const double remaining = static_cast<double>(std::max<std::ptrdiff_t>(completer.steps - static_cast<std::ptrdiff_t>(prefix.size()), 0));
  const double p = std::clamp(
      true_correctness_prob(completer, prefix) * std::pow(1.0 - completer.flaw_rate * (1.0 - completer.rho), remaining),
      0.0, 1.0);
  return (1.0 - completer.label_noise) * p + completer.label_noise * (1.0 - p);
}

Trajectory complete_from_prefix(const Completer& completer, std::uint64_t question_id, std::span<const Step> prefix,
                                std::uint64_t seed) {
  if (static_cast<int>(prefix.size()) >= completer.steps) {
    throw Error("complete_from_prefix: prefix already has " + std::to_string(prefix.size()) + " of " +
                std::to_string(completer.steps) + " steps");
  }
  Rng rng(seed);
  Trajectory t;
  t.question_id = question_id;
  t.steps.assign(prefix.begin(), prefix.end());
  for (int i = static_cast<int>(prefix.size()) + 1; i <= completer.steps; ++i) {
    t.steps.push_back(sample_step(rng, i, completer.steps, completer.flaw_rate, completer.feature_noise_sigma));
  }
  const Outcome o = draw_outcome(rng, true_correctness_prob(completer, t.steps), completer.label_noise);
  t.final_correct = o.recorded_correct;
  t.answer = o.answer;
  return t;
}

Question generate_question(const DomainSpec& spec, std::uint64_t seed, std::uint64_t question_id) {
  Rng rng(derive_seed(seed, question_id));
  Question q;
  q.id = question_id;
  q.easy = uniform01(rng) < spec.triviality;
  const Completer completer = Completer::for_question(spec, q.easy);
  q.trajectories.reserve(static_cast<std::size_t>(spec.trajectories_per_question));
  for (int j = 0; j < spec.trajectories_per_question; ++j) {
    Trajectory t;
    t.question_id = question_id;
    for (int i = 1; i <= spec.steps_per_trajectory; ++i) {
      t.steps.push_back(sample_step(rng, i, spec.steps_per_trajectory, spec.flaw_rate, spec.feature_noise_sigma));
    }
    const Outcome o = draw_outcome(rng, true_correctness_prob(completer, t.steps), spec.label_noise);
    t.final_correct = o.recorded_correct;
    t.answer = o.answer;
    q.trajectories.push_back(std::move(t));
  }
  return q;
}

Domain generate_domain(const DomainSpec& spec, std::uint64_t seed) {
  spec.validate();
  Domain d;
  d.spec = spec;
  d.seed = seed;
  d.questions.reserve(static_cast<std::size_t>(spec.num_questions));
  for (int q = 0; q < spec.num_questions; ++q) {
    d.questions.push_back(generate_question(spec, seed, static_cast<std::uint64_t>(q)));
  }
  return d;
}

}  // namespace dreamprm::sim
