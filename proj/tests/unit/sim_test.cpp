#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "dreamprm/error.hpp"
#include "dreamprm/sim/dataset_io.hpp"
#include "dreamprm/sim/simulator.hpp"

using namespace dreamprm;
using sim::Step;

namespace {

std::vector<Step> prefix_with_flaws(int flawed, int clean, int n) {
  std::vector<Step> out;
  for (int i = 0; i < flawed + clean; ++i) {
    Step s;
    s.index = i + 1;
    s.flawed = i < flawed;
    s.features.assign(sim::kFeatureDim, 0.0);
    s.features[sim::kFlawDim] = s.flawed ? 1.0 : 0.0;
    s.features[sim::kPositionDim] = static_cast<double>(i + 1) / n;
    out.push_back(s);
  }
  return out;
}

sim::Completer completer(double q0, double rho, double flaw_rate = 0.0, int steps = 5) {
  sim::Completer c;
  c.q0 = q0;
  c.rho = rho;
  c.flaw_rate = flaw_rate;
  c.steps = steps;
  return c;
}

}  // namespace

TEST_SUITE("sim") {

TEST_CASE("flaw_rate 0 yields no flawed steps") {
  sim::DomainSpec s;
  s.num_questions = 30;
  s.flaw_rate = 0.0;
  const auto d = sim::generate_domain(s, 5);
  for (const auto& q : d.questions)
    for (const auto& t : q.trajectories) CHECK(t.num_flaws() == 0);
}

TEST_CASE("triviality 1 makes every outcome correct before label noise") {
  sim::DomainSpec s;
  s.num_questions = 30;
  s.triviality = 1.0;
  s.flaw_rate = 0.9;
  const auto d = sim::generate_domain(s, 6);
  for (const auto& q : d.questions) {
    CHECK(q.easy);
    for (const auto& t : q.trajectories) {
      CHECK(t.final_correct);
      CHECK(t.answer == sim::kCorrectAnswer);
    }
  }
}

TEST_CASE("generation is deterministic in (spec, seed)") {
  sim::DomainSpec s;
  s.num_questions = 20;
  s.label_noise = 0.2;
  s.triviality = 0.3;
  CHECK(sim::generate_domain(s, 42) == sim::generate_domain(s, 42));
  CHECK_FALSE(sim::generate_domain(s, 42) == sim::generate_domain(s, 43));
  // Questions come from independent streams.
  CHECK(sim::generate_question(s, 42, 7) == sim::generate_domain(s, 42).questions[7]);
}

TEST_CASE("feature layout") {
  sim::DomainSpec s;
  s.num_questions = 5;
  s.feature_noise_sigma = 0.0;
  const auto d = sim::generate_domain(s, 1);
  for (const auto& q : d.questions)
    for (const auto& t : q.trajectories)
      for (const auto& st : t.steps) {
        REQUIRE(st.features.size() == static_cast<std::size_t>(sim::kFeatureDim));
        CHECK(st.features[sim::kFlawDim] == (st.flawed ? 1.0 : 0.0));
        CHECK(st.features[sim::kPositionDim] == doctest::Approx(static_cast<double>(st.index) / s.steps_per_trajectory));
      }
}

TEST_CASE("zero feature noise makes the flaw dimension a perfect linear probe") {
  sim::DomainSpec s;
  s.num_questions = 200;
  s.feature_noise_sigma = 0.0;
  const auto d = sim::generate_domain(s, 2);
  std::size_t total = 0, right = 0;
  for (const auto& q : d.questions)
    for (const auto& t : q.trajectories)
      for (const auto& st : t.steps) {
        ++total;
        right += (st.features[sim::kFlawDim] > 0.5) == st.flawed;
      }
  CHECK(right == total);
}

TEST_CASE("true_correctness_prob examples") {
  CHECK(sim::true_correctness_prob(completer(0.8, 0.5), prefix_with_flaws(0, 3, 5)) == doctest::Approx(0.8));
  CHECK(sim::true_correctness_prob(completer(0.8, 0.5), prefix_with_flaws(2, 1, 5)) == doctest::Approx(0.2));
  for (int f = 0; f <= 4; ++f) CHECK(sim::true_correctness_prob(completer(1.0, 1.0), prefix_with_flaws(f, 0, 5)) == 1.0);
}

TEST_CASE("monotone in flaws: a flawed step never helps, a clean step changes nothing") {
  const auto c = completer(0.9, 0.4);
  for (int f = 0; f < 4; ++f) {
    for (int clean = 0; clean + f < 4; ++clean) {
      const double base = sim::true_correctness_prob(c, prefix_with_flaws(f, clean, 5));
      CHECK(sim::true_correctness_prob(c, prefix_with_flaws(f + 1, clean, 5)) <= base);
      CHECK(sim::true_correctness_prob(c, prefix_with_flaws(f, clean + 1, 5)) == base);
    }
  }
}

TEST_CASE("complete_from_prefix with degenerate probabilities") {
  auto sure = completer(1.0, 1.0 - 1e-12);
  auto none = completer(1e-300, 0.5);
  const auto prefix = prefix_with_flaws(0, 2, 5);
  for (std::uint64_t s = 0; s < 200; ++s) {
    CHECK(sim::complete_from_prefix(sure, 0, prefix, s).final_correct);
    CHECK_FALSE(sim::complete_from_prefix(none, 0, prefix, s).final_correct);
  }
}

TEST_CASE("complete_from_prefix keeps the prefix, fills to n, is seed-deterministic") {
  const auto c = completer(0.9, 0.5, 0.3);
  const auto prefix = prefix_with_flaws(1, 1, 5);
  const auto t = sim::complete_from_prefix(c, 3, prefix, 99);
  REQUIRE(t.steps.size() == 5);
  CHECK(t.steps[0] == prefix[0]);
  CHECK(t.steps[1] == prefix[1]);
  for (int i = 0; i < 5; ++i) CHECK(t.steps[static_cast<std::size_t>(i)].index == i + 1);
  CHECK(t == sim::complete_from_prefix(c, 3, prefix, 99));
  CHECK_THROWS(sim::complete_from_prefix(c, 3, prefix_with_flaws(0, 5, 5), 1));
}

TEST_CASE("empirical completion rate within 3 binomial sd of the analytic value") {
  // No further flaws are sampled, so the analytic value is q0 rho^f.
  const auto c = completer(0.8, 0.5, 0.0);
  const auto prefix = prefix_with_flaws(1, 1, 5);
  const int n = 10000;
  int hits = 0;
  for (int s = 0; s < n; ++s) hits += sim::complete_from_prefix(c, 0, prefix, static_cast<std::uint64_t>(s)).final_correct;
  const double p = sim::true_correctness_prob(c, prefix);
  CHECK(std::abs(hits / double(n) - p) <= 3 * std::sqrt(p * (1 - p) / n));
}

TEST_CASE("expected_completion_prob accounts for future flaws and label noise") {
  auto c = completer(0.9, 0.5, 0.3);
  c.label_noise = 0.1;
  const auto prefix = prefix_with_flaws(1, 1, 5);
  const double p = 0.9 * 0.5 * std::pow(1 - 0.3 * 0.5, 3);
  CHECK(sim::expected_completion_prob(c, prefix) == doctest::Approx(0.9 * p + 0.1 * (1 - p)).epsilon(1e-14));
  const int n = 10000;
  int hits = 0;
  for (int s = 0; s < n; ++s) hits += sim::complete_from_prefix(c, 0, prefix, static_cast<std::uint64_t>(s)).final_correct;
  const double e = sim::expected_completion_prob(c, prefix);
  CHECK(std::abs(hits / double(n) - e) <= 3 * std::sqrt(e * (1 - e) / n));
}

TEST_CASE("label noise flips recorded flags but not answers") {
  sim::DomainSpec s;
  s.num_questions = 400;
  s.label_noise = 0.5;
  const auto d = sim::generate_domain(s, 3);
  std::size_t total = 0, disagree = 0;
  for (const auto& q : d.questions)
    for (const auto& t : q.trajectories) {
      ++total;
      disagree += t.final_correct != (t.answer == sim::kCorrectAnswer);
    }
  const double frac = static_cast<double>(disagree) / static_cast<double>(total);
  CHECK(std::abs(frac - 0.5) < 3 * std::sqrt(0.25 / static_cast<double>(total)));
}

TEST_CASE("spec validation names the field") {
  sim::DomainSpec s;
  s.name = "x";
  s.flaw_rate = 1.5;
  try {
    s.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "x.flaw_rate");
  }
  s.flaw_rate = 0.3;
  s.flaw_decay = 1.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.flaw_decay = 0.5;
  s.num_questions = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("JSONL round trip") {
  sim::DomainSpec s;
  s.name = "roundtrip";
  s.num_questions = 4;
  s.label_noise = 0.1;
  const auto d = sim::generate_domain(s, 77);
  const auto path = std::filesystem::temp_directory_path() / "dreamprm_sim_roundtrip.jsonl";
  sim::write_domain_jsonl(path, d);
  CHECK(sim::read_domain_jsonl(path) == d);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(sim::read_domain_jsonl(path), MissingArtifactError);
}

}  // TEST_SUITE
