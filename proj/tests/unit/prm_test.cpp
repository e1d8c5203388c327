#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "dreamprm/autodiff/tape.hpp"
#include "dreamprm/bilevel/trainer.hpp"
#include "dreamprm/error.hpp"
#include "dreamprm/mc/supervision.hpp"
#include "dreamprm/prm/checkpoint.hpp"
#include "dreamprm/prm/losses.hpp"
#include "dreamprm/prm/model.hpp"

using namespace dreamprm;
using prm::Architecture;

namespace {

// Straight-line MLP over the named blocks, independent of the tape.
double reference_score(const ad::ParamVector& phi, const Architecture& arch, const std::vector<double>& x) {
  const auto w1 = phi.block_matrix("w1"), b1 = phi.block_matrix("b1");
  const auto w2 = phi.block_matrix("w2"), b2 = phi.block_matrix("b2");
  const auto w3 = phi.block_matrix("w3"), b3 = phi.block_matrix("b3");
  const int h = arch.hidden;
  std::vector<double> h1(h), h2(h);
  for (int j = 0; j < h; ++j) {
    double z = b1(0, j);
    for (std::size_t i = 0; i < x.size(); ++i) z += x[i] * w1(static_cast<Eigen::Index>(i), j);
    h1[j] = std::tanh(z);
  }
  for (int j = 0; j < h; ++j) {
    double z = b2(0, j);
    for (int i = 0; i < h; ++i) z += h1[i] * w2(i, j);
    h2[j] = std::tanh(z);
  }
  double z = b3(0, 0);
  for (int i = 0; i < h; ++i) z += h2[i] * w3(i, 0);
  return 1.0 / (1.0 + std::exp(-z));
}

double reference_aggregate(const std::vector<double>& p) {
  double s = 0.0;
  for (double v : p) {
    const double c = std::min(std::max(v, 1e-6), 1 - 1e-6);
    s += std::log(c / (1 - c));
  }
  return s;
}

std::vector<mc::LabeledPrefix> small_labels(std::uint64_t seed, int questions = 6) {
  sim::DomainSpec s;
  s.num_questions = questions;
  s.trajectories_per_question = 2;
  return mc::label_dataset(sim::generate_domain(s, seed), 4, seed + 1).items;
}

std::vector<sim::Trajectory> small_trajectories(std::uint64_t seed, int questions = 6) {
  sim::DomainSpec s;
  s.num_questions = questions;
  s.trajectories_per_question = 2;
  std::vector<sim::Trajectory> out;
  for (const auto& q : sim::generate_domain(s, seed).questions)
    out.insert(out.end(), q.trajectories.begin(), q.trajectories.end());
  return out;
}

// Output layer zero with bias b: every score is sigmoid(b).
ad::ParamVector constant_scorer(const Architecture& arch, double b) {
  auto phi = prm::init_params(arch, 1, true);
  phi[phi.offset_of("b3")] = b;
  return phi;
}

std::vector<mc::LabeledPrefix> with_correct(std::vector<mc::LabeledPrefix> v, bool all_correct) {
  for (auto& l : v) l.correct = all_correct ? l.num_rollouts : 0;
  return v;
}

}  // namespace

TEST_SUITE("prm") {

TEST_CASE("architecture") {
  Architecture a;
  CHECK(a.input_dim() == 17);
  CHECK(a.num_params() == 17u * 32 + 32 + 32 * 32 + 32 + 32 + 1);
  CHECK(prm::init_params(a, 3).size() == a.num_params());
}

TEST_CASE("zero output layer scores 0.5 everywhere") {
  Architecture a;
  const auto phi = prm::init_params(a, 7);
  sim::DomainSpec s;
  s.num_questions = 3;
  for (const auto& q : sim::generate_domain(s, 1).questions)
    for (const auto& t : q.trajectories)
      for (double v : prm::score_trajectory(phi, a, t)) CHECK(v == 0.5);
}

TEST_CASE("score_step is pure, in (0, 1) and matches the reference MLP") {
  Architecture a;
  a.hidden = 6;
  const auto phi = prm::init_params(a, 5, false);
  sim::DomainSpec s;
  s.num_questions = 4;
  for (const auto& q : sim::generate_domain(s, 2).questions)
    for (const auto& t : q.trajectories)
      for (std::size_t i = 1; i <= t.steps.size(); ++i) {
        const std::span<const sim::Step> prefix(t.steps.data(), i);
        const double v = prm::score_step(phi, a, prefix);
        CHECK(v > 0.0);
        CHECK(v < 1.0);
        CHECK(v == prm::score_step(phi, a, prefix));
        CHECK(std::abs(v - reference_score(phi, a, prm::prefix_input(prefix))) < 1e-12);
      }
}

TEST_CASE("score_step rejects empty and non-finite prefixes") {
  Architecture a;
  const auto phi = prm::init_params(a, 5);
  CHECK_THROWS(prm::score_step(phi, a, std::span<const sim::Step>{}));
  sim::Step bad;
  bad.features.assign(sim::kFeatureDim, 0.0);
  bad.features[3] = std::nan("");
  const sim::Step one[] = {bad};
  CHECK_THROWS_AS(prm::score_step(phi, a, one), NumericalError);
}

TEST_CASE("prefix input layout: mean, last step, position") {
  std::vector<std::vector<double>> rows = {std::vector<double>(sim::kFeatureDim, 1.0), std::vector<double>(sim::kFeatureDim, 3.0)};
  rows[1][sim::kPositionDim] = 0.4;
  const auto x = prm::prefix_input(rows);
  REQUIRE(x.size() == 17u);
  CHECK(x[0] == 2.0);
  CHECK(x[sim::kPositionDim] == doctest::Approx(0.7));
  CHECK(x[8] == 3.0);
  CHECK(x[16] == 0.4);
}

TEST_CASE("train loss examples") {
  Architecture a;
  const auto labels = small_labels(3);
  CHECK(prm::train_loss_single_domain(constant_scorer(a, 40.0), a, with_correct(labels, true)) == 0.0);
  CHECK(prm::train_loss_single_domain(constant_scorer(a, 0.0), a, with_correct(labels, true)) == 0.25);
  const auto phi = prm::init_params(a, 9, false);
  double ref = 0.0;
  for (const auto& l : labels) {
    const double d = reference_score(phi, a, prm::prefix_input(l.features)) - l.p();
    ref += d * d;
  }
  ref /= static_cast<double>(labels.size());
  CHECK(std::abs(prm::train_loss_single_domain(phi, a, labels) - ref) < 1e-12);
}

TEST_CASE("weighted train loss: sum, gating, homogeneity, exact alpha gradient") {
  Architecture a;
  a.hidden = 5;
  const std::vector<std::vector<mc::LabeledPrefix>> doms = {small_labels(1), small_labels(2), small_labels(3)};
  const auto phi = prm::init_params(a, 4, false);
  double plain = 0.0;
  std::vector<double> single;
  for (const auto& d : doms) {
    single.push_back(prm::train_loss_single_domain(phi, a, d));
    plain += single.back();
  }
  CHECK(prm::weighted_train_loss(phi, ad::ParamVector({1.0, 1.0, 1.0}), a, doms) == doctest::Approx(plain).epsilon(1e-14));
  const double w = prm::weighted_train_loss(phi, ad::ParamVector({0.3, 1.2, 0.7}), a, doms);
  CHECK(prm::weighted_train_loss(phi, ad::ParamVector({0.6, 2.4, 1.4}), a, doms) == doctest::Approx(2 * w).epsilon(1e-14));
  CHECK_THROWS_AS(prm::weighted_train_loss(phi, ad::ParamVector({1.0, 1.0}), a, doms), ShapeError);

  std::vector<prm::PrefixTable> tables;
  for (const auto& d : doms) tables.push_back(prm::make_prefix_table(d));
  ad::Tape tape;
  auto p = tape.leaf(phi.as_eigen(), "phi");
  auto al = tape.leaf((Eigen::VectorXd(3) << 0.0, 1.0, 1.0).finished(), "alpha");
  const ad::Var wrt[] = {p, al};
  auto g = tape.gradients(prm::weighted_train_loss_node(p, al, a, tables), wrt);
  for (int k = 0; k < 3; ++k) CHECK(std::abs(g[1](k, 0) - single[static_cast<std::size_t>(k)]) < 1e-12);

  // Gating: with alpha_0 = 0 the phi gradient equals that of domains 1 and 2 alone.
  ad::Tape t2;
  auto p2 = t2.leaf(phi.as_eigen(), "phi");
  auto a2 = t2.constant((Eigen::VectorXd(2) << 1.0, 1.0).finished());
  const std::vector<prm::PrefixTable> rest(tables.begin() + 1, tables.end());
  const ad::Var w2[] = {p2};
  auto g2 = t2.gradients(prm::weighted_train_loss_node(p2, a2, a, rest), w2);
  CHECK((g[0] - g2[0]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("aggregate examples") {
  CHECK(prm::aggregate(std::vector{0.5, 0.5, 0.5}) == 0.0);
  CHECK(prm::aggregate(std::vector{0.9, 0.8}) == doctest::Approx(std::log(9.0) + std::log(4.0)).epsilon(1e-14));
  CHECK(std::log(9.0) + std::log(4.0) == doctest::Approx(3.5835).epsilon(1e-4));
  const std::vector<double> p = {0.2, 0.7, 0.95, 0.4}, q = {0.8, 0.3, 0.05, 0.6};
  CHECK(prm::aggregate(q) == doctest::Approx(-prm::aggregate(p)).epsilon(1e-13));
  CHECK_THROWS(prm::aggregate(std::vector<double>{}));
  CHECK(prm::aggregate(std::vector{1.0}) == doctest::Approx(std::log((1 - 1e-6) / 1e-6)));
}

TEST_CASE("aggregate is strictly increasing in each score") {
  Rng rng(3);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> p(5);
    for (auto& v : p) v = u(rng);
    const double base = prm::aggregate(p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto q = p;
      q[i] += 1e-3;
      CHECK(prm::aggregate(q) > base);
    }
  }
}

TEST_CASE("padding with 0.5 scores leaves the aggregate unchanged") {
  const std::vector<double> p = {0.3, 0.9};
  CHECK(prm::aggregate(std::vector{0.3, 0.9, 0.5, 0.5}) == prm::aggregate(p));
}

TEST_CASE("correctness signal") {
  sim::Trajectory t;
  t.final_correct = true;
  CHECK(prm::correctness_signal(t) == 1);
  t.final_correct = false;
  CHECK(prm::correctness_signal(t) == 0);
  sim::Step s;
  s.features.assign(sim::kFeatureDim, 42.0);
  t.steps.push_back(s);
  CHECK(prm::correctness_signal(t) == 0);
}

TEST_CASE("meta loss examples") {
  Architecture a;
  auto traj = small_trajectories(4);
  for (auto& t : traj) t.final_correct = false;
  CHECK(prm::meta_loss(constant_scorer(a, 0.0), a, traj) == 0.25);

  // Saturated oracle: aggregate of 5 steps at 1 - 1e-6 is about 69, so the loss is ~0.
  for (std::size_t i = 0; i < traj.size(); ++i) traj[i].final_correct = true;
  CHECK(prm::meta_loss(constant_scorer(a, 40.0), a, traj) < 1e-20);

  const auto mixed = small_trajectories(5);
  a.hidden = 7;
  const auto phi = prm::init_params(a, 6, false);
  double ref = 0.0;
  for (const auto& t : mixed) {
    std::vector<double> scores;
    for (std::size_t i = 1; i <= t.steps.size(); ++i)
      scores.push_back(reference_score(phi, a, prm::prefix_input(std::span<const sim::Step>(t.steps.data(), i))));
    const double s = 1.0 / (1.0 + std::exp(-reference_aggregate(scores)));
    ref += (s - prm::correctness_signal(t)) * (s - prm::correctness_signal(t));
  }
  ref /= static_cast<double>(mixed.size());
  CHECK(std::abs(prm::meta_loss(phi, a, mixed) - ref) < 1e-12);
}

TEST_CASE("per-step meta loss is the training MSE on meta prefixes") {
  Architecture a;
  const auto labels = small_labels(8);
  const auto phi = prm::init_params(a, 2, false);
  CHECK(prm::per_step_meta_loss(phi, a, labels) == prm::train_loss_single_domain(phi, a, labels));
  CHECK(prm::per_step_meta_loss(constant_scorer(a, 40.0), a, with_correct(labels, true)) == 0.0);
  CHECK(prm::per_step_meta_loss(constant_scorer(a, 0.0), a, with_correct(labels, false)) == 0.25);
}

TEST_CASE("trained on noiseless data, flawless prefixes outscore two-flaw prefixes") {
  sim::DomainSpec s;
  s.num_questions = 300;
  s.feature_noise_sigma = 0.0;
  s.base_solve_prob = 1.0;
  s.flaw_decay = 0.1;
  bilevel::TrainData data;
  data.domains.push_back(prm::make_prefix_table(mc::label_dataset(sim::generate_domain(s, 1), 8, 2).items));
  bilevel::TrainConfig cfg;
  cfg.arch.hidden = 16;
  cfg.inner_optimizer = ad::InnerOptimizer::SGD;
  cfg.inner_lr = 0.2;
  cfg.total_outer_iterations = 300;
  cfg.seed = 3;
  const auto trained = bilevel::train_vanilla(cfg, data);

  s.num_questions = 200;
  const auto held_out = sim::generate_domain(s, 99);
  std::vector<double> clean, two;
  for (const auto& q : held_out.questions)
    for (const auto& t : q.trajectories) {
      int flaws = 0;
      for (std::size_t i = 0; i < t.steps.size(); ++i) {
        flaws += t.steps[i].flawed;
        if (i + 1 != 3) continue;
        const double v = prm::score_step(trained.phi, cfg.arch, std::span<const sim::Step>(t.steps.data(), 3));
        if (flaws == 0) clean.push_back(v);
        if (flaws == 2) two.push_back(v);
      }
    }
  REQUIRE(!clean.empty());
  REQUIRE(!two.empty());
  std::size_t wins = 0, pairs = 0;
  for (double c : clean)
    for (double t : two) {
      ++pairs;
      wins += c > t;
    }
  CHECK(static_cast<double>(wins) / static_cast<double>(pairs) >= 0.95);
}

TEST_CASE("checkpoint round trip and layout") {
  Architecture a;
  a.hidden = 4;
  prm::Checkpoint c{a, 17, "DREAMPRM", prm::init_params(a, 1, false), ad::ParamVector({0.5, 1.5, 1.0})};
  const auto path = std::filesystem::temp_directory_path() / "dreamprm_ckpt_test.bin";
  prm::write_checkpoint(path, c);
  const auto r = prm::read_checkpoint(path);
  CHECK(r.arch == a);
  CHECK(r.step == 17);
  CHECK(r.variant == "DREAMPRM");
  CHECK(r.phi.raw() == c.phi.raw());
  CHECK(r.alpha.raw() == c.alpha.raw());
  const auto size = std::filesystem::file_size(path);
  CHECK(size > 16 + 8 * (c.phi.size() + 3));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(prm::read_checkpoint(path), MissingArtifactError);
}

}  // TEST_SUITE
