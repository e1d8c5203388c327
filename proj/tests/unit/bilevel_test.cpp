#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "dreamprm/autodiff/finite_difference.hpp"
#include "dreamprm/bilevel/trainer.hpp"
#include "dreamprm/error.hpp"
#include "dreamprm/mc/supervision.hpp"
#include "dreamprm/prm/losses.hpp"

using namespace dreamprm;
using bilevel::TrainConfig;
using bilevel::TrainData;

namespace {

sim::DomainSpec spec(int questions, double noise = 0.0) {
  sim::DomainSpec s;
  s.num_questions = questions;
  s.trajectories_per_question = 4;
  s.label_noise = noise;
  s.base_solve_prob = 1.0;
  s.flaw_decay = 0.1;
  return s;
}

TrainData make_data(std::uint64_t seed, int domains = 2, int questions = 12) {
  TrainData d;
  for (int k = 0; k < domains; ++k) {
    d.domain_names.push_back("d" + std::to_string(k));
    d.domains.push_back(prm::make_prefix_table(
        mc::label_dataset(sim::generate_domain(spec(questions), seed + 10 * k), 4, seed + 10 * k + 1).items));
  }
  const auto meta = sim::generate_domain(spec(questions), seed + 100);
  std::vector<sim::Trajectory> traj;
  for (const auto& q : meta.questions) traj.insert(traj.end(), q.trajectories.begin(), q.trajectories.end());
  d.meta = prm::make_trajectory_table(traj);
  d.meta_prefixes = prm::make_prefix_table(mc::label_dataset(meta, 4, seed + 101).items);
  return d;
}

TrainConfig small_config() {
  TrainConfig c;
  c.arch.hidden = 6;
  c.inner_optimizer = ad::InnerOptimizer::SGD;
  c.inner_lr = 0.1;
  c.unroll_steps = 3;
  c.total_outer_iterations = 12;
  c.batch_size = 8;
  c.meta_batch_size = 8;
  c.outer_lr = 0.05;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_SUITE("bilevel") {

TEST_CASE("config validation names the field") {
  auto expect_field = [](TrainConfig c, const std::string& field) {
    try {
      c.validate();
      FAIL("expected ConfigError for " << field);
    } catch (const ConfigError& e) {
      CHECK(e.field() == field);
    }
  };
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  auto b = c;
  b.unroll_steps = 0;
  expect_field(b, "train.unroll_steps");
  b = c;
  b.inner_lr = -1;
  expect_field(b, "train.inner_lr");
  b = c;
  b.outer_gamma = 1.5;
  expect_field(b, "train.outer_gamma");
  b = c;
  b.batch_size = 0;
  expect_field(b, "train.batch_size");
  b = c;
  b.arch.hidden = 0;
  expect_field(b, "prm.hidden");
}

TEST_CASE("training is deterministic in the seed") {
  const auto data = make_data(1);
  const auto cfg = small_config();
  const auto a = bilevel::train_dreamprm(cfg, data);
  const auto b = bilevel::train_dreamprm(cfg, data);
  CHECK(a.phi == b.phi);
  CHECK(a.alpha == b.alpha);
  CHECK(a.history == b.history);
  auto other = cfg;
  other.seed = 6;
  CHECK(bilevel::train_dreamprm(other, data).phi != a.phi);
}

TEST_CASE("history has one row per outer iteration and ends at the final alpha") {
  const auto data = make_data(2);
  const auto cfg = small_config();
  const auto r = bilevel::train_dreamprm(cfg, data);
  REQUIRE(r.history.size() == static_cast<std::size_t>(cfg.total_outer_iterations));
  CHECK(r.history.domain_names == data.domain_names);
  for (std::size_t i = 0; i < r.history.size(); ++i) {
    CHECK(r.history.records[i].iteration == static_cast<std::int64_t>(i));
    CHECK(std::isfinite(r.history.records[i].inner_loss));
    CHECK(std::isfinite(r.history.records[i].meta_loss));
    CHECK(r.history.records[i].lr == cfg.outer_lr);
  }
  CHECK(r.history.records.back().alpha == r.alpha.raw());
  CHECK(r.alpha.size() == 2);
  CHECK(r.alpha.raw() != std::vector<double>{1.0, 1.0});
}

TEST_CASE("vanilla keeps alpha at one and monitors the meta loss only when present") {
  auto data = make_data(3);
  const auto cfg = small_config();
  const auto r = bilevel::train_vanilla(cfg, data);
  CHECK(r.alpha.raw() == std::vector<double>{1.0, 1.0});
  for (const auto& rec : r.history.records) {
    CHECK(rec.alpha == std::vector<double>{1.0, 1.0});
    CHECK(std::isfinite(rec.meta_loss));
  }
  data.meta = {};
  data.meta_prefixes = {};
  const auto nm = bilevel::train_vanilla(cfg, data);
  CHECK(std::isnan(nm.history.records.front().meta_loss));
  CHECK(nm.phi == r.phi);
  CHECK_THROWS_AS(bilevel::train_dreamprm(cfg, data), Error);
}

TEST_CASE("first window of DreamPRM matches vanilla: same init and batch stream") {
  const auto data = make_data(4);
  auto cfg = small_config();
  cfg.total_outer_iterations = 1;
  const auto d = bilevel::train_dreamprm(cfg, data);
  const auto v = bilevel::train_vanilla(cfg, data);
  CHECK(ad::relative_error(d.phi, v.phi) < 1e-12);
  CHECK(d.history.records[0].inner_loss == doctest::Approx(v.history.records[0].inner_loss).epsilon(1e-12));
}

TEST_CASE("checkpoint callback fires every checkpoint_every iterations") {
  const auto data = make_data(5);
  auto cfg = small_config();
  cfg.total_outer_iterations = 10;
  cfg.checkpoint_every = 3;
  std::vector<std::int64_t> seen;
  ad::ParamVector last_alpha;
  const auto r = bilevel::train_dreamprm(cfg, data, [&](std::int64_t it, const ad::ParamVector&, const ad::ParamVector& a) {
    seen.push_back(it);
    last_alpha = a;
  });
  CHECK(seen == std::vector<std::int64_t>{3, 6, 9});
  CHECK(last_alpha.raw() == r.history.records[8].alpha);
  seen.clear();
  cfg.checkpoint_every = 0;
  bilevel::train_vanilla(cfg, data, [&](std::int64_t it, const ad::ParamVector&, const ad::ParamVector&) { seen.push_back(it); });
  CHECK(seen.empty());
}

TEST_CASE("divergence is reported with the iteration") {
  const auto data = make_data(6);
  auto cfg = small_config();
  cfg.divergence_threshold = 1e-6;
  try {
    bilevel::train_dreamprm(cfg, data);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.iteration() == 0);
  }
  CHECK_THROWS_AS(bilevel::train_vanilla(cfg, data), DivergenceError);
}

TEST_CASE("inner_update with SGD steps along the finite-difference gradient") {
  const auto data = make_data(7);
  auto cfg = small_config();
  const auto phi = prm::init_params(cfg.arch, 2, false);
  const ad::ParamVector alpha({0.7, 1.3});
  auto state = ad::OptimizerState::fresh(phi.size());
  const auto next = bilevel::inner_update(phi, alpha, data.domains, cfg, state);
  CHECK(state.step == 0);
  auto loss = [&](const ad::ParamVector& p) {
    ad::Tape t;
    return prm::weighted_train_loss_node(t.constant(p.as_eigen()), t.constant(alpha.as_eigen()), cfg.arch, data.domains)
        .scalar();
  };
  const auto fd = ad::finite_difference(loss, phi, 1e-6);
  ad::ParamVector step(std::vector<double>(phi.size()));
  for (std::size_t i = 0; i < phi.size(); ++i) step[i] = (phi[i] - next[i]) / cfg.inner_lr;
  CHECK(ad::relative_error(step, fd, 1e-8) < 1e-6);
  CHECK_THROWS_AS(bilevel::inner_update(phi, ad::ParamVector({1.0}), data.domains, cfg, state), ShapeError);

  cfg.inner_optimizer = ad::InnerOptimizer::ADAMW;
  bilevel::inner_update(phi, alpha, data.domains, cfg, state);
  CHECK(state.step == 1);
}

TEST_CASE("outer_update is AdamW at the step-decayed rate") {
  auto cfg = small_config();
  cfg.outer_step_size = 10;
  cfg.outer_gamma = 0.5;
  const ad::ParamVector alpha({1.0, 1.0}), g({0.3, -0.2});
  auto st = ad::OptimizerState::fresh(2);
  const auto next = bilevel::outer_update(alpha, g, st, 25, cfg);
  const auto ref = ad::adamw_step(alpha, g, ad::OptimizerState::fresh(2),
                                  {cfg.outer_lr * 0.25, cfg.outer_weight_decay, 0.9, 0.999, 1e-8});
  CHECK(next == ref.first);
  CHECK(st == ref.second);
  CHECK(next[0] < 1.0);
  CHECK(next[1] > 1.0);
}

TEST_CASE("weight-decay-only outer step from one") {
  TrainConfig cfg;
  auto st = ad::OptimizerState::fresh(1);
  const auto next = bilevel::outer_update(ad::ParamVector({1.0}), ad::ParamVector({0.0}), st, 0, cfg);
  CHECK(next[0] == doctest::Approx(0.99999).epsilon(1e-14));
}

TEST_CASE("inner optimizer state policy changes AdamW runs only") {
  const auto data = make_data(8);
  auto cfg = small_config();
  cfg.inner_optimizer = ad::InnerOptimizer::ADAMW;
  cfg.inner_lr = 0.01;
  cfg.total_outer_iterations = 3;
  auto reset = cfg;
  reset.inner_state = bilevel::InnerState::RESET;
  CHECK(bilevel::train_dreamprm(cfg, data).phi != bilevel::train_dreamprm(reset, data).phi);
  cfg.inner_optimizer = reset.inner_optimizer = ad::InnerOptimizer::SGD;
  cfg.inner_lr = reset.inner_lr = 0.1;
  CHECK(bilevel::train_dreamprm(cfg, data).phi == bilevel::train_dreamprm(reset, data).phi);
}

TEST_CASE("a domain with inverted labels is down-weighted") {
  auto data = make_data(9, 1, 30);
  auto inverted = data.domains[0];
  inverted.targets = Eigen::VectorXd::Ones(inverted.targets.size()) - inverted.targets;
  data.domains.push_back(inverted);
  data.domain_names.push_back("inverted");
  auto cfg = small_config();
  cfg.total_outer_iterations = 60;
  cfg.meta_batch_size = 32;
  const auto r = bilevel::train_dreamprm(cfg, data);
  CHECK(r.alpha[1] < r.alpha[0]);
  CHECK(r.alpha[1] < 1.0);
}

TEST_CASE("per-step upper objective runs on meta prefixes") {
  auto data = make_data(10);
  auto cfg = small_config();
  cfg.upper_objective = bilevel::UpperObjective::PER_STEP;
  const auto r = bilevel::train_dreamprm(cfg, data);
  CHECK(r.history.size() == static_cast<std::size_t>(cfg.total_outer_iterations));
  data.meta = {};
  CHECK_NOTHROW(bilevel::train_dreamprm(cfg, data));
}

TEST_CASE("history csv round trip") {
  const auto r = bilevel::train_dreamprm(small_config(), make_data(11));
  const auto path = std::filesystem::temp_directory_path() / "dreamprm_history_test.csv";
  bilevel::write_history_csv(path, r.history);
  const auto back = bilevel::read_history_csv(path);
  CHECK(back.records == r.history.records);
  CHECK(back.domain_names.size() == 2);
  std::filesystem::remove(path);
}

TEST_CASE("smoothed trailing mean") {
  const std::vector<double> v = {1, 2, 3, 4, 5};
  CHECK(bilevel::smoothed(v, 0, 3) == 1.0);
  CHECK(bilevel::smoothed(v, 1, 3) == 1.5);
  CHECK(bilevel::smoothed(v, 4, 3) == 4.0);
  CHECK(bilevel::smoothed(v, 4, 100) == 3.0);
  CHECK(bilevel::smoothed(v, 2, 0) == 3.0);
  CHECK_THROWS(bilevel::smoothed(v, 5, 1));
}

}  // TEST_SUITE
