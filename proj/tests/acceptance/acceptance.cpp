// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   dreamprm_acceptance          run all nine
//   dreamprm_acceptance 1 3 9    run a subset

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "dreamprm/autodiff/hypergrad.hpp"
#include "dreamprm/inference/select.hpp"
#include "dreamprm/mc/supervision.hpp"
#include "dreamprm/pipeline/pipeline.hpp"
#include "dreamprm/prm/losses.hpp"
#include "support/hypergrad_problem.hpp"
#include "support/random_composition.hpp"
#include "support/tiny_config.hpp"

namespace {

using namespace dreamprm;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// Tolerances and budgets.
constexpr int kCompositions = 100;
constexpr double kGradTol = 1e-6;
constexpr double kGradBudget = 10.0;
constexpr double kQuadraticTol = 1e-10;
constexpr double kHypergradTol = 1e-3;
constexpr std::size_t kHypergradMaxParams = 200;
constexpr double kHypergradBudget = 120.0;
constexpr int kMcSettings = 20;
constexpr int kMcRollouts = 10000;
constexpr double kMcSigmas = 3.0;
constexpr double kMcBudget = 60.0;
constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};
constexpr double kAlphaGap = 0.2;
constexpr double kMixtureBudget = 30 * 60.0;
constexpr int kMinWins = 4;
constexpr int kBootstrapResamples = 10000;
constexpr double kBootstrapConfidence = 0.95;
constexpr double kTrivialDiscardMin = 0.95;
constexpr double kInformativeDiscardMax = 0.5;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

// --- 1 ----------------------------------------------------------------------

Verdict gradient_correctness() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (int i = 0; i < kCompositions; ++i) worst = std::max(worst, testing::composition_error(1000 + i));
  const double secs = seconds_since(t0);
  return {worst < kGradTol && secs < kGradBudget,
          "max relative error " + fmt("%.2e", worst) + " over " + std::to_string(kCompositions) + " compositions, " +
              fmt("%.2f", secs) + " s"};
}

// --- 2 ----------------------------------------------------------------------

Verdict hypergradient_correctness() {
  const auto t0 = Clock::now();
  // L_tr = alpha (phi - 1)^2, L_meta = (phi - 1)^2, one SGD step from 0 at lr 0.1:
  // phi_1 = 0.2 alpha, dL/dalpha = 2 (phi_1 - 1) * 0.2 = -0.32 at alpha = 1.
  ad::UnrollConfig u;
  u.steps = 1;
  u.lr = 0.1;
  u.optimizer = ad::InnerOptimizer::SGD;
  const auto q = ad::hypergrad_unrolled(
      [](ad::Tape&, ad::Var phi, ad::Var a, int) { return ad::sum(a * ad::square(ad::affine(phi, 1.0, -1.0))); },
      [](ad::Tape&, ad::Var phi) { return ad::sum(ad::square(ad::affine(phi, 1.0, -1.0))); }, ad::ParamVector({0.0}),
      ad::ParamVector({1.0}), u);
  const double quad_err = std::max(std::abs(q.phi[0] - 0.2), std::abs(q.meta_grad[0] + 0.32));

  double fd_err = 0.0;
  std::size_t params = 0;
  for (std::uint64_t seed : {1, 2}) {
    const auto p = testing::make_hypergrad_problem(seed);
    params = p.phi0.size();
    fd_err = std::max(fd_err, testing::hypergrad_fd_error(p));
  }
  const double secs = seconds_since(t0);
  return {quad_err < kQuadraticTol && fd_err < kHypergradTol && params <= kHypergradMaxParams && secs < kHypergradBudget,
          "quadratic error " + fmt("%.1e", quad_err) + ", PRM (" + std::to_string(params) +
              " params, K=3, k=5, SGD) finite-difference error " + fmt("%.2e", fd_err) + ", " + fmt("%.1f", secs) + " s"};
}

// --- 3 ----------------------------------------------------------------------

Verdict monte_carlo_estimator() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  std::uniform_real_distribution<double> uq(0.2, 1.0), ur(0.05, 0.95);
  std::uniform_int_distribution<int> uf(0, 4);
  int inside = 0;
  double worst_z = 0.0;
  for (int s = 0; s < kMcSettings; ++s) {
    // Flaw-free continuations, so every completion of the prefix succeeds with q0 rho^f.
    sim::Completer c;
    c.q0 = uq(rng);
    c.rho = ur(rng);
    c.flaw_rate = 0.0;
    c.steps = 6;
    const int flaws = uf(rng);
    std::vector<sim::Step> prefix;
    for (int i = 1; i <= std::max(flaws, 1); ++i) {
      sim::Step st;
      st.index = i;
      st.flawed = i <= flaws;
      st.features.assign(sim::kFeatureDim, 0.0);
      prefix.push_back(st);
    }
    const double truth = sim::true_correctness_prob(c, prefix);
    const auto label = mc::monte_carlo_label(c, static_cast<std::uint64_t>(s), prefix, kMcRollouts, derive_seed(77, s));
    const double sd = std::sqrt(truth * (1 - truth) / kMcRollouts);
    const double dev = std::abs(label.p() - truth);
    const double z = sd > 0 ? dev / sd : (dev == 0 ? 0.0 : INFINITY);
    worst_z = std::max(worst_z, z);
    inside += z <= kMcSigmas;
  }
  const double secs = seconds_since(t0);
  return {inside == kMcSettings && secs < kMcBudget,
          std::to_string(inside) + "/" + std::to_string(kMcSettings) + " settings within 3 sd at " +
              std::to_string(kMcRollouts) + " rollouts (max " + fmt("%.2f", worst_z) + " sd), " + fmt("%.1f", secs) + " s"};
}

// --- 4 to 7: shared runs on the default mixture ---------------------------------

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<std::string> domains;
  std::vector<double> alpha;  // DreamPRM final weights
  select::EvalReport dream, vanilla, no_afl;
  select::EvalReport oracle;
  double dream_meta = 0.0, vanilla_meta = 0.0;  // held-out meta loss after training
};

struct MixtureRuns {
  std::vector<SeedRun> runs;
  double seconds = 0.0;
};

const MixtureRuns& mixture_runs() {
  static MixtureRuns cache = [] {
    MixtureRuns m;
    const auto t0 = Clock::now();
    for (std::uint64_t seed : kSeeds) {
      auto cfg = pipeline::ExperimentConfig::defaults();
      cfg.seed = seed;
      const auto data = pipeline::simulate(cfg);
      const auto labels = pipeline::label(cfg, data);

      // Held-out meta loss on a fresh clean set drawn from the meta spec.
      const auto held_out = sim::generate_domain(cfg.meta_domain, derive_seed(seed, name_hash("acceptance")));
      std::vector<sim::Trajectory> held_traj;
      for (const auto& q : held_out.questions) held_traj.insert(held_traj.end(), q.trajectories.begin(), q.trajectories.end());
      const auto arch = cfg.resolved_train().arch;

      SeedRun r;
      r.seed = seed;
      for (const auto& d : cfg.train_domains) r.domains.push_back(d.name);

      cfg.variant = pipeline::Variant::DREAMPRM;
      const auto dream = pipeline::train(cfg, data, labels);
      r.dream = pipeline::evaluate(cfg, data.test, dream);
      r.alpha = dream.alpha.raw();
      r.dream_meta = prm::meta_loss(dream.phi, arch, held_traj);

      cfg.eval.orm_baseline = false;
      cfg.variant = pipeline::Variant::VANILLA;
      const auto vanilla = pipeline::train(cfg, data, labels);
      r.vanilla = pipeline::evaluate(cfg, data.test, vanilla);
      r.vanilla_meta = prm::meta_loss(vanilla.phi, arch, held_traj);

      cfg.variant = pipeline::Variant::NO_AFL;
      r.no_afl = pipeline::evaluate(cfg, data.test, pipeline::train(cfg, data, labels));

      std::vector<select::CandidateSet> sets;
      for (const auto& q : data.test.questions) sets.push_back(select::CandidateSet::from_question(q));
      r.oracle = select::evaluate(select::oracle_scorer(), select::oracle_final_scorer(), sets, {cfg.eval.ks}, "oracle");

      std::printf("  seed %llu: alpha", static_cast<unsigned long long>(seed));
      for (std::size_t k = 0; k < r.alpha.size(); ++k) std::printf(" %s=%.3f", r.domains[k].c_str(), r.alpha[k]);
      std::printf(" | select@8 dreamprm %.3f vanilla %.3f no_afl %.3f orm %.3f pass@1 %.3f | held-out meta loss "
                  "dreamprm %.4f vanilla %.4f (%.0f s)\n",
                  r.dream.select_at.at(8), r.vanilla.select_at.at(8), r.no_afl.select_at.at(8), r.dream.orm.at(8),
                  r.dream.pass1(), r.dream_meta, r.vanilla_meta, seconds_since(t0));
      std::fflush(stdout);
      m.runs.push_back(std::move(r));
    }
    m.seconds = seconds_since(t0);
    return m;
  }();
  return cache;
}

std::size_t domain_index(const SeedRun& r, const std::string& name) {
  for (std::size_t k = 0; k < r.domains.size(); ++k) {
    if (r.domains[k] == name) return k;
  }
  std::fprintf(stderr, "no domain named %s\n", name.c_str());
  std::exit(2);
}

Verdict domain_weight_separation() {
  const auto& m = mixture_runs();
  std::vector<double> informative, noisy, trivial;
  for (const auto& r : m.runs) {
    informative.push_back(
        0.5 * (r.alpha[domain_index(r, "informative_a")] + r.alpha[domain_index(r, "informative_b")]));
    noisy.push_back(r.alpha[domain_index(r, "label_noisy")]);
    trivial.push_back(r.alpha[domain_index(r, "trivial")]);
  }
  const double ai = mean(informative), an = mean(noisy), at = mean(trivial);
  return {ai - an >= kAlphaGap && at < 1.0 && 1.0 < ai && m.seconds < kMixtureBudget,
          "mean alpha informative " + fmt("%.3f", ai) + ", label-noisy " + fmt("%.3f", an) + ", trivial " +
              fmt("%.3f", at) + " (gap " + fmt("%.3f", ai - an) + "), " + fmt("%.0f", m.seconds) + " s for " +
              std::to_string(m.runs.size()) + " seeds x 3 variants"};
}

Verdict dreamprm_beats_vanilla() {
  const auto& m = mixture_runs();
  int wins = 0;
  std::vector<double> gaps;
  double worst_lower = INFINITY;
  for (const auto& r : m.runs) {
    const double gap = r.dream.select_at.at(8) - r.vanilla.select_at.at(8);
    gaps.push_back(gap);
    wins += gap > 0;
    const auto a = r.dream.select_outcomes(8);
    const auto b = r.dream.pass1_outcomes();
    const auto bs = select::paired_bootstrap(a, b, kBootstrapResamples, derive_seed(r.seed, 95), kBootstrapConfidence);
    worst_lower = std::min(worst_lower, bs.lower);
  }
  const double g = mean(gaps);
  return {wins >= kMinWins && g > 0 && worst_lower > 0,
          "DreamPRM select@8 > vanilla in " + std::to_string(wins) + "/" + std::to_string(m.runs.size()) +
              " seeds, mean gap " + fmt("%+.4f", g) + "; select@8 - pass@1 95% bootstrap lower bound (worst seed) " +
              fmt("%.4f", worst_lower)};
}

Verdict ablation_ordering() {
  const auto& m = mixture_runs();
  std::vector<double> d, n;
  for (const auto& r : m.runs) {
    d.push_back(r.dream.select_at.at(8));
    n.push_back(r.no_afl.select_at.at(8));
  }
  return {mean(n) <= mean(d),
          "mean select@8 NO_AFL " + fmt("%.4f", mean(n)) + " <= DreamPRM " + fmt("%.4f", mean(d))};
}

Verdict scaling_curve() {
  const auto& m = mixture_runs();
  bool oracle_exact = true;
  for (const auto& r : m.runs) {
    for (int k : {1, 2, 4, 6, 8}) oracle_exact = oracle_exact && r.oracle.select_at.at(k) == r.oracle.pass_at.at(k);
  }
  std::vector<double> s2, s8;
  for (const auto& r : m.runs) {
    s2.push_back(r.dream.select_at.at(2));
    s8.push_back(r.dream.select_at.at(8));
  }
  return {oracle_exact && mean(s8) >= mean(s2),
          std::string("oracle select@k == pass@k for k in {1,2,4,6,8}: ") + (oracle_exact ? "yes" : "no") +
              "; trained mean select@2 " + fmt("%.4f", mean(s2)) + ", select@8 " + fmt("%.4f", mean(s8))};
}

// --- 8 ----------------------------------------------------------------------

Verdict dynamic_filter() {
  const auto cfg = pipeline::ExperimentConfig::defaults();
  auto trivial = cfg.train_domains[0];
  trivial.name = "all_trivial";
  trivial.triviality = 1.0;
  trivial.num_questions = 300;
  auto informative = cfg.train_domains[0];
  informative.num_questions = 300;
  mc::FilterStats ts, is;
  mc::filter_dataset(mc::label_dataset(sim::generate_domain(trivial, 81), cfg.labeling.num_rollouts, 82), &ts);
  mc::filter_dataset(mc::label_dataset(sim::generate_domain(informative, 83), cfg.labeling.num_rollouts, 84), &is);
  return {ts.discard_fraction() >= kTrivialDiscardMin && is.discard_fraction() < kInformativeDiscardMax,
          "discarded " + fmt("%.3f", ts.discard_fraction()) + " of triviality=1 questions, " +
              fmt("%.3f", is.discard_fraction()) + " of informative questions"};
}

// --- 9 ----------------------------------------------------------------------

Verdict determinism() {
  testing::ScratchDir a("accept_a"), b("accept_b");
  const fs::path smoke = fs::path(DREAMPRM_SOURCE_DIR) / "configs" / "smoke.toml";
  const auto stages = pipeline::parse_stages("all");
  for (const auto* dir : {&a, &b}) {
    auto cfg = pipeline::load_config(smoke);
    cfg.output_dir = dir->path();
    pipeline::run_pipeline(cfg, stages);
  }
  const bool same_report = testing::slurp(a / "eval/report.json") == testing::slurp(b / "eval/report.json");
  const auto ma = pipeline::read_manifest(a / "manifest.json");
  const auto mb = pipeline::read_manifest(b / "manifest.json");
  const bool same_hashes = ma.files == mb.files && ma.config_hash == mb.config_hash;
  const bool verified = pipeline::verify_manifest(a.path()).empty() && pipeline::verify_manifest(b.path()).empty();
  return {same_report && same_hashes && verified,
          std::string("eval report identical: ") + (same_report ? "yes" : "no") + ", " + std::to_string(ma.files.size()) +
              " manifest hashes identical: " + (same_hashes ? "yes" : "no") + ", both manifests verify: " +
              (verified ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"hypergradient correctness", hypergradient_correctness},
      {"Monte-Carlo estimator", monte_carlo_estimator},
      {"domain-weight separation", domain_weight_separation},
      {"DreamPRM beats vanilla PRM", dreamprm_beats_vanilla},
      {"aggregation-loss ablation ordering", ablation_ordering},
      {"best-of-N scaling curve", scaling_curve},
      {"dynamic filter", dynamic_filter},
      {"determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s criterion %d (%s): %s\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
