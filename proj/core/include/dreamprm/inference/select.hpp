#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dreamprm/autodiff/param_vector.hpp"
#include "dreamprm/prm/model.hpp"
#include "dreamprm/sim/simulator.hpp"

namespace dreamprm::select {

inline const std::vector<int> kDefaultKs = {1, 2, 4, 6, 8};

/// Candidate trajectories for one question, in sampling order.
struct CandidateSet {
  std::uint64_t question_id = 0;
  std::vector<sim::Trajectory> candidates;
  std::vector<int> answers;  // parallel to candidates

  static CandidateSet from_question(const sim::Question& q);
  std::size_t size() const noexcept { return candidates.size(); }
  /// Throws if empty, if answers are misaligned, or if candidates answer different questions.
  void validate() const;
};

/// Per-step correctness scores for a whole trajectory.
using StepScorer = std::function<std::vector<double>(const sim::Trajectory&)>;
/// Single score for the complete trajectory.
using FinalScorer = std::function<double(const sim::Trajectory&)>;

StepScorer prm_scorer(const ad::ParamVector& phi, const prm::Architecture& arch);
/// Scores only the full-trajectory prefix.
FinalScorer orm_scorer(const ad::ParamVector& phi, const prm::Architecture& arch);
/// 0.9 at every step of a correct trajectory, 0.1 otherwise.
StepScorer oracle_scorer();
FinalScorer oracle_final_scorer();

/// Index of the highest aggregated score among the first k candidates; ties go to the lowest index.
std::size_t best_of_n(const StepScorer& scorer, const CandidateSet& set, int k);
/// Most frequent answer among the first k; ties go to the answer seen first.
int self_consistency(const CandidateSet& set, int k);
/// Index of the highest final-prefix score among the first k; ties go to the lowest index.
std::size_t orm_select(const FinalScorer& scorer, const CandidateSet& set, int k);

struct EvalConfig {
  std::vector<int> ks = kDefaultKs;
  void validate() const;
};

struct QuestionEval {
  std::uint64_t question_id = 0;
  std::vector<bool> correct;           // per candidate
  std::vector<double> aggregated;      // per candidate, PRM aggregate
  std::map<int, std::size_t> prm_pick;
  std::map<int, int> sc_answer;
  std::map<int, std::size_t> orm_pick;  // empty without an ORM

  bool operator==(const QuestionEval&) const = default;
};

struct EvalReport {
  std::string method;
  std::vector<int> ks;
  std::size_t num_questions = 0;
  std::map<int, double> pass_at;
  std::map<int, double> select_at;
  std::map<int, double> self_consistency;
  std::map<int, double> orm;  // empty without an ORM
  std::vector<QuestionEval> questions;

  double pass1() const { return pass_at.at(1); }
  /// 0/1 per question: was the PRM pick at k correct.
  std::vector<double> select_outcomes(int k) const;
  /// 0/1 per question: was the first candidate correct.
  std::vector<double> pass1_outcomes() const;

  bool operator==(const EvalReport&) const = default;
};

/// Scores every candidate once and computes all metrics on the same sets.
/// `orm` may be empty. Every k must not exceed the smallest candidate set.
EvalReport evaluate(const StepScorer& prm, const FinalScorer& orm, std::span<const CandidateSet> sets,
                    const EvalConfig& cfg, std::string method = "prm");
EvalReport evaluate(const ad::ParamVector& phi, const prm::Architecture& arch,
                    const std::optional<ad::ParamVector>& phi_orm, std::span<const sim::Question> questions,
                    const EvalConfig& cfg, std::string method = "prm");

/// Canonical JSON (sorted keys, fixed number formatting).
std::string eval_json(const EvalReport& report);
void write_eval_json(const std::filesystem::path& path, const EvalReport& report);
EvalReport read_eval_json(const std::filesystem::path& path);
/// One row per method x k: method,k,accuracy
void write_eval_csv(const std::filesystem::path& path, const EvalReport& report);

struct BootstrapResult {
  double mean_diff = 0.0;
  double lower = 0.0;  // lower bound of the two-sided interval
  double upper = 0.0;
};

/// Percentile bootstrap for mean(a - b), resampling paired entries.
BootstrapResult paired_bootstrap(std::span<const double> a, std::span<const double> b, int resamples,
                                 std::uint64_t seed, double confidence = 0.95);

}  // namespace dreamprm::select
