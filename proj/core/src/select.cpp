#include "dreamprm/inference/select.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "dreamprm/error.hpp"
#include "dreamprm/prm/losses.hpp"
#include "dreamprm/rng.hpp"
#include "json_util.hpp"

namespace dreamprm::select {

using detail::json;

namespace {

bool is_correct(const sim::Trajectory& t) { return t.answer == sim::kCorrectAnswer; }

void check_k(const CandidateSet& set, int k, const char* op) {
  if (set.candidates.empty()) throw Error(std::string(op) + ": empty candidate set");
  if (k < 1 || static_cast<std::size_t>(k) > set.size()) {
    throw Error(std::string(op) + ": k=" + std::to_string(k) + " outside [1, " + std::to_string(set.size()) + "]");
  }
}

std::size_t argmax_prefix(std::span<const double> scores, int k) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < static_cast<std::size_t>(k); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

int vote(std::span<const int> answers, int k) {
  std::map<int, int> counts;
  for (int i = 0; i < k; ++i) ++counts[answers[static_cast<std::size_t>(i)]];
  int best = answers[0];
  for (int i = 1; i < k; ++i) {
    const int a = answers[static_cast<std::size_t>(i)];
    if (counts[a] > counts[best]) best = a;
  }
  return best;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json int_map(const std::map<int, double>& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[std::to_string(k)] = v;
  return j;
}

std::map<int, double> read_int_map(const json& j) {
  std::map<int, double> m;
  for (const auto& [k, v] : j.items()) m[std::stoi(k)] = v.get<double>();
  return m;
}

template <class V>
json pick_map(const std::map<int, V>& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[std::to_string(k)] = v;
  return j;
}

template <class V>
std::map<int, V> read_pick_map(const json& j) {
  std::map<int, V> m;
  for (const auto& [k, v] : j.items()) m[std::stoi(k)] = v.template get<V>();
  return m;
}

}  // namespace

CandidateSet CandidateSet::from_question(const sim::Question& q) {
  CandidateSet s;
  s.question_id = q.id;
  s.candidates = q.trajectories;
  for (const auto& t : q.trajectories) s.answers.push_back(t.answer);
  s.validate();
  return s;
}

void CandidateSet::validate() const {
  if (candidates.empty()) throw Error("candidate set " + std::to_string(question_id) + " is empty");
  if (answers.size() != candidates.size()) throw ShapeError("candidate set: answers do not match candidates");
  for (const auto& c : candidates) {
    if (c.question_id != question_id) throw Error("candidate set mixes questions");
  }
}

StepScorer prm_scorer(const ad::ParamVector& phi, const prm::Architecture& arch) {
  return [phi, arch](const sim::Trajectory& t) { return prm::score_trajectory(phi, arch, t); };
}

FinalScorer orm_scorer(const ad::ParamVector& phi, const prm::Architecture& arch) {
  return [phi, arch](const sim::Trajectory& t) { return prm::score_step(phi, arch, t.steps); };
}

StepScorer oracle_scorer() {
  return [](const sim::Trajectory& t) { return std::vector<double>(t.steps.size(), is_correct(t) ? 0.9 : 0.1); };
}

FinalScorer oracle_final_scorer() {
  return [](const sim::Trajectory& t) { return is_correct(t) ? 0.9 : 0.1; };
}

std::size_t best_of_n(const StepScorer& scorer, const CandidateSet& set, int k) {
  check_k(set, k, "best_of_n");
  std::vector<double> agg;
  for (int i = 0; i < k; ++i) agg.push_back(prm::aggregate(scorer(set.candidates[static_cast<std::size_t>(i)])));
  return argmax_prefix(agg, k);
}

int self_consistency(const CandidateSet& set, int k) {
  check_k(set, k, "self_consistency");
  if (set.answers.size() != set.size()) throw ShapeError("self_consistency: answers do not match candidates");
  return vote(set.answers, k);
}

std::size_t orm_select(const FinalScorer& scorer, const CandidateSet& set, int k) {
  check_k(set, k, "orm_select");
  std::vector<double> s;
  for (int i = 0; i < k; ++i) s.push_back(scorer(set.candidates[static_cast<std::size_t>(i)]));
  return argmax_prefix(s, k);
}

void EvalConfig::validate() const {
  if (ks.empty()) throw ConfigError("eval.ks", "must list at least one k");
  for (int k : ks) {
    if (k < 1) throw ConfigError("eval.ks", "every k must be >= 1");
  }
  if (!std::is_sorted(ks.begin(), ks.end()) || std::adjacent_find(ks.begin(), ks.end()) != ks.end()) {
    throw ConfigError("eval.ks", "must be strictly increasing");
  }
}

std::vector<double> EvalReport::select_outcomes(int k) const {
  std::vector<double> out;
  for (const auto& q : questions) out.push_back(q.correct[q.prm_pick.at(k)] ? 1.0 : 0.0);
  return out;
}

std::vector<double> EvalReport::pass1_outcomes() const {
  std::vector<double> out;
  for (const auto& q : questions) out.push_back(q.correct[0] ? 1.0 : 0.0);
  return out;
}

EvalReport evaluate(const StepScorer& prm, const FinalScorer& orm, std::span<const CandidateSet> sets,
                    const EvalConfig& cfg, std::string method) {
  cfg.validate();
  if (sets.empty()) throw Error("evaluate: no test questions");
  EvalReport r;
  r.method = std::move(method);
  r.ks = cfg.ks;
  r.num_questions = sets.size();
  for (int k : cfg.ks) {
    r.pass_at[k] = r.select_at[k] = r.self_consistency[k] = 0.0;
    if (orm) r.orm[k] = 0.0;
  }

  for (const auto& set : sets) {
    set.validate();
    if (static_cast<std::size_t>(cfg.ks.back()) > set.size()) {
      throw Error("evaluate: question " + std::to_string(set.question_id) + " has fewer than " +
                  std::to_string(cfg.ks.back()) + " candidates");
    }
    QuestionEval q;
    q.question_id = set.question_id;
    std::vector<double> final_scores;
    for (const auto& c : set.candidates) {
      q.correct.push_back(is_correct(c));
      q.aggregated.push_back(prm::aggregate(prm(c)));
      if (orm) final_scores.push_back(orm(c));
    }
    for (int k : cfg.ks) {
      const auto first_k = q.correct.begin() + k;
      if (std::find(q.correct.begin(), first_k, true) != first_k) r.pass_at[k] += 1.0;
      q.prm_pick[k] = argmax_prefix(q.aggregated, k);
      if (q.correct[q.prm_pick[k]]) r.select_at[k] += 1.0;
      q.sc_answer[k] = vote(set.answers, k);
      if (q.sc_answer[k] == sim::kCorrectAnswer) r.self_consistency[k] += 1.0;
      if (orm) {
        q.orm_pick[k] = argmax_prefix(final_scores, k);
        if (q.correct[q.orm_pick[k]]) r.orm[k] += 1.0;
      }
    }
    r.questions.push_back(std::move(q));
  }
  const double n = static_cast<double>(sets.size());
  for (auto* m : {&r.pass_at, &r.select_at, &r.self_consistency, &r.orm}) {
    for (auto& [k, v] : *m) v /= n;
  }
  return r;
}

EvalReport evaluate(const ad::ParamVector& phi, const prm::Architecture& arch,
                    const std::optional<ad::ParamVector>& phi_orm, std::span<const sim::Question> questions,
                    const EvalConfig& cfg, std::string method) {
  std::vector<CandidateSet> sets;
  sets.reserve(questions.size());
  for (const auto& q : questions) sets.push_back(CandidateSet::from_question(q));
  return evaluate(prm_scorer(phi, arch), phi_orm ? orm_scorer(*phi_orm, arch) : FinalScorer{}, sets, cfg,
                  std::move(method));
}

std::string eval_json(const EvalReport& r) {
  json j;
  j["schema_version"] = 1;
  j["method"] = r.method;
  j["ks"] = r.ks;
  j["num_questions"] = r.num_questions;
  j["pass_at"] = int_map(r.pass_at);
  j["select_at"] = int_map(r.select_at);
  j["self_consistency"] = int_map(r.self_consistency);
  j["orm"] = int_map(r.orm);
  json qs = json::array();
  for (const auto& q : r.questions) {
    qs.push_back({{"question_id", q.question_id},
                  {"correct", q.correct},
                  {"aggregated", q.aggregated},
                  {"prm_pick", pick_map(q.prm_pick)},
                  {"sc_answer", pick_map(q.sc_answer)},
                  {"orm_pick", pick_map(q.orm_pick)}});
  }
  j["questions"] = std::move(qs);
  return j.dump(2) + "\n";
}

void write_eval_json(const std::filesystem::path& path, const EvalReport& report) {
  auto out = detail::open_out(path, std::ios::out | std::ios::binary);
  out << eval_json(report);
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

EvalReport read_eval_json(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  json j;
  try {
    j = json::parse(in);
    EvalReport r;
    r.method = j.at("method").get<std::string>();
    r.ks = j.at("ks").get<std::vector<int>>();
    r.num_questions = j.at("num_questions").get<std::size_t>();
    r.pass_at = read_int_map(j.at("pass_at"));
    r.select_at = read_int_map(j.at("select_at"));
    r.self_consistency = read_int_map(j.at("self_consistency"));
    r.orm = read_int_map(j.at("orm"));
    for (const auto& qj : j.at("questions")) {
      QuestionEval q;
      q.question_id = qj.at("question_id").get<std::uint64_t>();
      q.correct = qj.at("correct").get<std::vector<bool>>();
      q.aggregated = qj.at("aggregated").get<std::vector<double>>();
      q.prm_pick = read_pick_map<std::size_t>(qj.at("prm_pick"));
      q.sc_answer = read_pick_map<int>(qj.at("sc_answer"));
      q.orm_pick = read_pick_map<std::size_t>(qj.at("orm_pick"));
      r.questions.push_back(std::move(q));
    }
    return r;
  } catch (const json::exception& e) {
    throw Error("'" + path.string() + "': " + e.what());
  }
}

void write_eval_csv(const std::filesystem::path& path, const EvalReport& r) {
  auto out = detail::open_out(path, std::ios::out | std::ios::binary);
  out << "method,k,accuracy\n";
  auto rows = [&](const std::string& name, const std::map<int, double>& m) {
    for (const auto& [k, v] : m) out << name << ',' << k << ',' << fmt(v) << '\n';
  };
  rows("pass", r.pass_at);
  rows(r.method, r.select_at);
  rows("self_consistency", r.self_consistency);
  rows("orm", r.orm);
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

BootstrapResult paired_bootstrap(std::span<const double> a, std::span<const double> b, int resamples,
                                 std::uint64_t seed, double confidence) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("paired_bootstrap: need equal, non-empty samples");
  if (resamples < 1) throw Error("paired_bootstrap: resamples must be >= 1");
  if (!(confidence > 0.0 && confidence < 1.0)) throw Error("paired_bootstrap: confidence must lie in (0, 1)");
  const std::size_t n = a.size();
  std::vector<double> diff(n);
  for (std::size_t i = 0; i < n; ++i) diff[i] = a[i] - b[i];

  BootstrapResult res;
  res.mean_diff = std::accumulate(diff.begin(), diff.end(), 0.0) / static_cast<double>(n);
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += diff[pick(rng)];
    m = s / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  const double tail = (1.0 - confidence) / 2.0;
  auto at = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(resamples - 1)));
    return means[std::min(idx, means.size() - 1)];
  };
  res.lower = at(tail);
  res.upper = at(1.0 - tail);
  return res;
}

}  // namespace dreamprm::select
