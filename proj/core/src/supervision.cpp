#include "dreamprm/mc/supervision.hpp"

#include <algorithm>

#include "json_util.hpp"

namespace dreamprm::mc {

using detail::json;

namespace {

std::vector<std::vector<double>> prefix_features(std::span<const sim::Step> prefix) {
  std::vector<std::vector<double>> rows;
  rows.reserve(prefix.size());
  for (const auto& s : prefix) rows.push_back(s.features);
  return rows;
}

}  // namespace

LabeledPrefix monte_carlo_label(const sim::Completer& completer, std::uint64_t question_id,
                                std::span<const sim::Step> prefix, int num_rollouts, std::uint64_t seed) {
  if (num_rollouts < 1) throw Error("monte_carlo_label: num_rollouts must be >= 1");
  LabeledPrefix out;
  out.question_id = question_id;
  out.prefix_len = static_cast<int>(prefix.size());
  out.steps = completer.steps;
  out.features = prefix_features(prefix);
  out.num_rollouts = num_rollouts;
  for (int r = 0; r < num_rollouts; ++r) {
    const auto t = sim::complete_from_prefix(completer, question_id, prefix, derive_seed(seed, r));
    if (t.final_correct) ++out.correct;
  }
  return out;
}

LabeledDataset label_dataset(const sim::Domain& domain, int num_rollouts, std::uint64_t seed) {
  if (num_rollouts < 1) throw Error("label_dataset: num_rollouts must be >= 1");
  LabeledDataset data;
  data.domain = domain.spec.name;
  data.seed = seed;
  data.num_rollouts = num_rollouts;
  data.items.reserve(domain.num_trajectories() * static_cast<std::size_t>(domain.spec.steps_per_trajectory));

  for (const auto& q : domain.questions) {
    const auto completer = sim::Completer::for_question(domain.spec, q);
    for (std::size_t j = 0; j < q.trajectories.size(); ++j) {
      const auto& traj = q.trajectories[j];
      const std::span<const sim::Step> steps(traj.steps);
      const int n = static_cast<int>(steps.size());
      for (int i = 1; i <= n; ++i) {
        LabeledPrefix lp;
        if (i < n) {
          lp = monte_carlo_label(completer, q.id, steps.first(static_cast<std::size_t>(i)), num_rollouts,
                                 derive_seed(seed, q.id, j, static_cast<std::uint64_t>(i)));
        } else {
          lp.question_id = q.id;
          lp.prefix_len = n;
          lp.steps = n;
          lp.features = prefix_features(steps);
          lp.num_rollouts = num_rollouts;
          lp.correct = traj.final_correct ? num_rollouts : 0;
        }
        lp.trajectory = static_cast<int>(j);
        data.items.push_back(std::move(lp));
      }
    }
  }
  return data;
}

bool dynamic_filter(std::span<const LabeledPrefix> labels_for_question) {
  if (labels_for_question.empty()) throw Error("dynamic_filter: empty label list");
  const bool all_zero = std::all_of(labels_for_question.begin(), labels_for_question.end(),
                                    [](const LabeledPrefix& l) { return l.correct == 0; });
  const bool all_one = std::all_of(labels_for_question.begin(), labels_for_question.end(),
                                   [](const LabeledPrefix& l) { return l.correct == l.num_rollouts; });
  return !(all_zero || all_one);
}

LabeledDataset filter_dataset(const LabeledDataset& data, FilterStats* stats) {
  LabeledDataset out;
  out.domain = data.domain;
  out.seed = data.seed;
  out.num_rollouts = data.num_rollouts;
  FilterStats local;
  const auto& items = data.items;
  std::size_t begin = 0;
  while (begin < items.size()) {
    std::size_t end = begin;
    while (end < items.size() && items[end].question_id == items[begin].question_id) ++end;
    const std::span<const LabeledPrefix> group(items.data() + begin, end - begin);
    ++local.questions_total;
    if (dynamic_filter(group)) {
      out.items.insert(out.items.end(), group.begin(), group.end());
    } else {
      ++local.questions_discarded;
    }
    begin = end;
  }
  if (stats) *stats = local;
  return out;
}

void write_labels_jsonl(const std::filesystem::path& path, const LabeledDataset& data) {
  auto out = detail::open_out(path);
  for (const auto& lp : data.items) {
    out << json{{"schema_version", kLabelSchemaVersion},
                {"domain", data.domain},
                {"seed", data.seed},
                {"num_rollouts", lp.num_rollouts},
                {"question_id", lp.question_id},
                {"trajectory", lp.trajectory},
                {"prefix_len", lp.prefix_len},
                {"steps", lp.steps},
                {"correct", lp.correct},
                {"p", lp.p()},
                {"features", lp.features}}
               .dump()
        << '\n';
  }
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

LabeledDataset read_labels_jsonl(const std::filesystem::path& path) {
  LabeledDataset data;
  bool first = true;
  detail::for_each_jsonl(path, [&](const json& obj, int line_no) {
    if (obj.at("schema_version").get<int>() != kLabelSchemaVersion) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": unsupported schema_version");
    }
    if (first) {
      data.domain = obj.at("domain").get<std::string>();
      data.seed = obj.at("seed").get<std::uint64_t>();
      data.num_rollouts = obj.at("num_rollouts").get<int>();
      first = false;
    }
    LabeledPrefix lp;
    lp.question_id = obj.at("question_id").get<std::uint64_t>();
    lp.trajectory = obj.at("trajectory").get<int>();
    lp.prefix_len = obj.at("prefix_len").get<int>();
    lp.steps = obj.at("steps").get<int>();
    lp.correct = obj.at("correct").get<int>();
    lp.num_rollouts = obj.at("num_rollouts").get<int>();
    lp.features = obj.at("features").get<std::vector<std::vector<double>>>();
    data.items.push_back(std::move(lp));
  });
  return data;
}

}  // namespace dreamprm::mc
