#include "dreamprm/sim/dataset_io.hpp"

#include "json_util.hpp"

namespace dreamprm::sim {

using detail::json;

void write_domain_jsonl(const std::filesystem::path& path, const Domain& domain) {
  auto out = detail::open_out(path);
  out << json{{"record", "domain"},
              {"schema_version", kDatasetSchemaVersion},
              {"seed", domain.seed},
              {"spec", detail::domain_spec_to_json(domain.spec)}}
             .dump()
      << '\n';
  for (const auto& q : domain.questions) {
    for (const auto& t : q.trajectories) {
      json steps = json::array();
      for (const auto& s : t.steps) steps.push_back(detail::step_to_json(s));
      out << json{{"record", "trajectory"},
                  {"schema_version", kDatasetSchemaVersion},
                  {"question_id", t.question_id},
                  {"easy", q.easy},
                  {"final_correct", t.final_correct},
                  {"answer", t.answer},
                  {"steps", std::move(steps)}}
                 .dump()
          << '\n';
    }
  }
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

Domain read_domain_jsonl(const std::filesystem::path& path) {
  Domain d;
  bool have_header = false;
  detail::for_each_jsonl(path, [&](const json& obj, int line_no) {
    if (obj.at("schema_version").get<int>() != kDatasetSchemaVersion) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": unsupported schema_version");
    }
    const auto record = obj.at("record").get<std::string>();
    if (record == "domain") {
      d.spec = detail::domain_spec_from_json(obj.at("spec"));
      d.seed = obj.at("seed").get<std::uint64_t>();
      have_header = true;
      return;
    }
    if (record != "trajectory") throw Error(path.string() + ":" + std::to_string(line_no) + ": unknown record");
    Trajectory t;
    t.question_id = obj.at("question_id").get<std::uint64_t>();
    t.final_correct = obj.at("final_correct").get<bool>();
    t.answer = obj.at("answer").get<int>();
    for (const auto& s : obj.at("steps")) t.steps.push_back(detail::step_from_json(s));
    if (d.questions.empty() || d.questions.back().id != t.question_id) {
      Question q;
      q.id = t.question_id;
      q.easy = obj.at("easy").get<bool>();
      d.questions.push_back(std::move(q));
    }
    d.questions.back().trajectories.push_back(std::move(t));
  });
  if (!have_header) throw Error(path.string() + ": missing domain header record");
  return d;
}

}  // namespace dreamprm::sim
