#pragma once

// Internal JSON helpers; nlohmann stays out of the public headers.

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

#include <json.hpp>

#include "dreamprm/error.hpp"
#include "dreamprm/sim/simulator.hpp"

namespace dreamprm::detail {

using nlohmann::json;

inline std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw MissingArtifactError("cannot open '" + path.string() + "'");
  return in;
}

/// Calls `fn(obj, line_no)` for every non-empty line; parse errors carry the line number.
inline void for_each_jsonl(const std::filesystem::path& path, const std::function<void(const json&, int)>& fn) {
  auto in = open_in(path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      fn(obj, line_no);
    } catch (const json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline json domain_spec_to_json(const sim::DomainSpec& s) {
  return json{{"name", s.name},
              {"num_questions", s.num_questions},
              {"steps_per_trajectory", s.steps_per_trajectory},
              {"trajectories_per_question", s.trajectories_per_question},
              {"flaw_rate", s.flaw_rate},
              {"label_noise", s.label_noise},
              {"triviality", s.triviality},
              {"feature_noise_sigma", s.feature_noise_sigma},
              {"base_solve_prob", s.base_solve_prob},
              {"flaw_decay", s.flaw_decay}};
}

inline sim::DomainSpec domain_spec_from_json(const json& j) {
  sim::DomainSpec s;
  s.name = j.at("name").get<std::string>();
  s.num_questions = j.at("num_questions").get<int>();
  s.steps_per_trajectory = j.at("steps_per_trajectory").get<int>();
  s.trajectories_per_question = j.at("trajectories_per_question").get<int>();
  s.flaw_rate = j.at("flaw_rate").get<double>();
  s.label_noise = j.at("label_noise").get<double>();
  s.triviality = j.at("triviality").get<double>();
  s.feature_noise_sigma = j.at("feature_noise_sigma").get<double>();
  s.base_solve_prob = j.at("base_solve_prob").get<double>();
  s.flaw_decay = j.at("flaw_decay").get<double>();
  return s;
}

inline json step_to_json(const sim::Step& s) {
  return json{{"index", s.index}, {"flawed", s.flawed}, {"features", s.features}};
}

inline sim::Step step_from_json(const json& j) {
  sim::Step s;
  s.index = j.at("index").get<int>();
  s.flawed = j.at("flawed").get<bool>();
  s.features = j.at("features").get<std::vector<double>>();
  return s;
}

}  // namespace dreamprm::detail
