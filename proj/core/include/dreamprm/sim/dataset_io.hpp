#pragma once

#include <filesystem>

#include "dreamprm/sim/simulator.hpp"

namespace dreamprm::sim {

/// Trajectory dataset schema version written to every line.
inline constexpr int kDatasetSchemaVersion = 1;

/// JSON-lines layout, one object per line:
///   line 1:  {"record":"domain","schema_version":1,"seed":..,"spec":{..}}
///   then:    {"record":"trajectory","schema_version":1,"question_id":..,
///             "easy":..,"final_correct":..,"answer":..,
///             "steps":[{"index":..,"flawed":..,"features":[..]}, ..]}
/// Trajectories of one question are contiguous.
void write_domain_jsonl(const std::filesystem::path& path, const Domain& domain);
Domain read_domain_jsonl(const std::filesystem::path& path);

}  // namespace dreamprm::sim
