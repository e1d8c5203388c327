#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dreamprm/bilevel/trainer.hpp"
#include "dreamprm/inference/select.hpp"
#include "dreamprm/sim/simulator.hpp"

namespace dreamprm::pipeline {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kSeedEnvVar = "DREAMPRM_SEED";

enum class Variant { DREAMPRM, VANILLA, NO_AFL, ORM_ONLY };

std::string_view to_string(Variant v);
/// Accepts the enum spelling, case-insensitively; throws ConfigError.
Variant parse_variant(std::string_view text);

struct LabelingConfig {
  int num_rollouts = 8;
  bool dynamic_filter = false;
};

struct EvalSettings {
  std::vector<int> ks = select::kDefaultKs;
  bool orm_baseline = true;  // also train and score the outcome-only model
};

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::uint64_t seed = 0;
  Variant variant = Variant::DREAMPRM;
  std::filesystem::path output_dir = "runs/default";

  std::vector<sim::DomainSpec> train_domains;
  sim::DomainSpec meta_domain;
  sim::DomainSpec test_domain;
  LabelingConfig labeling;
  bilevel::TrainConfig train;  // `seed` and `upper_objective` are derived, not read
  EvalSettings eval;

  /// Four training domains (two informative, one label-noisy, one mostly
  /// trivial) plus a clean meta domain and a clean test domain.
  static ExperimentConfig defaults();

  /// Throws ConfigError with the dotted field path of the first problem.
  void validate() const;

  /// The training configuration actually used: seed derived from `seed`,
  /// upper objective from `variant`.
  bilevel::TrainConfig resolved_train() const;
};

/// Reads TOML (`.toml`) or JSON (anything else). Missing keys keep their
/// defaults; unknown keys and type mismatches raise ConfigError.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config_toml(std::string_view text);
ExperimentConfig parse_config_json(std::string_view text);

/// Canonical JSON (sorted keys, every field present).
std::string config_to_json(const ExperimentConfig& cfg);
/// Canonical JSON without `output_dir`: what a run directory records, so
/// identical experiments written to different places hash the same.
std::string run_config_json(const ExperimentConfig& cfg);
/// SHA-256 of run_config_json, hex encoded.
std::string config_hash(const ExperimentConfig& cfg);

/// Applies DREAMPRM_SEED if set; throws ConfigError if it is not an unsigned integer.
void apply_env_overrides(ExperimentConfig& cfg);

}  // namespace dreamprm::pipeline
