#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dreamprm/bilevel/trainer.hpp"
#include "dreamprm/inference/select.hpp"
#include "dreamprm/mc/supervision.hpp"
#include "dreamprm/pipeline/config.hpp"
#include "dreamprm/sim/simulator.hpp"

namespace dreamprm::pipeline {

enum class Stage { SIMULATE, LABEL, TRAIN, EVALUATE, REPORT };

std::string_view to_string(Stage s);
/// "all" or a comma-separated list of stage names; returned in pipeline order.
std::vector<Stage> parse_stages(std::string_view list);

// In-memory stages. Every random draw is derived from cfg.seed, so the
// training data and initial parameters are shared across variants.

struct SimulatedData {
  std::vector<sim::Domain> train;
  sim::Domain meta;
  sim::Domain test;
};

struct LabeledData {
  std::vector<mc::LabeledDataset> train;
  mc::LabeledDataset meta;
  std::vector<mc::FilterStats> filter_stats;  // one per training domain; zeros when filtering is off
};

struct TrainOutcome {
  ad::ParamVector phi;    // the selector's parameters (the ORM itself for ORM_ONLY)
  ad::ParamVector alpha;  // final domain weights
  bilevel::TrainHistory history;
  std::optional<ad::ParamVector> orm_phi;
};

SimulatedData simulate(const ExperimentConfig& cfg);
LabeledData label(const ExperimentConfig& cfg, const SimulatedData& data);
/// Prefix tables per training domain plus the meta trajectories and meta prefixes.
bilevel::TrainData build_train_data(const LabeledData& labels, const sim::Domain& meta);
/// Same tables restricted to full-trajectory prefixes.
bilevel::TrainData build_orm_data(const LabeledData& labels);
TrainOutcome train(const ExperimentConfig& cfg, const SimulatedData& data, const LabeledData& labels,
                   const bilevel::CheckpointFn& on_checkpoint = {});
select::EvalReport evaluate(const ExperimentConfig& cfg, const sim::Domain& test, const TrainOutcome& trained);

/// Method label used in EvalReport and the report files.
std::string method_name(Variant v);

// On-disk layout of one run directory.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path train_data(const std::string& domain) const { return root / "data" / ("train_" + domain + ".jsonl"); }
  std::filesystem::path meta_data() const { return root / "data" / "meta.jsonl"; }
  std::filesystem::path test_data() const { return root / "data" / "test.jsonl"; }
  std::filesystem::path train_labels(const std::string& domain) const {
    return root / "labels" / ("train_" + domain + ".jsonl");
  }
  std::filesystem::path meta_labels() const { return root / "labels" / "meta.jsonl"; }
  std::filesystem::path filter_stats() const { return root / "labels" / "filter_stats.json"; }
  std::filesystem::path history() const { return root / "train" / "history.csv"; }
  std::filesystem::path checkpoint(std::int64_t iteration) const;
  std::filesystem::path final_model() const { return root / "train" / "prm.bin"; }
  std::filesystem::path orm_model() const { return root / "train" / "orm.bin"; }
  std::filesystem::path divergence() const { return root / "train" / "divergence.txt"; }
  std::filesystem::path eval_json() const { return root / "eval" / "report.json"; }
  std::filesystem::path eval_csv() const { return root / "eval" / "report.csv"; }
  std::filesystem::path report_dir() const { return root / "report"; }
};

/// Runs the requested stages in order against cfg.output_dir. Each stage
/// reads the previous stage's files, so stages can be rerun independently.
/// Writes config.json first and manifest.json last (also after a failure).
/// Throws ConfigError, DivergenceError or MissingArtifactError.
void run_pipeline(const ExperimentConfig& cfg, std::span<const Stage> stages);

struct ReportSummary {
  std::vector<std::string> domain_names;
  std::vector<double> final_alpha;
  std::size_t iterations = 0;
  std::map<std::string, std::map<int, double>> accuracy;  // method -> k -> accuracy
};

/// Reads a completed run directory and writes report/: alpha, trajectory and
/// accuracy series as CSV and SVG, plus summary.md. Throws
/// MissingArtifactError listing every missing input.
ReportSummary report(const std::filesystem::path& artifact_dir);

struct Manifest {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string variant;
  std::string version;
  std::map<std::string, std::string> files;  // relative path -> sha256
};

/// Hashes every file under the run directory except the manifest itself.
Manifest build_manifest(const ExperimentConfig& cfg);
void write_manifest(const ExperimentConfig& cfg);
Manifest read_manifest(const std::filesystem::path& path);
/// Relative paths whose current hash differs from the manifest (missing files included).
std::vector<std::string> verify_manifest(const std::filesystem::path& artifact_dir);

/// Version string recorded in manifests.
std::string_view version();

}  // namespace dreamprm::pipeline
