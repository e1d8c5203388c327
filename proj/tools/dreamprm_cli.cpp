// dreamprm: runs the simulate -> label -> train -> evaluate -> report pipeline.
//
//   dreamprm all --config configs/default.toml --out runs/s1
//   dreamprm simulate --seed 3 --out runs/s3
//   dreamprm --config exp.toml --stages train,evaluate
//   dreamprm report --out runs/s1
//   dreamprm verify --out runs/s1
//   dreamprm defaults > exp.json
//
// Exit codes: 0 success, 2 config error, 3 numerical divergence,
// 4 missing artifact, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dreamprm/error.hpp"
#include "dreamprm/pipeline/config.hpp"
#include "dreamprm/pipeline/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
using namespace dreamprm;

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitMissing = 4;

struct Options {
  std::string command;
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<std::string> out;
  std::optional<std::string> stages;
};

pipeline::ExperimentConfig resolve_config(const Options& o) {
  auto cfg = o.config ? pipeline::load_config(*o.config) : pipeline::ExperimentConfig::defaults();
  pipeline::apply_env_overrides(cfg);
  if (o.seed) cfg.seed = *o.seed;
  if (o.variant) cfg.variant = pipeline::parse_variant(*o.variant);
  if (o.out) cfg.output_dir = *o.out;
  cfg.validate();
  return cfg;
}

int run(const Options& o) {
  if (o.command == "defaults") {
    std::cout << pipeline::config_to_json(pipeline::ExperimentConfig::defaults());
    return kExitOk;
  }
  if (o.command == "verify") {
    if (!o.out) throw ConfigError("out", "verify needs --out <run dir>");
    const auto bad = pipeline::verify_manifest(*o.out);
    for (const auto& f : bad) std::cout << "MISMATCH " << f << "\n";
    std::cout << (bad.empty() ? "manifest OK\n" : "manifest FAILED\n");
    return bad.empty() ? kExitOk : kExitMissing;
  }

  std::string list = o.stages.value_or(o.command.empty() ? "all" : o.command);
  const auto stages = pipeline::parse_stages(list);

  // A bare report on an existing run reuses the recorded config.
  if (stages.size() == 1 && stages[0] == pipeline::Stage::REPORT && !o.config && o.out) {
    const pipeline::RunPaths p{*o.out};
    if (!fs::is_regular_file(p.config())) {
      throw MissingArtifactError("report: '" + p.config().string() + "' not found");
    }
    auto cfg = pipeline::load_config(p.config());
    cfg.output_dir = *o.out;
    const auto summary = pipeline::report(p.root);
    pipeline::write_manifest(cfg);
    std::cout << "report written to " << p.report_dir().string() << " (" << summary.iterations
              << " outer iterations)\n";
    return kExitOk;
  }

  const auto cfg = resolve_config(o);
  std::cerr << "run " << cfg.output_dir.string() << ": variant " << pipeline::to_string(cfg.variant) << ", seed "
            << cfg.seed << ", config " << pipeline::config_hash(cfg).substr(0, 12) << "\n";
  std::cerr << "stages:";
  for (auto s : stages) std::cerr << " " << pipeline::to_string(s);
  std::cerr << "\n";
  pipeline::run_pipeline(cfg, stages);
  std::cerr << "done; manifest at " << pipeline::RunPaths{cfg.output_dir}.manifest().string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DreamPRM desk-scale experiment driver"};
  app.set_version_flag("--version", std::string(pipeline::version()));
  Options o;
  app.add_option("command", o.command,
                 "simulate | label | train | evaluate | report | all | verify | defaults (default: all)")
      ->check(CLI::IsMember({"simulate", "label", "train", "evaluate", "report", "all", "verify", "defaults"}));
  app.add_option("--config", o.config, "TOML (.toml) or JSON experiment config");
  app.add_option("--seed", o.seed, "override the config seed (takes precedence over DREAMPRM_SEED)");
  app.add_option("--variant", o.variant, "DREAMPRM | VANILLA | NO_AFL | ORM_ONLY");
  app.add_option("--out", o.out, "run directory");
  app.add_option("--stages", o.stages, "comma-separated stages, or all; overrides the command");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    return run(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged at iteration " << e.iteration() << ": " << e.what() << "\n";
    return kExitDivergence;
  } catch (const MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return kExitMissing;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
}
