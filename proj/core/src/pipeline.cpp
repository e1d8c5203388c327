#include "dreamprm/pipeline/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "dreamprm/error.hpp"
#include "dreamprm/prm/checkpoint.hpp"
#include "dreamprm/prm/losses.hpp"
#include "dreamprm/prm/model.hpp"
#include "dreamprm/rng.hpp"
#include "dreamprm/sim/dataset_io.hpp"
#include "hash_util.hpp"
#include "json_util.hpp"
#include "svg.hpp"

#ifndef DREAMPRM_VERSION_STRING
#define DREAMPRM_VERSION_STRING "unknown"
#endif

namespace dreamprm::pipeline {

namespace fs = std::filesystem;
using detail::json;

namespace {

constexpr std::uint64_t kSimulateStream = name_hash("simulate");
constexpr std::uint64_t kLabelStream = name_hash("label");
constexpr std::uint64_t kMetaStream = name_hash("meta");
constexpr std::uint64_t kTestStream = name_hash("test");
constexpr std::uint64_t kOrmStream = name_hash("orm");

constexpr std::array<Stage, 5> kAllStages = {Stage::SIMULATE, Stage::LABEL, Stage::TRAIN, Stage::EVALUATE,
                                             Stage::REPORT};

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<sim::Trajectory> all_trajectories(const sim::Domain& d) {
  std::vector<sim::Trajectory> out;
  out.reserve(d.num_trajectories());
  for (const auto& q : d.questions) out.insert(out.end(), q.trajectories.begin(), q.trajectories.end());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = detail::open_out(path);
  out << text;
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  auto in = detail::open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// Reads a domain file and checks it was produced from `expected`.
sim::Domain read_domain_checked(const fs::path& path, const sim::DomainSpec& expected) {
  auto d = sim::read_domain_jsonl(path);
  if (!(d.spec == expected)) {
    throw ConfigError("", "'" + path.string() + "' was simulated from a different domain spec; rerun the simulate stage");
  }
  return d;
}

bilevel::TrainConfig orm_train_config(const ExperimentConfig& cfg) {
  auto t = cfg.resolved_train();
  t.seed = derive_seed(cfg.seed, kOrmStream);
  return t;
}

bool wants_orm(const ExperimentConfig& cfg) { return cfg.variant == Variant::ORM_ONLY || cfg.eval.orm_baseline; }

// --- on-disk stages ------------------------------------------------------

void stage_simulate(const ExperimentConfig& cfg, const RunPaths& p) {
  auto data = simulate(cfg);
  for (const auto& d : data.train) sim::write_domain_jsonl(p.train_data(d.spec.name), d);
  sim::write_domain_jsonl(p.meta_data(), data.meta);
  sim::write_domain_jsonl(p.test_data(), data.test);
}

SimulatedData load_train_meta(const ExperimentConfig& cfg, const RunPaths& p) {
  SimulatedData data;
  for (const auto& spec : cfg.train_domains) data.train.push_back(read_domain_checked(p.train_data(spec.name), spec));
  data.meta = read_domain_checked(p.meta_data(), cfg.meta_domain);
  return data;
}

void stage_label(const ExperimentConfig& cfg, const RunPaths& p) {
  auto labels = label(cfg, load_train_meta(cfg, p));
  json stats = json::array();
  for (std::size_t k = 0; k < labels.train.size(); ++k) {
    mc::write_labels_jsonl(p.train_labels(cfg.train_domains[k].name), labels.train[k]);
    const auto& s = labels.filter_stats[k];
    stats.push_back({{"domain", cfg.train_domains[k].name},
                     {"questions_total", s.questions_total},
                     {"questions_discarded", s.questions_discarded},
                     {"discard_fraction", s.discard_fraction()}});
  }
  mc::write_labels_jsonl(p.meta_labels(), labels.meta);
  write_text(p.filter_stats(), json{{"dynamic_filter", cfg.labeling.dynamic_filter}, {"domains", stats}}.dump(2) + "\n");
}

void stage_train(const ExperimentConfig& cfg, const RunPaths& p) {
  auto data = load_train_meta(cfg, p);
  LabeledData labels;
  for (const auto& spec : cfg.train_domains) {
    labels.train.push_back(mc::read_labels_jsonl(p.train_labels(spec.name)));
    if (labels.train.back().num_rollouts != cfg.labeling.num_rollouts) {
      throw ConfigError("labeling.num_rollouts", "labels on disk were produced with a different rollout count; rerun the label stage");
    }
  }
  labels.meta = mc::read_labels_jsonl(p.meta_labels());

  const auto arch = cfg.resolved_train().arch;
  const std::string variant(to_string(cfg.variant));
  auto on_checkpoint = [&](std::int64_t it, const ad::ParamVector& phi, const ad::ParamVector& alpha) {
    prm::write_checkpoint(p.checkpoint(it), {arch, it, variant, phi, alpha});
  };

  std::error_code ec;
  fs::remove(p.divergence(), ec);
  TrainOutcome out;
  try {
    out = train(cfg, data, labels, on_checkpoint);
  } catch (const DivergenceError& e) {
    write_text(p.divergence(), "iteration " + std::to_string(e.iteration()) + "\n" + e.what() + "\n");
    throw;
  }
  bilevel::write_history_csv(p.history(), out.history);
  prm::write_checkpoint(p.final_model(),
                        {arch, static_cast<std::int64_t>(out.history.size()), variant, out.phi, out.alpha});
  fs::remove(p.orm_model(), ec);
  if (out.orm_phi) prm::write_checkpoint(p.orm_model(), {arch, cfg.train.total_outer_iterations, "ORM", *out.orm_phi, {}});
}

void stage_evaluate(const ExperimentConfig& cfg, const RunPaths& p) {
  auto test = read_domain_checked(p.test_data(), cfg.test_domain);
  TrainOutcome trained;
  auto main_ckpt = prm::read_checkpoint(p.final_model());
  trained.phi = std::move(main_ckpt.phi);
  trained.alpha = std::move(main_ckpt.alpha);
  if (wants_orm(cfg)) trained.orm_phi = prm::read_checkpoint(p.orm_model()).phi;
  auto rep = evaluate(cfg, test, trained);
  select::write_eval_json(p.eval_json(), rep);
  select::write_eval_csv(p.eval_csv(), rep);
}

std::vector<std::string> list_files(const fs::path& root) {
  std::vector<std::string> out;
  if (!fs::exists(root)) return out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    out.push_back(fs::relative(e.path(), root).generic_string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::SIMULATE: return "simulate";
    case Stage::LABEL: return "label";
    case Stage::TRAIN: return "train";
    case Stage::EVALUATE: return "evaluate";
    case Stage::REPORT: return "report";
  }
  return "?";
}

std::vector<Stage> parse_stages(std::string_view list) {
  if (lower(list) == "all") return {kAllStages.begin(), kAllStages.end()};
  std::vector<bool> want(kAllStages.size(), false);
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const auto comma = list.find(',', pos);
    const auto end = comma == std::string_view::npos ? list.size() : comma;
    std::string name = lower(list.substr(pos, end - pos));
    name.erase(0, name.find_first_not_of(" \t"));
    name.erase(name.find_last_not_of(" \t") + 1);
    bool found = false;
    for (std::size_t i = 0; i < kAllStages.size(); ++i) {
      if (to_string(kAllStages[i]) == name) want[i] = found = true;
    }
    if (!found) {
      throw ConfigError("stages", "unknown stage '" + name + "' (expected all or simulate,label,train,evaluate,report)");
    }
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  std::vector<Stage> out;
  for (std::size_t i = 0; i < kAllStages.size(); ++i) {
    if (want[i]) out.push_back(kAllStages[i]);
  }
  return out;
}

SimulatedData simulate(const ExperimentConfig& cfg) {
  cfg.validate();
  SimulatedData out;
  for (std::size_t k = 0; k < cfg.train_domains.size(); ++k) {
    out.train.push_back(sim::generate_domain(cfg.train_domains[k], derive_seed(cfg.seed, kSimulateStream, k)));
  }
  out.meta = sim::generate_domain(cfg.meta_domain, derive_seed(cfg.seed, kSimulateStream, kMetaStream));
  out.test = sim::generate_domain(cfg.test_domain, derive_seed(cfg.seed, kSimulateStream, kTestStream));
  return out;
}

LabeledData label(const ExperimentConfig& cfg, const SimulatedData& data) {
  if (data.train.size() != cfg.train_domains.size()) {
    throw ShapeError("label: expected " + std::to_string(cfg.train_domains.size()) + " training domains, got " +
                     std::to_string(data.train.size()));
  }
  LabeledData out;
  for (std::size_t k = 0; k < data.train.size(); ++k) {
    auto labelled = mc::label_dataset(data.train[k], cfg.labeling.num_rollouts, derive_seed(cfg.seed, kLabelStream, k));
    mc::FilterStats stats;
    if (cfg.labeling.dynamic_filter) {
      labelled = mc::filter_dataset(labelled, &stats);
    } else {
      stats.questions_total = data.train[k].questions.size();
    }
    out.train.push_back(std::move(labelled));
    out.filter_stats.push_back(stats);
  }
  out.meta = mc::label_dataset(data.meta, cfg.labeling.num_rollouts, derive_seed(cfg.seed, kLabelStream, kMetaStream));
  return out;
}

bilevel::TrainData build_train_data(const LabeledData& labels, const sim::Domain& meta) {
  bilevel::TrainData data;
  for (const auto& d : labels.train) {
    data.domain_names.push_back(d.domain);
    data.domains.push_back(prm::make_prefix_table(d.items));
  }
  const auto meta_traj = all_trajectories(meta);
  if (!meta_traj.empty()) data.meta = prm::make_trajectory_table(meta_traj);
  if (!labels.meta.items.empty()) data.meta_prefixes = prm::make_prefix_table(labels.meta.items);
  return data;
}

bilevel::TrainData build_orm_data(const LabeledData& labels) {
  bilevel::TrainData data;
  for (const auto& d : labels.train) {
    std::vector<mc::LabeledPrefix> finals;
    for (const auto& item : d.items) {
      if (item.prefix_len == item.steps) finals.push_back(item);
    }
    if (finals.empty()) throw Error("ORM data: domain '" + d.domain + "' has no complete trajectories");
    data.domain_names.push_back(d.domain);
    data.domains.push_back(prm::make_prefix_table(finals));
  }
  return data;
}

TrainOutcome train(const ExperimentConfig& cfg, const SimulatedData& data, const LabeledData& labels,
                   const bilevel::CheckpointFn& on_checkpoint) {
  cfg.validate();
  TrainOutcome out;
  std::optional<bilevel::TrainResult> orm;
  if (wants_orm(cfg)) {
    orm = bilevel::train_vanilla(orm_train_config(cfg), build_orm_data(labels),
                                 cfg.variant == Variant::ORM_ONLY ? on_checkpoint : bilevel::CheckpointFn{});
    out.orm_phi = orm->phi;
  }
  if (cfg.variant == Variant::ORM_ONLY) {
    out.phi = orm->phi;
    out.alpha = orm->alpha;
    out.history = std::move(orm->history);
    return out;
  }
  const auto tcfg = cfg.resolved_train();
  const auto tdata = build_train_data(labels, data.meta);
  auto result = cfg.variant == Variant::VANILLA ? bilevel::train_vanilla(tcfg, tdata, on_checkpoint)
                                                : bilevel::train_dreamprm(tcfg, tdata, on_checkpoint);
  out.phi = std::move(result.phi);
  out.alpha = std::move(result.alpha);
  out.history = std::move(result.history);
  return out;
}

select::EvalReport evaluate(const ExperimentConfig& cfg, const sim::Domain& test, const TrainOutcome& trained) {
  select::EvalConfig ec{cfg.eval.ks};
  ec.validate();
  const auto arch = cfg.resolved_train().arch;
  std::vector<select::CandidateSet> sets;
  sets.reserve(test.questions.size());
  for (const auto& q : test.questions) sets.push_back(select::CandidateSet::from_question(q));

  select::FinalScorer orm;
  if (trained.orm_phi) orm = select::orm_scorer(*trained.orm_phi, arch);
  select::StepScorer prm;
  if (cfg.variant == Variant::ORM_ONLY) {
    if (!trained.orm_phi) throw MissingArtifactError("ORM_ONLY evaluation needs the outcome model");
    auto final_score = select::orm_scorer(*trained.orm_phi, arch);
    prm = [final_score](const sim::Trajectory& t) { return std::vector<double>{final_score(t)}; };
  } else {
    prm = select::prm_scorer(trained.phi, arch);
  }
  return select::evaluate(prm, orm, sets, ec, method_name(cfg.variant));
}

std::string method_name(Variant v) { return lower(to_string(v)); }

fs::path RunPaths::checkpoint(std::int64_t iteration) const {
  return root / "train" / ("checkpoint_" + std::to_string(iteration) + ".bin");
}

void run_pipeline(const ExperimentConfig& cfg, std::span<const Stage> stages) {
  cfg.validate();
  const RunPaths p{cfg.output_dir};
  fs::create_directories(p.root);
  write_text(p.config(), run_config_json(cfg));
  try {
    for (Stage s : stages) {
      switch (s) {
        case Stage::SIMULATE: stage_simulate(cfg, p); break;
        case Stage::LABEL: stage_label(cfg, p); break;
        case Stage::TRAIN: stage_train(cfg, p); break;
        case Stage::EVALUATE: stage_evaluate(cfg, p); break;
        case Stage::REPORT: report(p.root); break;
      }
    }
  } catch (...) {
    write_manifest(cfg);
    throw;
  }
  write_manifest(cfg);
}

// --- report ----------------------------------------------------------------

ReportSummary report(const fs::path& artifact_dir) {
  const RunPaths p{artifact_dir};
  std::vector<std::string> missing;
  for (const auto& f : {p.config(), p.history(), p.eval_json()}) {
    if (!fs::is_regular_file(f)) missing.push_back(fs::relative(f, p.root).generic_string());
  }
  if (!missing.empty()) {
    std::string msg = "report: run directory '" + p.root.string() + "' is incomplete; missing";
    for (const auto& m : missing) msg += " " + m;
    throw MissingArtifactError(msg);
  }
  const auto cfg = parse_config_json(read_text(p.config()));
  const auto history = bilevel::read_history_csv(p.history());
  const auto eval = select::read_eval_json(p.eval_json());

  ReportSummary summary;
  summary.domain_names = history.domain_names;
  if (cfg.train_domains.size() == summary.domain_names.size()) {
    for (std::size_t k = 0; k < cfg.train_domains.size(); ++k) summary.domain_names[k] = cfg.train_domains[k].name;
  }
  summary.iterations = history.size();
  if (!history.records.empty()) summary.final_alpha = history.records.back().alpha;
  for (int k : eval.ks) {
    summary.accuracy["pass"][k] = eval.pass_at.at(k);
    summary.accuracy[eval.method][k] = eval.select_at.at(k);
    summary.accuracy["self_consistency"][k] = eval.self_consistency.at(k);
    if (eval.orm.count(k)) summary.accuracy["orm"][k] = eval.orm.at(k);
  }

  const fs::path dir = p.report_dir();
  {
    std::string csv = "domain,alpha\n";
    for (std::size_t i = 0; i < summary.final_alpha.size(); ++i) {
      csv += summary.domain_names[i] + "," + fmt(summary.final_alpha[i]) + "\n";
    }
    write_text(dir / "alpha.csv", csv);
    write_text(dir / "alpha.svg", detail::svg::bar_chart("Final domain weights", summary.domain_names,
                                                         summary.final_alpha, 1.0));
  }
  {
    std::string csv = "iteration,inner_loss,meta_loss";
    for (const auto& n : summary.domain_names) csv += ",alpha_" + n;
    csv += "\n";
    std::vector<detail::svg::Series> alpha_series(summary.domain_names.size());
    for (std::size_t k = 0; k < alpha_series.size(); ++k) alpha_series[k].name = summary.domain_names[k];
    detail::svg::Series inner{"inner loss", {}, {}}, meta{"meta loss", {}, {}};
    for (const auto& r : history.records) {
      csv += std::to_string(r.iteration) + "," + fmt(r.inner_loss) + "," + fmt(r.meta_loss);
      const auto x = static_cast<double>(r.iteration);
      for (std::size_t k = 0; k < r.alpha.size(); ++k) {
        csv += "," + fmt(r.alpha[k]);
        alpha_series[k].x.push_back(x);
        alpha_series[k].y.push_back(r.alpha[k]);
      }
      csv += "\n";
      inner.x.push_back(x);
      inner.y.push_back(r.inner_loss);
      meta.x.push_back(x);
      meta.y.push_back(r.meta_loss);
    }
    write_text(dir / "trajectory.csv", csv);
    write_text(dir / "alpha_trajectory.svg",
               detail::svg::line_chart("Domain weights during training", "outer iteration", "alpha", alpha_series));
    write_text(dir / "loss_trajectory.svg",
               detail::svg::line_chart("Training losses", "outer iteration", "loss", {inner, meta}));
  }
  {
    std::string csv = "method,k,accuracy\n";
    std::vector<detail::svg::Series> series;
    for (const auto& [method, by_k] : summary.accuracy) {
      detail::svg::Series s{method, {}, {}};
      for (const auto& [k, acc] : by_k) {
        csv += method + "," + std::to_string(k) + "," + fmt(acc) + "\n";
        s.x.push_back(k);
        s.y.push_back(acc);
      }
      series.push_back(std::move(s));
    }
    write_text(dir / "accuracy.csv", csv);
    write_text(dir / "accuracy.svg", detail::svg::line_chart("Test accuracy vs candidates", "k", "accuracy", series));
  }
  {
    std::ostringstream md;
    md << "# Run summary\n\n";
    md << "- variant: " << to_string(cfg.variant) << "\n";
    md << "- seed: " << cfg.seed << "\n";
    md << "- outer iterations: " << summary.iterations << "\n";
    md << "- test questions: " << eval.num_questions << "\n\n";
    md << "## Final domain weights\n\n| domain | alpha |\n|---|---|\n";
    for (std::size_t i = 0; i < summary.final_alpha.size(); ++i) {
      md << "| " << summary.domain_names[i] << " | " << fmt(summary.final_alpha[i]) << " |\n";
    }
    md << "\n## Accuracy\n\n| method |";
    for (int k : eval.ks) md << " k=" << k << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < eval.ks.size(); ++i) md << "---|";
    md << "\n";
    for (const auto& [method, by_k] : summary.accuracy) {
      md << "| " << method << " |";
      for (int k : eval.ks) md << " " << (by_k.count(k) ? fmt(by_k.at(k)) : "-") << " |";
      md << "\n";
    }
    md << "\nFigures: alpha.svg, alpha_trajectory.svg, loss_trajectory.svg, accuracy.svg\n";
    write_text(dir / "summary.md", md.str());
  }
  return summary;
}

// --- manifest --------------------------------------------------------------

Manifest build_manifest(const ExperimentConfig& cfg) {
  const RunPaths p{cfg.output_dir};
  Manifest m;
  m.config_hash = config_hash(cfg);
  m.seed = cfg.seed;
  m.variant = std::string(to_string(cfg.variant));
  m.version = std::string(version());
  const auto manifest_name = fs::relative(p.manifest(), p.root).generic_string();
  for (const auto& rel : list_files(p.root)) {
    if (rel == manifest_name) continue;
    m.files[rel] = detail::sha256_file(p.root / rel);
  }
  return m;
}

void write_manifest(const ExperimentConfig& cfg) {
  const auto m = build_manifest(cfg);
  json j{{"config_hash", m.config_hash},
         {"seed", m.seed},
         {"variant", m.variant},
         {"version", m.version},
         {"files", m.files}};
  write_text(RunPaths{cfg.output_dir}.manifest(), j.dump(2) + "\n");
}

Manifest read_manifest(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
    Manifest m;
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.variant = j.at("variant").get<std::string>();
    m.version = j.at("version").get<std::string>();
    m.files = j.at("files").get<std::map<std::string, std::string>>();
    return m;
  } catch (const json::exception& e) {
    throw Error("'" + path.string() + "': malformed manifest: " + e.what());
  }
}

std::vector<std::string> verify_manifest(const fs::path& artifact_dir) {
  const RunPaths p{artifact_dir};
  const auto m = read_manifest(p.manifest());
  std::vector<std::string> bad;
  for (const auto& [rel, hash] : m.files) {
    const auto path = p.root / rel;
    if (!fs::is_regular_file(path) || detail::sha256_file(path) != hash) bad.push_back(rel);
  }
  return bad;
}

std::string_view version() { return DREAMPRM_VERSION_STRING; }

}  // namespace dreamprm::pipeline
