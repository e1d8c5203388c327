#include "dreamprm/pipeline/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "dreamprm/error.hpp"
#include "dreamprm/rng.hpp"
#include "hash_util.hpp"
#include "json_util.hpp"

namespace dreamprm::pipeline {

using detail::json;

namespace {

std::string upper(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::toupper(c); });
  return out;
}

std::string join(const std::string& prefix, const std::string& key) { return prefix.empty() ? key : prefix + "." + key; }

/// Re-roots a DomainSpec validation error ("<name>.<field>") under `path`.
void validate_domain(const sim::DomainSpec& s, const std::string& path) {
  try {
    s.validate();
  } catch (const ConfigError& e) {
    const auto dot = e.field().find('.');
    const std::string leaf = dot == std::string::npos ? "name" : e.field().substr(dot + 1);
    std::string what = e.what();
    const auto colon = what.find(": ");
    if (colon != std::string::npos) what = what.substr(colon + 2);
    throw ConfigError(path + "." + leaf, what);
  }
}

/// Walks one JSON object, remembering which keys were consumed so that
/// leftovers can be reported as unknown.
class Fields {
 public:
  Fields(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_, "expected a table");
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string field(const std::string& key) const { return join(path_, key); }

  void get(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(field(key), "expected a number");
      out = v->get<double>();
    }
  }

  void get(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(field(key), "expected an integer");
      const auto x = v->get<std::int64_t>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
        throw ConfigError(field(key), "integer out of range");
      }
      out = static_cast<int>(x);
    }
  }

  void get(const std::string& key, std::int64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(field(key), "expected an integer");
      out = v->get<std::int64_t>();
    }
  }

  void get(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (v->is_number_unsigned()) {
        out = v->get<std::uint64_t>();
      } else if (v->is_number_integer() && v->get<std::int64_t>() >= 0) {
        out = static_cast<std::uint64_t>(v->get<std::int64_t>());
      } else {
        throw ConfigError(field(key), "expected a non-negative integer");
      }
    }
  }

  void get(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(field(key), "expected true or false");
      out = v->get<bool>();
    }
  }

  void get(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(field(key), "expected a string");
      out = v->get<std::string>();
    }
  }

  void get(const std::string& key, std::vector<int>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(field(key), "expected an array of integers");
      std::vector<int> xs;
      for (const auto& e : *v) {
        if (!e.is_number_integer()) throw ConfigError(field(key), "expected an array of integers");
        xs.push_back(e.get<int>());
      }
      out = std::move(xs);
    }
  }

  template <class E>
  void get_enum(const std::string& key, E& out, const std::vector<std::pair<std::string, E>>& names) {
    std::string text;
    get(key, text);
    if (text.empty()) return;
    const std::string u = upper(text);
    for (const auto& [name, value] : names) {
      if (u == name) {
        out = value;
        return;
      }
    }
    std::string allowed;
    for (const auto& [name, value] : names) allowed += (allowed.empty() ? "" : ", ") + name;
    throw ConfigError(field(key), "unknown value '" + text + "' (expected one of " + allowed + ")");
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.contains(key)) throw ConfigError(field(key), "unknown key");
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

const std::vector<std::pair<std::string, ad::InnerOptimizer>> kOptimizers = {{"SGD", ad::InnerOptimizer::SGD},
                                                                            {"ADAMW", ad::InnerOptimizer::ADAMW}};
const std::vector<std::pair<std::string, bilevel::InnerState>> kInnerStates = {{"PERSIST", bilevel::InnerState::PERSIST},
                                                                              {"RESET", bilevel::InnerState::RESET}};
const std::vector<std::pair<std::string, Variant>> kVariants = {{"DREAMPRM", Variant::DREAMPRM},
                                                               {"VANILLA", Variant::VANILLA},
                                                               {"NO_AFL", Variant::NO_AFL},
                                                               {"ORM_ONLY", Variant::ORM_ONLY}};

void read_domain(const json& j, const std::string& path, sim::DomainSpec& s) {
  Fields f(j, path);
  f.get("name", s.name);
  f.get("num_questions", s.num_questions);
  f.get("steps_per_trajectory", s.steps_per_trajectory);
  f.get("trajectories_per_question", s.trajectories_per_question);
  f.get("flaw_rate", s.flaw_rate);
  f.get("label_noise", s.label_noise);
  f.get("triviality", s.triviality);
  f.get("feature_noise_sigma", s.feature_noise_sigma);
  f.get("base_solve_prob", s.base_solve_prob);
  f.get("flaw_decay", s.flaw_decay);
  f.finish();
}

ExperimentConfig from_json(const json& root) {
  ExperimentConfig cfg = ExperimentConfig::defaults();
  Fields f(root, "");
  f.get("schema_version", cfg.schema_version);
  if (cfg.schema_version != kConfigSchemaVersion) {
    throw ConfigError("schema_version", "unsupported version " + std::to_string(cfg.schema_version));
  }
  f.get("seed", cfg.seed);
  f.get_enum("variant", cfg.variant, kVariants);
  std::string out = cfg.output_dir.string();
  f.get("output_dir", out);
  cfg.output_dir = out;

  if (const json* domains = f.find("domains")) {
    if (!domains->is_array()) throw ConfigError("domains", "expected an array of tables");
    // Listed domains replace the defaults; each starts from simulator defaults.
    cfg.train_domains.clear();
    for (std::size_t k = 0; k < domains->size(); ++k) {
      sim::DomainSpec s;
      s.name = "domain_" + std::to_string(k + 1);
      read_domain((*domains)[k], "domains[" + std::to_string(k) + "]", s);
      cfg.train_domains.push_back(std::move(s));
    }
  }
  if (const json* m = f.find("meta_domain")) read_domain(*m, "meta_domain", cfg.meta_domain);
  if (const json* t = f.find("test_domain")) read_domain(*t, "test_domain", cfg.test_domain);

  if (const json* l = f.find("labeling")) {
    Fields lf(*l, "labeling");
    lf.get("num_rollouts", cfg.labeling.num_rollouts);
    lf.get("dynamic_filter", cfg.labeling.dynamic_filter);
    lf.finish();
  }
  if (const json* t = f.find("train")) {
    Fields tf(*t, "train");
    auto& tc = cfg.train;
    tf.get("unroll_steps", tc.unroll_steps);
    tf.get("inner_lr", tc.inner_lr);
    tf.get_enum("inner_optimizer", tc.inner_optimizer, kOptimizers);
    tf.get("inner_weight_decay", tc.inner_weight_decay);
    tf.get_enum("inner_state", tc.inner_state, kInnerStates);
    tf.get("outer_lr", tc.outer_lr);
    tf.get("outer_weight_decay", tc.outer_weight_decay);
    tf.get("outer_step_size", tc.outer_step_size);
    tf.get("outer_gamma", tc.outer_gamma);
    tf.get("adam_beta1", tc.adam_beta1);
    tf.get("adam_beta2", tc.adam_beta2);
    tf.get("adam_eps", tc.adam_eps);
    tf.get("total_outer_iterations", tc.total_outer_iterations);
    tf.get("batch_size", tc.batch_size);
    tf.get("meta_batch_size", tc.meta_batch_size);
    tf.get("checkpoint_every", tc.checkpoint_every);
    tf.get("divergence_threshold", tc.divergence_threshold);
    tf.get("hidden", tc.arch.hidden);
    tf.finish();
  }
  if (const json* e = f.find("eval")) {
    Fields ef(*e, "eval");
    ef.get("ks", cfg.eval.ks);
    ef.get("orm_baseline", cfg.eval.orm_baseline);
    ef.finish();
  }
  f.finish();
  cfg.validate();
  return cfg;
}

json toml_to_json(const toml::node& node, const std::string& path) {
  if (const auto* t = node.as_table()) {
    json j = json::object();
    for (auto&& [k, v] : *t) {
      const std::string key(k.str());
      j[key] = toml_to_json(v, join(path, key));
    }
    return j;
  }
  if (const auto* a = node.as_array()) {
    json j = json::array();
    for (std::size_t i = 0; i < a->size(); ++i) j.push_back(toml_to_json(*a->get(i), path + "[" + std::to_string(i) + "]"));
    return j;
  }
  if (const auto* v = node.as_integer()) return v->get();
  if (const auto* v = node.as_floating_point()) return v->get();
  if (const auto* v = node.as_boolean()) return v->get();
  if (const auto* v = node.as_string()) return v->get();
  throw ConfigError(path, "unsupported value type");
}

json train_to_json(const bilevel::TrainConfig& t) {
  return json{{"unroll_steps", t.unroll_steps},
              {"inner_lr", t.inner_lr},
              {"inner_optimizer", t.inner_optimizer == ad::InnerOptimizer::SGD ? "SGD" : "ADAMW"},
              {"inner_weight_decay", t.inner_weight_decay},
              {"inner_state", t.inner_state == bilevel::InnerState::PERSIST ? "PERSIST" : "RESET"},
              {"outer_lr", t.outer_lr},
              {"outer_weight_decay", t.outer_weight_decay},
              {"outer_step_size", t.outer_step_size},
              {"outer_gamma", t.outer_gamma},
              {"adam_beta1", t.adam_beta1},
              {"adam_beta2", t.adam_beta2},
              {"adam_eps", t.adam_eps},
              {"total_outer_iterations", t.total_outer_iterations},
              {"batch_size", t.batch_size},
              {"meta_batch_size", t.meta_batch_size},
              {"checkpoint_every", t.checkpoint_every},
              {"divergence_threshold", t.divergence_threshold},
              {"hidden", t.arch.hidden}};
}

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::DREAMPRM: return "DREAMPRM";
    case Variant::VANILLA: return "VANILLA";
    case Variant::NO_AFL: return "NO_AFL";
    case Variant::ORM_ONLY: return "ORM_ONLY";
  }
  return "?";
}

Variant parse_variant(std::string_view text) {
  const std::string u = upper(text);
  for (const auto& [name, value] : kVariants) {
    if (u == name) return value;
  }
  throw ConfigError("variant", "unknown variant '" + std::string(text) + "'");
}

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig cfg;
  auto domain = [](std::string name) {
    sim::DomainSpec s;
    s.name = std::move(name);
    s.num_questions = 1000;
    s.flaw_rate = 0.3;
    return s;
  };
  auto a = domain("informative_a");
  auto b = domain("informative_b");
  b.label_noise = 0.05;
  auto noisy = domain("label_noisy");
  noisy.label_noise = 0.5;
  auto trivial = domain("trivial");
  trivial.triviality = 0.9;
  cfg.train_domains = {a, b, noisy, trivial};
  cfg.meta_domain = domain("meta");
  cfg.meta_domain.num_questions = 200;
  cfg.test_domain = domain("test");
  cfg.test_domain.num_questions = 1000;

  cfg.train.inner_optimizer = ad::InnerOptimizer::SGD;
  cfg.train.inner_lr = 0.05;
  return cfg;
}

void ExperimentConfig::validate() const {
  if (schema_version != kConfigSchemaVersion) throw ConfigError("schema_version", "unsupported version");
  if (output_dir.empty()) throw ConfigError("output_dir", "must be non-empty");
  if (train_domains.empty()) throw ConfigError("domains", "need at least one training domain");
  std::set<std::string> names;
  for (std::size_t k = 0; k < train_domains.size(); ++k) {
    const auto& s = train_domains[k];
    const std::string path = "domains[" + std::to_string(k) + "]";
    validate_domain(s, path);
    if (!names.insert(s.name).second) throw ConfigError(path + ".name", "duplicate domain name '" + s.name + "'");
    if (s.steps_per_trajectory != train_domains.front().steps_per_trajectory) {
      throw ConfigError(path + ".steps_per_trajectory", "all domains must share one trajectory length");
    }
    if (s.name.find_first_of("/\\") != std::string::npos) throw ConfigError(path + ".name", "must not contain path separators");
  }
  for (const auto& [spec, path] : {std::pair{&meta_domain, "meta_domain"}, std::pair{&test_domain, "test_domain"}}) {
    validate_domain(*spec, path);
    if (spec->steps_per_trajectory != train_domains.front().steps_per_trajectory) {
      throw ConfigError(std::string(path) + ".steps_per_trajectory", "all domains must share one trajectory length");
    }
  }
  if (labeling.num_rollouts < 1) throw ConfigError("labeling.num_rollouts", "must be >= 1");
  select::EvalConfig{eval.ks}.validate();
  if (eval.ks.back() > test_domain.trajectories_per_question) {
    throw ConfigError("eval.ks", "largest k exceeds test_domain.trajectories_per_question");
  }
  resolved_train().validate();
}

bilevel::TrainConfig ExperimentConfig::resolved_train() const {
  bilevel::TrainConfig t = train;
  t.seed = derive_seed(seed, name_hash("train"));
  t.upper_objective = variant == Variant::NO_AFL ? bilevel::UpperObjective::PER_STEP : bilevel::UpperObjective::AFL;
  t.arch.feature_dim = sim::kFeatureDim;
  return t;
}

ExperimentConfig parse_config_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("", std::string("invalid JSON: ") + e.what());
  }
  return from_json(j);
}

ExperimentConfig parse_config_toml(std::string_view text) {
  toml::table table;
  try {
    table = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "invalid TOML at line " << e.source().begin.line << ": " << e.description();
    throw ConfigError("", os.str());
  }
  return from_json(toml_to_json(table, ""));
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return path.extension() == ".toml" ? parse_config_toml(ss.str()) : parse_config_json(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json domains = json::array();
  for (const auto& s : cfg.train_domains) domains.push_back(detail::domain_spec_to_json(s));
  const json j{{"schema_version", cfg.schema_version},
               {"seed", cfg.seed},
               {"variant", std::string(to_string(cfg.variant))},
               {"output_dir", cfg.output_dir.generic_string()},
               {"domains", domains},
               {"meta_domain", detail::domain_spec_to_json(cfg.meta_domain)},
               {"test_domain", detail::domain_spec_to_json(cfg.test_domain)},
               {"labeling", {{"num_rollouts", cfg.labeling.num_rollouts}, {"dynamic_filter", cfg.labeling.dynamic_filter}}},
               {"train", train_to_json(cfg.train)},
               {"eval", {{"ks", cfg.eval.ks}, {"orm_baseline", cfg.eval.orm_baseline}}}};
  return j.dump(2) + "\n";
}

std::string run_config_json(const ExperimentConfig& cfg) {
  auto j = json::parse(config_to_json(cfg));
  j.erase("output_dir");
  return j.dump(2) + "\n";
}

std::string config_hash(const ExperimentConfig& cfg) { return detail::sha256_hex(run_config_json(cfg)); }

void apply_env_overrides(ExperimentConfig& cfg) {
  const char* raw = std::getenv(kSeedEnvVar);
  if (raw == nullptr) return;
  const std::string_view text(raw);
  std::uint64_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("seed", std::string(kSeedEnvVar) + " must be an unsigned integer, got '" + raw + "'");
  }
  cfg.seed = value;
}

}  // namespace dreamprm::pipeline
