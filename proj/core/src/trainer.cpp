#include "dreamprm/bilevel/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dreamprm/error.hpp"
#include "dreamprm/rng.hpp"
#include "json_util.hpp"

namespace dreamprm::bilevel {

namespace {

constexpr std::uint64_t kInnerStream = 0x696e6e6572ULL;  // "inner"
constexpr std::uint64_t kMetaStream = 0x6d657461ULL;     // "meta"

ad::Matrix column(const ad::ParamVector& p) { return p.as_eigen(); }

ad::ParamVector like(const ad::Matrix& col, const ad::ParamVector& layout) {
  return ad::ParamVector(std::vector<double>(col.data(), col.data() + col.size()), layout.blocks());
}

std::vector<Eigen::Index> sample_rows(Rng& rng, Eigen::Index population, int count) {
  std::uniform_int_distribution<Eigen::Index> pick(0, population - 1);
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(count));
  for (auto& r : rows) r = pick(rng);
  return rows;
}

std::vector<prm::PrefixTable> sample_domain_batches(Rng& rng, const TrainData& data, int batch) {
  std::vector<prm::PrefixTable> out;
  out.reserve(data.num_domains());
  for (const auto& d : data.domains) {
    const auto rows = sample_rows(rng, d.size(), batch);
    out.push_back(prm::gather(d, rows));
  }
  return out;
}

struct MetaBatch {
  prm::TrajectoryTable trajectories;
  prm::PrefixTable prefixes;
};

MetaBatch sample_meta(Rng& rng, const TrainData& data, const TrainConfig& cfg) {
  MetaBatch b;
  if (cfg.upper_objective == UpperObjective::AFL) {
    if (data.meta.size() > 0) b.trajectories = prm::gather(data.meta, sample_rows(rng, data.meta.size(), cfg.meta_batch_size));
  } else if (data.meta_prefixes.size() > 0) {
    b.prefixes = prm::gather(data.meta_prefixes, sample_rows(rng, data.meta_prefixes.size(), cfg.meta_batch_size));
  }
  return b;
}

ad::Var meta_objective(ad::Var phi, const TrainConfig& cfg, const MetaBatch& b) {
  return cfg.upper_objective == UpperObjective::AFL ? prm::meta_loss_node(phi, cfg.arch, b.trajectories)
                                                    : prm::train_loss_node(phi, cfg.arch, b.prefixes);
}

bool has_meta(const TrainData& data, const TrainConfig& cfg) {
  return cfg.upper_objective == UpperObjective::AFL ? data.meta.size() > 0 : data.meta_prefixes.size() > 0;
}

void check_data(const TrainConfig& cfg, const TrainData& data, bool need_meta) {
  if (data.domains.empty()) throw Error("training data has no domains");
  if (!data.domain_names.empty() && data.domain_names.size() != data.domains.size()) {
    throw ShapeError("training data: domain_names does not match domains");
  }
  for (std::size_t k = 0; k < data.domains.size(); ++k) {
    if (data.domains[k].size() == 0) throw Error("training domain " + std::to_string(k) + " is empty");
    if (data.domains[k].inputs.cols() != cfg.arch.input_dim()) {
      throw ShapeError("training domain " + std::to_string(k) + ": input width does not match architecture");
    }
  }
  if (need_meta && !has_meta(data, cfg)) throw Error("meta set is empty");
}

void guard(std::int64_t it, double value, const char* what, const TrainConfig& cfg) {
  if (!std::isfinite(value) || std::abs(value) > cfg.divergence_threshold) {
    std::ostringstream os;
    os << what << " diverged at outer iteration " << it << " (value " << value << ")";
    throw DivergenceError(static_cast<long>(it), os.str());
  }
}

TrainHistory empty_history(const TrainData& data) {
  TrainHistory h;
  h.domain_names = data.domain_names;
  if (h.domain_names.empty()) {
    for (std::size_t k = 0; k < data.num_domains(); ++k) h.domain_names.push_back("domain_" + std::to_string(k + 1));
  }
  return h;
}

}  // namespace

void TrainConfig::validate() const {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (unroll_steps < 1) throw ConfigError("train.unroll_steps", "must be >= 1");
  if (!positive(inner_lr)) throw ConfigError("train.inner_lr", "must be > 0");
  if (!(inner_weight_decay >= 0.0)) throw ConfigError("train.inner_weight_decay", "must be >= 0");
  if (!positive(outer_lr)) throw ConfigError("train.outer_lr", "must be > 0");
  if (!(outer_weight_decay >= 0.0)) throw ConfigError("train.outer_weight_decay", "must be >= 0");
  if (outer_step_size < 1) throw ConfigError("train.outer_step_size", "must be >= 1");
  if (!positive(outer_gamma) || outer_gamma > 1.0) throw ConfigError("train.outer_gamma", "must be in (0, 1]");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("train.adam_beta1", "must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("train.adam_beta2", "must be in [0, 1)");
  if (!positive(adam_eps)) throw ConfigError("train.adam_eps", "must be > 0");
  if (total_outer_iterations < 1) throw ConfigError("train.total_outer_iterations", "must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
  if (meta_batch_size < 1) throw ConfigError("train.meta_batch_size", "must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every", "must be >= 0");
  if (!positive(divergence_threshold)) throw ConfigError("train.divergence_threshold", "must be > 0");
  if (arch.feature_dim < 1) throw ConfigError("prm.feature_dim", "must be >= 1");
  if (arch.hidden < 1) throw ConfigError("prm.hidden", "must be >= 1");
}

ad::UnrollConfig TrainConfig::unroll() const {
  ad::UnrollConfig u;
  u.steps = unroll_steps;
  u.lr = inner_lr;
  u.optimizer = inner_optimizer;
  u.weight_decay = inner_weight_decay;
  u.beta1 = adam_beta1;
  u.beta2 = adam_beta2;
  u.eps = adam_eps;
  return u;
}

ad::AdamWConfig TrainConfig::outer_adamw(std::int64_t iteration) const {
  return {ad::step_decay_lr(outer_lr, outer_step_size, outer_gamma, iteration), outer_weight_decay, adam_beta1,
          adam_beta2, adam_eps};
}

ad::ParamVector inner_update(const ad::ParamVector& phi, const ad::ParamVector& alpha,
                             std::span<const prm::PrefixTable> batches, const TrainConfig& cfg,
                             ad::OptimizerState& state) {
  if (alpha.size() != batches.size()) {
    throw ShapeError("inner_update: " + std::to_string(alpha.size()) + " weights for " +
                     std::to_string(batches.size()) + " domains");
  }
  ad::Tape tape;
  ad::Var a = tape.constant(column(alpha));
  ad::Var p = tape.leaf(column(phi), "phi");
  ad::Var loss = prm::weighted_train_loss_node(p, a, cfg.arch, batches);
  if (!std::isfinite(loss.scalar())) throw NumericalError("inner_update", "non-finite training loss");
  const ad::Var wrt[] = {p};
  const auto grad = like(tape.gradients(loss, wrt)[0], phi);

  if (cfg.inner_optimizer == ad::InnerOptimizer::SGD) return ad::sgd_step(phi, grad, cfg.inner_lr);
  auto [next, st] = ad::adamw_step(phi, grad, state, cfg.unroll().adamw());
  state = std::move(st);
  return next;
}

ad::ParamVector outer_update(const ad::ParamVector& alpha, const ad::ParamVector& hypergrad,
                             ad::OptimizerState& outer_state, std::int64_t iteration, const TrainConfig& cfg) {
  auto [next, st] = ad::adamw_step(alpha, hypergrad, outer_state, cfg.outer_adamw(iteration));
  outer_state = std::move(st);
  return next;
}

TrainResult train_dreamprm(const TrainConfig& cfg, const TrainData& data, const CheckpointFn& on_checkpoint) {
  cfg.validate();
  check_data(cfg, data, true);

  TrainResult out;
  out.phi = prm::init_params(cfg.arch, cfg.seed);
  out.alpha = ad::ParamVector::filled(data.num_domains(), 1.0);
  out.history = empty_history(data);

  Rng inner_rng(derive_seed(cfg.seed, kInnerStream));
  Rng meta_rng(derive_seed(cfg.seed, kMetaStream));
  auto inner_state = ad::OptimizerState::fresh(out.phi.size());
  auto outer_state = ad::OptimizerState::fresh(out.alpha.size());
  const auto unroll = cfg.unroll();

  for (std::int64_t it = 0; it < cfg.total_outer_iterations; ++it) {
    if (cfg.inner_state == InnerState::RESET) inner_state = ad::OptimizerState::fresh(out.phi.size());

    std::vector<std::vector<prm::PrefixTable>> batches;
    batches.reserve(static_cast<std::size_t>(cfg.unroll_steps));
    for (int s = 0; s < cfg.unroll_steps; ++s) batches.push_back(sample_domain_batches(inner_rng, data, cfg.batch_size));
    const MetaBatch meta = sample_meta(meta_rng, data, cfg);

    const ad::InnerLossFn inner = [&](ad::Tape&, ad::Var phi, ad::Var alpha, int step) {
      return prm::weighted_train_loss_node(phi, alpha, cfg.arch, batches[static_cast<std::size_t>(step)]);
    };
    const ad::MetaLossFn outer = [&](ad::Tape&, ad::Var phi) { return meta_objective(phi, cfg, meta); };

    ad::UnrollResult r;
    try {
      r = ad::hypergrad_unrolled(inner, outer, out.phi, out.alpha, unroll, inner_state);
    } catch (const NumericalError& e) {
      throw DivergenceError(static_cast<long>(it),
                            "outer iteration " + std::to_string(it) + ", " + e.where() + ": " + e.what());
    }
    const double inner_mean =
        std::accumulate(r.inner_losses.begin(), r.inner_losses.end(), 0.0) / static_cast<double>(r.inner_losses.size());
    guard(it, inner_mean, "inner loss", cfg);
    guard(it, r.meta_loss, "meta loss", cfg);
    if (!r.meta_grad.all_finite()) {
      throw DivergenceError(static_cast<long>(it), "non-finite hypergradient at outer iteration " + std::to_string(it));
    }

    out.phi = std::move(r.phi);
    inner_state = std::move(r.state);
    const double lr = cfg.outer_adamw(it).lr;
    out.alpha = outer_update(out.alpha, r.meta_grad, outer_state, it, cfg);

    out.history.records.push_back({it, inner_mean, r.meta_loss, out.alpha.raw(), lr});
    if (on_checkpoint && cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0) {
      on_checkpoint(it + 1, out.phi, out.alpha);
    }
  }
  return out;
}

TrainResult train_vanilla(const TrainConfig& cfg, const TrainData& data, const CheckpointFn& on_checkpoint) {
  cfg.validate();
  check_data(cfg, data, false);

  TrainResult out;
  out.phi = prm::init_params(cfg.arch, cfg.seed);
  out.alpha = ad::ParamVector::filled(data.num_domains(), 1.0);
  out.history = empty_history(data);

  Rng inner_rng(derive_seed(cfg.seed, kInnerStream));
  Rng meta_rng(derive_seed(cfg.seed, kMetaStream));
  auto state = ad::OptimizerState::fresh(out.phi.size());
  const bool monitor = has_meta(data, cfg);

  for (std::int64_t it = 0; it < cfg.total_outer_iterations; ++it) {
    if (cfg.inner_state == InnerState::RESET) state = ad::OptimizerState::fresh(out.phi.size());
    double inner_sum = 0.0;
    for (int s = 0; s < cfg.unroll_steps; ++s) {
      const auto batches = sample_domain_batches(inner_rng, data, cfg.batch_size);
      ad::Tape tape;
      const double loss = prm::weighted_train_loss_node(tape.constant(column(out.phi)),
                                                        tape.constant(column(out.alpha)), cfg.arch, batches)
                              .scalar();
      guard(it, loss, "inner loss", cfg);
      inner_sum += loss;
      try {
        out.phi = inner_update(out.phi, out.alpha, batches, cfg, state);
      } catch (const NumericalError& e) {
        throw DivergenceError(static_cast<long>(it), "outer iteration " + std::to_string(it) + ": " + e.what());
      }
    }
    double meta = std::nan("");
    if (monitor) {
      const MetaBatch mb = sample_meta(meta_rng, data, cfg);
      ad::Tape tape;
      meta = meta_objective(tape.constant(column(out.phi)), cfg, mb).scalar();
      guard(it, meta, "meta loss", cfg);
    }
    out.history.records.push_back(
        {it, inner_sum / cfg.unroll_steps, meta, out.alpha.raw(), cfg.outer_adamw(it).lr});
    if (on_checkpoint && cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0) {
      on_checkpoint(it + 1, out.phi, out.alpha);
    }
  }
  return out;
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
  auto out = detail::open_out(path);
  out << "iteration,inner_loss,meta_loss";
  const std::size_t k = history.domain_names.size();
  for (std::size_t j = 0; j < k; ++j) out << ",alpha_" << (j + 1);
  out << ",lr\n";
  char buf[32];
  auto num = [&](double v) -> const char* {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  };
  for (const auto& r : history.records) {
    if (r.alpha.size() != k) throw ShapeError("write_history_csv: record alpha length does not match domain count");
    out << r.iteration << ',' << num(r.inner_loss) << ',' << num(r.meta_loss);
    for (double a : r.alpha) out << ',' << num(a);
    out << ',' << num(r.lr) << '\n';
  }
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

TrainHistory read_history_csv(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw Error("'" + path.string() + "': empty history file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 4 || header[0] != "iteration" || header.back() != "lr") {
    throw Error("'" + path.string() + "': unexpected history header");
  }
  const std::size_t k = header.size() - 4;
  TrainHistory h;
  for (std::size_t j = 0; j < k; ++j) h.domain_names.push_back(header[3 + j]);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) v.push_back(std::strtod(cell.c_str(), nullptr));
    if (v.size() != header.size()) throw Error("'" + path.string() + "': ragged history row");
    HistoryRecord r;
    r.iteration = static_cast<std::int64_t>(v[0]);
    r.inner_loss = v[1];
    r.meta_loss = v[2];
    r.alpha.assign(v.begin() + 3, v.end() - 1);
    r.lr = v.back();
    h.records.push_back(std::move(r));
  }
  return h;
}

double smoothed(std::span<const double> values, std::size_t at, std::size_t window) {
  if (values.empty() || at >= values.size()) throw Error("smoothed: index out of range");
  window = std::max<std::size_t>(window, 1);
  const std::size_t begin = at + 1 >= window ? at + 1 - window : 0;
  double sum = 0.0;
  for (std::size_t i = begin; i <= at; ++i) sum += values[i];
  return sum / static_cast<double>(at + 1 - begin);
}

}  // namespace dreamprm::bilevel
