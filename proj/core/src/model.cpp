#include "dreamprm/prm/model.hpp"

#include <cmath>

#include "dreamprm/error.hpp"
#include "dreamprm/rng.hpp"

namespace dreamprm::prm {

namespace {

struct Offsets {
  Eigen::Index w1, b1, w2, b2, w3, b3;
};

Offsets offsets(const Architecture& a) {
  const Eigen::Index in = a.input_dim(), h = a.hidden;
  Offsets o{};
  o.w1 = 0;
  o.b1 = o.w1 + in * h;
  o.w2 = o.b1 + h;
  o.b2 = o.w2 + h * h;
  o.w3 = o.b2 + h;
  o.b3 = o.w3 + h;
  return o;
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

std::vector<ad::Block> Architecture::blocks() const {
  const Eigen::Index in = input_dim(), h = hidden;
  return {{"w1", in, h}, {"b1", 1, h}, {"w2", h, h}, {"b2", 1, h}, {"w3", h, 1}, {"b3", 1, 1}};
}

std::size_t Architecture::num_params() const {
  std::size_t n = 0;
  for (const auto& b : blocks()) n += static_cast<std::size_t>(b.size());
  return n;
}

ad::ParamVector init_params(const Architecture& arch, std::uint64_t seed, bool zero_output) {
  if (arch.feature_dim < 1 || arch.hidden < 1) throw Error("init_params: dimensions must be positive");
  auto p = ad::ParamVector::zeros(arch.blocks());
  Rng rng(derive_seed(seed, name_hash("prm-init")));
  auto fill = [&](const std::string& name) {
    const auto& b = p.block(name);
    const double s = std::sqrt(6.0 / static_cast<double>(b.rows + b.cols));
    std::uniform_real_distribution<double> u(-s, s);
    const std::size_t off = p.offset_of(name);
    for (Eigen::Index i = 0; i < b.size(); ++i) p[off + static_cast<std::size_t>(i)] = u(rng);
  };
  fill("w1");
  fill("w2");
  if (!zero_output) fill("w3");
  return p;
}

std::vector<double> prefix_input(std::span<const std::vector<double>> prefix_features) {
  if (prefix_features.empty()) throw Error("prefix_input: empty prefix");
  const std::size_t d = prefix_features.front().size();
  std::vector<double> row(2 * d + 1, 0.0);
  for (const auto& f : prefix_features) {
    if (f.size() != d) throw ShapeError("prefix_input: inconsistent feature width");
    for (std::size_t k = 0; k < d; ++k) {
      if (!std::isfinite(f[k])) throw NumericalError("prefix_input", "non-finite step feature");
      row[k] += f[k];
    }
  }
  const double inv = 1.0 / static_cast<double>(prefix_features.size());
  for (std::size_t k = 0; k < d; ++k) row[k] *= inv;
  const auto& last = prefix_features.back();
  for (std::size_t k = 0; k < d; ++k) row[d + k] = last[k];
  row[2 * d] = last[static_cast<std::size_t>(sim::kPositionDim)];
  return row;
}

std::vector<double> prefix_input(std::span<const sim::Step> prefix) {
  std::vector<std::vector<double>> rows;
  rows.reserve(prefix.size());
  for (const auto& s : prefix) rows.push_back(s.features);
  return prefix_input(rows);
}

ad::Var forward(ad::Var phi, const Architecture& arch, ad::Var inputs) {
  if (static_cast<std::size_t>(phi.rows()) != arch.num_params() || phi.cols() != 1) {
    throw ShapeError("prm::forward: parameter vector does not match architecture");
  }
  if (inputs.cols() != arch.input_dim()) throw ShapeError("prm::forward: input width does not match architecture");
  const Offsets o = offsets(arch);
  const Eigen::Index in = arch.input_dim(), h = arch.hidden, batch = inputs.rows();
  auto w1 = ad::slice(phi, o.w1, in, h);
  auto b1 = ad::slice(phi, o.b1, 1, h);
  auto w2 = ad::slice(phi, o.w2, h, h);
  auto b2 = ad::slice(phi, o.b2, 1, h);
  auto w3 = ad::slice(phi, o.w3, h, 1);
  auto b3 = ad::slice(phi, o.b3, 1, 1);
  auto h1 = ad::tanh(ad::matmul(inputs, w1) + ad::broadcast_rows(b1, batch));
  auto h2 = ad::tanh(ad::matmul(h1, w2) + ad::broadcast_rows(b2, batch));
  return ad::sigmoid(ad::matmul(h2, w3) + ad::broadcast_rows(b3, batch));
}

Eigen::VectorXd score_rows(const ad::ParamVector& phi, const Architecture& arch, const ad::Matrix& inputs) {
  if (phi.size() != arch.num_params()) throw ShapeError("score_rows: parameter vector does not match architecture");
  if (inputs.cols() != arch.input_dim()) throw ShapeError("score_rows: input width does not match architecture");
  const Offsets o = offsets(arch);
  const Eigen::Index in = arch.input_dim(), h = arch.hidden;
  const double* p = phi.values().data();
  const ad::Matrix w1 = Eigen::Map<const RowMajor>(p + o.w1, in, h);
  const Eigen::RowVectorXd b1 = Eigen::Map<const Eigen::RowVectorXd>(p + o.b1, h);
  const ad::Matrix w2 = Eigen::Map<const RowMajor>(p + o.w2, h, h);
  const Eigen::RowVectorXd b2 = Eigen::Map<const Eigen::RowVectorXd>(p + o.b2, h);
  const Eigen::VectorXd w3 = Eigen::Map<const Eigen::VectorXd>(p + o.w3, h);
  const double b3 = p[o.b3];

  ad::Matrix h1 = ((inputs * w1).rowwise() + b1).array().tanh().matrix();
  ad::Matrix h2 = ((h1 * w2).rowwise() + b2).array().tanh().matrix();
  Eigen::VectorXd z = (h2 * w3).array() + b3;
  return z.unaryExpr([](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

double score_step(const ad::ParamVector& phi, const Architecture& arch, std::span<const sim::Step> prefix) {
  const auto row = prefix_input(prefix);
  const ad::Matrix x = Eigen::Map<const Eigen::RowVectorXd>(row.data(), static_cast<Eigen::Index>(row.size()));
  return score_rows(phi, arch, x)(0);
}

std::vector<double> score_trajectory(const ad::ParamVector& phi, const Architecture& arch,
                                     const sim::Trajectory& trajectory) {
  const auto n = static_cast<Eigen::Index>(trajectory.steps.size());
  if (n == 0) throw Error("score_trajectory: empty trajectory");
  ad::Matrix x(n, arch.input_dim());
  const std::span<const sim::Step> steps(trajectory.steps);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = prefix_input(steps.first(static_cast<std::size_t>(i + 1)));
    x.row(i) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), static_cast<Eigen::Index>(row.size()));
  }
  const Eigen::VectorXd s = score_rows(phi, arch, x);
  return {s.data(), s.data() + s.size()};
}

}  // namespace dreamprm::prm
