#include "dreamprm/autodiff/param_vector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dreamprm/error.hpp"

namespace dreamprm::ad {

ParamVector::ParamVector(std::vector<double> values) : values_(std::move(values)) {
  blocks_.push_back({"values", static_cast<Eigen::Index>(values_.size()), 1});
}

ParamVector::ParamVector(std::vector<double> values, std::vector<Block> blocks)
    : values_(std::move(values)), blocks_(std::move(blocks)) {
  check_layout();
}

ParamVector ParamVector::zeros(std::vector<Block> blocks) {
  std::size_t n = 0;
  for (const auto& b : blocks) n += static_cast<std::size_t>(b.size());
  return ParamVector(std::vector<double>(n, 0.0), std::move(blocks));
}

ParamVector ParamVector::filled(std::size_t n, double value) {
  return ParamVector(std::vector<double>(n, value));
}

void ParamVector::check_layout() const {
  std::size_t total = 0;
  for (const auto& b : blocks_) {
    if (b.rows < 0 || b.cols < 0) throw ShapeError("ParamVector: negative block dimension in '" + b.name + "'");
    total += static_cast<std::size_t>(b.size());
  }
  if (total != values_.size()) {
    throw ShapeError("ParamVector: blocks describe " + std::to_string(total) + " entries but vector holds " +
                     std::to_string(values_.size()));
  }
}

std::size_t ParamVector::offset_of(const std::string& name) const {
  std::size_t off = 0;
  for (const auto& b : blocks_) {
    if (b.name == name) return off;
    off += static_cast<std::size_t>(b.size());
  }
  throw ShapeError("ParamVector: no block named '" + name + "'");
}

const Block& ParamVector::block(const std::string& name) const {
  auto it = std::find_if(blocks_.begin(), blocks_.end(), [&](const Block& b) { return b.name == name; });
  if (it == blocks_.end()) throw ShapeError("ParamVector: no block named '" + name + "'");
  return *it;
}

Matrix ParamVector::block_matrix(const std::string& name) const {
  const Block& b = block(name);
  const std::size_t off = offset_of(name);
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  return Eigen::Map<const RowMajor>(values_.data() + off, b.rows, b.cols);
}

bool ParamVector::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

bool ParamVector::same_layout(const ParamVector& other) const noexcept {
  return values_.size() == other.values_.size() && blocks_ == other.blocks_;
}

void require_same_size(const ParamVector& a, const ParamVector& b, const char* what) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(what) + ": length mismatch (" + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + ")");
  }
}

}  // namespace dreamprm::ad
