#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dreamprm::ad {

using Matrix = Eigen::MatrixXd;

/// Named logical sub-block of a flat parameter vector.
struct Block {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 1;

  Eigen::Index size() const noexcept { return rows * cols; }
  bool operator==(const Block&) const = default;
};

/// Flat vector of 64-bit reals with an optional block layout.
///
/// Blocks are stored back to back in declaration order; each block is laid
/// out row-major so that `block_matrix` and the tape's slice op agree.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::vector<double> values);
  ParamVector(std::vector<double> values, std::vector<Block> blocks);

  static ParamVector zeros(std::vector<Block> blocks);
  static ParamVector filled(std::size_t n, double value);

  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  const std::vector<double>& raw() const noexcept { return values_; }

  const std::vector<Block>& blocks() const noexcept { return blocks_; }
  /// Offset of the named block; throws if absent.
  std::size_t offset_of(const std::string& name) const;
  const Block& block(const std::string& name) const;
  /// Copy of the named block as a rows x cols matrix.
  Matrix block_matrix(const std::string& name) const;

  Eigen::Map<const Eigen::VectorXd> as_eigen() const {
    return {values_.data(), static_cast<Eigen::Index>(values_.size())};
  }
  Eigen::Map<Eigen::VectorXd> as_eigen() {
    return {values_.data(), static_cast<Eigen::Index>(values_.size())};
  }

  bool all_finite() const noexcept;
  /// Same length and same block layout.
  bool same_layout(const ParamVector& other) const noexcept;

  bool operator==(const ParamVector&) const = default;

 private:
  void check_layout() const;

  std::vector<double> values_;
  std::vector<Block> blocks_;
};

/// Throws ShapeError unless both vectors have equal length.
void require_same_size(const ParamVector& a, const ParamVector& b, const char* what);

}  // namespace dreamprm::ad
