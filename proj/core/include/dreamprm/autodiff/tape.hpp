#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "dreamprm/autodiff/param_vector.hpp"

namespace dreamprm::ad {

enum class Op : std::uint8_t {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  Affine,  // scale * x + shift
  MatMul,
  Transpose,
  Sigmoid,
  Tanh,
  Log,
  Exp,
  Sqrt,
  Square,
  Clamp,
  SumAll,
  MeanAll,
  SumRows,  // r x c -> 1 x c
  SumCols,  // r x c -> r x 1
  BroadcastScalar,
  BroadcastRows,  // 1 x c -> r x c
  BroadcastCols,  // r x 1 -> r x c
  Slice,          // n x 1 -> rows x cols (row-major window at offset)
  Embed,          // rows x cols -> n x 1 (zero padded; inverse of Slice)
  Reshape,        // column-major reshape
};

const char* op_name(Op op) noexcept;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the node exists.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  /// Value of a 1x1 node.
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

struct Node {
  Op op = Op::Constant;
  std::array<std::int64_t, 2> in{-1, -1};
  Matrix value;
  bool requires_grad = false;
  double p0 = 0.0;  // Affine scale / Clamp lo
  double p1 = 0.0;  // Affine shift / Clamp hi
  Eigen::Index i0 = 0, i1 = 0, i2 = 0;
};

/// Eager reverse-mode tape over dense matrices.
///
/// Every op evaluates immediately and appends one node. `grad` expresses each
/// vector-Jacobian product with tape ops, so gradients requested with
/// `create_graph` are themselves differentiable (used for hypergradients
/// through unrolled optimizer steps). Not thread-safe.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value, std::string name = {});
  Var constant(Matrix value);
  Var scalar_constant(double v);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  /// Drops every node with id >= n.
  void truncate(std::size_t n);
  void clear() { truncate(0); }

  /// dloss/dwrt for each entry of `wrt`, as nodes on this tape. With
  /// `create_graph` the results can be differentiated again.
  std::vector<Var> grad(Var loss, std::span<const Var> wrt, bool create_graph = true);

  /// Numeric gradients; the tape is restored to its previous length.
  std::vector<Matrix> gradients(Var loss, std::span<const Var> wrt);

  /// Every differentiable leaf, in creation order.
  std::vector<Var> differentiable_leaves();
  const std::string& leaf_name(std::size_t id) const;

  // Used by the op free functions below.
  Var push(Node node);

 private:
  std::vector<std::int64_t> run_backward(Var loss, std::span<const Var> wrt);

  std::deque<Node> nodes_;
  std::vector<std::pair<std::size_t, std::string>> leaf_names_;
  bool grad_mode_ = true;
};

/// Gradient of a scalar loss with respect to every differentiable leaf,
/// concatenated in leaf creation order (one block per leaf). Leaves that do
/// not reach the loss get zeros.
ParamVector backward_grad(Tape& tape, Var loss);

// Elementwise ops require identical shapes; use the broadcast ops explicitly.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator*(double s, Var a);
Var operator*(Var a, double s);
Var operator+(Var a, double s);
Var operator+(double s, Var a);
Var operator-(Var a, double s);
Var operator-(double s, Var a);

Var affine(Var a, double scale, double shift);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var log(Var a);
Var exp(Var a);
Var sqrt(Var a);
Var square(Var a);
Var clamp(Var a, double lo, double hi);
Var sum(Var a);
Var mean(Var a);
Var sum_rows(Var a);
Var sum_cols(Var a);
Var broadcast(Var scalar, Eigen::Index rows, Eigen::Index cols);
Var broadcast_rows(Var row, Eigen::Index rows);
Var broadcast_cols(Var col, Eigen::Index cols);
Var slice(Var flat, Eigen::Index offset, Eigen::Index rows, Eigen::Index cols);
Var embed(Var block, Eigen::Index offset, Eigen::Index total);
Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);
/// Same value, no gradient path.
Var detach(Var a);

}  // namespace dreamprm::ad
