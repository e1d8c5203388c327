#include "dreamprm/autodiff/tape.hpp"

#include <algorithm>
#include <cmath>

#include "dreamprm/error.hpp"

namespace dreamprm::ad {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_tape(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) throw Error(std::string(op) + ": operands live on different tapes");
}

void require_same_shape(Var a, Var b, const char* op) {
  require_same_tape(a, b, op);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " + shape_str(b.value()));
  }
}

Var unary(Op op, Var a, Matrix value, double p0 = 0.0, double p1 = 0.0, Eigen::Index i0 = 0) {
  Node n;
  n.op = op;
  n.p0 = p0;
  n.p1 = p1;
  n.i0 = i0;
  n.in = {static_cast<std::int64_t>(a.id()), -1};
  n.value = std::move(value);
  n.requires_grad = a.requires_grad();
  return a.tape().push(std::move(n));
}

Var binary(Op op, Var a, Var b, Matrix value) {
  Node n;
  n.op = op;
  n.in = {static_cast<std::int64_t>(a.id()), static_cast<std::int64_t>(b.id())};
  n.value = std::move(value);
  n.requires_grad = a.requires_grad() || b.requires_grad();
  return a.tape().push(std::move(n));
}

}  // namespace

const char* op_name(Op op) noexcept {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Affine: return "affine";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Sigmoid: return "sigmoid";
    case Op::Tanh: return "tanh";
    case Op::Log: return "log";
    case Op::Exp: return "exp";
    case Op::Sqrt: return "sqrt";
    case Op::Square: return "square";
    case Op::Clamp: return "clamp";
    case Op::SumAll: return "sum";
    case Op::MeanAll: return "mean";
    case Op::SumRows: return "sum_rows";
    case Op::SumCols: return "sum_cols";
    case Op::BroadcastScalar: return "broadcast";
    case Op::BroadcastRows: return "broadcast_rows";
    case Op::BroadcastCols: return "broadcast_cols";
    case Op::Slice: return "slice";
    case Op::Embed: return "embed";
    case Op::Reshape: return "reshape";
  }
  return "unknown";
}

const Matrix& Var::value() const { return tape_->node(id_).value; }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("Var::scalar on a " + shape_str(v) + " node");
  return v(0, 0);
}

bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

Var Tape::push(Node node) {
  if (!grad_mode_) node.requires_grad = false;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Matrix value, std::string name) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  n.requires_grad = true;
  Var v = push(std::move(n));
  leaf_names_.emplace_back(v.id(), name.empty() ? "leaf" + std::to_string(v.id()) : std::move(name));
  return v;
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  n.requires_grad = false;
  return push(std::move(n));
}

Var Tape::scalar_constant(double v) { return constant(Matrix::Constant(1, 1, v)); }

void Tape::truncate(std::size_t n) {
  if (n < nodes_.size()) nodes_.resize(n);
  std::erase_if(leaf_names_, [n](const auto& p) { return p.first >= n; });
}

const std::string& Tape::leaf_name(std::size_t id) const {
  for (const auto& [leaf_id, name] : leaf_names_) {
    if (leaf_id == id) return name;
  }
  throw Error("Tape::leaf_name: node " + std::to_string(id) + " is not a leaf");
}

std::vector<Var> Tape::differentiable_leaves() {
  std::vector<Var> out;
  for (const auto& [id, name] : leaf_names_) {
    if (nodes_[id].requires_grad) out.emplace_back(this, id);
  }
  return out;
}

std::vector<std::int64_t> Tape::run_backward(Var loss, std::span<const Var> wrt) {
  if (&loss.tape() != this) throw Error("Tape::grad: loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw ShapeError("Tape::grad: loss must be a scalar node, got " + shape_str(loss.value()));
  }
  const std::size_t n = loss.id() + 1;

  // Only nodes downstream of a requested input can carry a useful adjoint.
  std::vector<char> relevant(n, 0);
  for (const Var& w : wrt) {
    if (&w.tape() != this) throw Error("Tape::grad: wrt variable belongs to another tape");
    if (w.id() < n) relevant[w.id()] = 1;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (relevant[i]) continue;
    const Node& nd = nodes_[i];
    if (!nd.requires_grad) continue;
    for (auto in : nd.in) {
      if (in >= 0 && relevant[static_cast<std::size_t>(in)]) {
        relevant[i] = 1;
        break;
      }
    }
  }

  std::vector<std::int64_t> adj(n, -1);
  if (!relevant[loss.id()]) return adj;
  adj[loss.id()] = static_cast<std::int64_t>(scalar_constant(1.0).id());

  auto accumulate = [&](std::int64_t target, Var contrib, Op op, std::size_t at) {
    if (!contrib.value().allFinite()) {
      throw NumericalError(op_name(op), std::string("non-finite gradient in backward of ") + op_name(op) +
                                            " (node " + std::to_string(at) + ")");
    }
    auto& slot = adj[static_cast<std::size_t>(target)];
    slot = slot < 0 ? static_cast<std::int64_t>(contrib.id())
                    : static_cast<std::int64_t>((Var(this, static_cast<std::size_t>(slot)) + contrib).id());
  };

  for (std::size_t idx = n; idx-- > 0;) {
    if (adj[idx] < 0 || !relevant[idx]) continue;
    // Copied out: the switch below appends nodes.
    const Op op = nodes_[idx].op;
    const auto in = nodes_[idx].in;
    const double p0 = nodes_[idx].p0, p1 = nodes_[idx].p1;
    const Eigen::Index i0 = nodes_[idx].i0;
    if (op == Op::Leaf || op == Op::Constant) continue;

    Var g(this, static_cast<std::size_t>(adj[idx]));
    Var y(this, idx);
    Var a = in[0] >= 0 ? Var(this, static_cast<std::size_t>(in[0])) : Var();
    Var b = in[1] >= 0 ? Var(this, static_cast<std::size_t>(in[1])) : Var();
    const bool da = a.valid() && relevant[a.id()];
    const bool db = b.valid() && relevant[b.id()];
    if (!da && !db) continue;

    switch (op) {
      case Op::Add:
        if (da) accumulate(in[0], g, op, idx);
        if (db) accumulate(in[1], g, op, idx);
        break;
      case Op::Sub:
        if (da) accumulate(in[0], g, op, idx);
        if (db) accumulate(in[1], -g, op, idx);
        break;
      case Op::Mul:
        if (da) accumulate(in[0], g * b, op, idx);
        if (db) accumulate(in[1], g * a, op, idx);
        break;
      case Op::Div:
        if (da) accumulate(in[0], g / b, op, idx);
        if (db) accumulate(in[1], -((g * y) / b), op, idx);
        break;
      case Op::Affine:
        accumulate(in[0], affine(g, p0, 0.0), op, idx);
        break;
      case Op::MatMul:
        if (da) accumulate(in[0], matmul(g, transpose(b)), op, idx);
        if (db) accumulate(in[1], matmul(transpose(a), g), op, idx);
        break;
      case Op::Transpose:
        accumulate(in[0], transpose(g), op, idx);
        break;
      case Op::Sigmoid:
        accumulate(in[0], g * (y * affine(y, -1.0, 1.0)), op, idx);
        break;
      case Op::Tanh:
        accumulate(in[0], g * affine(square(y), -1.0, 1.0), op, idx);
        break;
      case Op::Log:
        accumulate(in[0], g / a, op, idx);
        break;
      case Op::Exp:
        accumulate(in[0], g * y, op, idx);
        break;
      case Op::Sqrt:
        if (y.value().minCoeff() > 0.0) {
          accumulate(in[0], g / affine(y, 2.0, 0.0), op, idx);
        } else {
          // Derivative at 0 taken as 0; this branch is not twice differentiable.
          Matrix inv = y.value().unaryExpr([](double v) { return v > 0.0 ? 0.5 / v : 0.0; });
          accumulate(in[0], g * constant(std::move(inv)), op, idx);
        }
        break;
      case Op::Square:
        accumulate(in[0], g * affine(a, 2.0, 0.0), op, idx);
        break;
      case Op::Clamp: {
        Matrix mask = a.value().unaryExpr([p0, p1](double v) { return (v >= p0 && v <= p1) ? 1.0 : 0.0; });
        accumulate(in[0], g * constant(std::move(mask)), op, idx);
        break;
      }
      case Op::SumAll:
        accumulate(in[0], broadcast(g, a.rows(), a.cols()), op, idx);
        break;
      case Op::MeanAll:
        accumulate(in[0], affine(broadcast(g, a.rows(), a.cols()), 1.0 / static_cast<double>(a.value().size()), 0.0),
                   op, idx);
        break;
      case Op::SumRows:
        accumulate(in[0], broadcast_rows(g, a.rows()), op, idx);
        break;
      case Op::SumCols:
        accumulate(in[0], broadcast_cols(g, a.cols()), op, idx);
        break;
      case Op::BroadcastScalar:
        accumulate(in[0], sum(g), op, idx);
        break;
      case Op::BroadcastRows:
        accumulate(in[0], sum_rows(g), op, idx);
        break;
      case Op::BroadcastCols:
        accumulate(in[0], sum_cols(g), op, idx);
        break;
      case Op::Slice:
        accumulate(in[0], embed(g, i0, a.rows()), op, idx);
        break;
      case Op::Embed:
        accumulate(in[0], slice(g, i0, a.rows(), a.cols()), op, idx);
        break;
      case Op::Reshape:
        accumulate(in[0], reshape(g, a.rows(), a.cols()), op, idx);
        break;
      case Op::Leaf:
      case Op::Constant:
        break;
    }
  }
  return adj;
}

std::vector<Var> Tape::grad(Var loss, std::span<const Var> wrt, bool create_graph) {
  const bool saved = grad_mode_;
  grad_mode_ = create_graph;
  std::vector<std::int64_t> adj;
  try {
    adj = run_backward(loss, wrt);
  } catch (...) {
    grad_mode_ = saved;
    throw;
  }
  grad_mode_ = saved;

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.id() < adj.size() && adj[w.id()] >= 0) {
      out.emplace_back(this, static_cast<std::size_t>(adj[w.id()]));
    } else {
      out.push_back(constant(Matrix::Zero(w.rows(), w.cols())));
    }
  }
  return out;
}

std::vector<Matrix> Tape::gradients(Var loss, std::span<const Var> wrt) {
  const std::size_t mark = size();
  std::vector<Matrix> out;
  try {
    auto vars = grad(loss, wrt, /*create_graph=*/false);
    out.reserve(vars.size());
    for (const Var& v : vars) out.push_back(v.value());
  } catch (...) {
    truncate(mark);
    throw;
  }
  truncate(mark);
  return out;
}

ParamVector backward_grad(Tape& tape, Var loss) {
  auto leaves = tape.differentiable_leaves();
  auto grads = tape.gradients(loss, leaves);
  std::vector<double> flat;
  std::vector<Block> blocks;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const Matrix& g = grads[i];
    RowMajor rm = g;
    flat.insert(flat.end(), rm.data(), rm.data() + rm.size());
    blocks.push_back({tape.leaf_name(leaves[i].id()), g.rows(), g.cols()});
  }
  return ParamVector(std::move(flat), std::move(blocks));
}

Var operator+(Var a, Var b) {
  require_same_shape(a, b, "add");
  return binary(Op::Add, a, b, a.value() + b.value());
}

Var operator-(Var a, Var b) {
  require_same_shape(a, b, "sub");
  return binary(Op::Sub, a, b, a.value() - b.value());
}

Var operator*(Var a, Var b) {
  require_same_shape(a, b, "mul");
  return binary(Op::Mul, a, b, a.value().cwiseProduct(b.value()));
}

Var operator/(Var a, Var b) {
  require_same_shape(a, b, "div");
  return binary(Op::Div, a, b, a.value().cwiseQuotient(b.value()));
}

Var affine(Var a, double scale, double shift) {
  return unary(Op::Affine, a, (a.value() * scale).array() + shift, scale, shift);
}

Var operator-(Var a) { return affine(a, -1.0, 0.0); }
Var operator*(double s, Var a) { return affine(a, s, 0.0); }
Var operator*(Var a, double s) { return affine(a, s, 0.0); }
Var operator+(Var a, double s) { return affine(a, 1.0, s); }
Var operator+(double s, Var a) { return affine(a, 1.0, s); }
Var operator-(Var a, double s) { return affine(a, 1.0, -s); }
Var operator-(double s, Var a) { return affine(a, -1.0, s); }

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.value()) + " * " + shape_str(b.value()));
  }
  return binary(Op::MatMul, a, b, a.value() * b.value());
}

Var transpose(Var a) { return unary(Op::Transpose, a, a.value().transpose()); }

Var sigmoid(Var a) {
  return unary(Op::Sigmoid, a, a.value().unaryExpr([](double v) {
    // Split form avoids overflow of exp for large |v|.
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  }));
}

Var tanh(Var a) { return unary(Op::Tanh, a, a.value().array().tanh().matrix()); }
Var log(Var a) { return unary(Op::Log, a, a.value().array().log().matrix()); }
Var exp(Var a) { return unary(Op::Exp, a, a.value().array().exp().matrix()); }
Var sqrt(Var a) { return unary(Op::Sqrt, a, a.value().array().sqrt().matrix()); }
Var square(Var a) { return unary(Op::Square, a, a.value().array().square().matrix()); }

Var clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw Error("clamp: lo > hi");
  return unary(Op::Clamp, a, a.value().cwiseMax(lo).cwiseMin(hi), lo, hi);
}

Var sum(Var a) { return unary(Op::SumAll, a, Matrix::Constant(1, 1, a.value().sum())); }

Var mean(Var a) {
  if (a.value().size() == 0) throw ShapeError("mean of an empty node");
  return unary(Op::MeanAll, a, Matrix::Constant(1, 1, a.value().mean()));
}

Var sum_rows(Var a) { return unary(Op::SumRows, a, a.value().colwise().sum()); }
Var sum_cols(Var a) { return unary(Op::SumCols, a, a.value().rowwise().sum()); }

Var broadcast(Var scalar, Eigen::Index rows, Eigen::Index cols) {
  if (scalar.value().size() != 1) throw ShapeError("broadcast: source must be 1x1");
  return unary(Op::BroadcastScalar, scalar, Matrix::Constant(rows, cols, scalar.value()(0, 0)));
}

Var broadcast_rows(Var row, Eigen::Index rows) {
  if (row.rows() != 1) throw ShapeError("broadcast_rows: source must have one row, got " + shape_str(row.value()));
  return unary(Op::BroadcastRows, row, row.value().replicate(rows, 1));
}

Var broadcast_cols(Var col, Eigen::Index cols) {
  if (col.cols() != 1) throw ShapeError("broadcast_cols: source must have one column, got " + shape_str(col.value()));
  return unary(Op::BroadcastCols, col, col.value().replicate(1, cols));
}

Var slice(Var flat, Eigen::Index offset, Eigen::Index rows, Eigen::Index cols) {
  if (flat.cols() != 1) throw ShapeError("slice: source must be a column vector");
  if (offset < 0 || offset + rows * cols > flat.rows()) throw ShapeError("slice: window out of range");
  Matrix v = Eigen::Map<const RowMajor>(flat.value().data() + offset, rows, cols);
  return unary(Op::Slice, flat, std::move(v), 0.0, 0.0, offset);
}

Var embed(Var block, Eigen::Index offset, Eigen::Index total) {
  const Eigen::Index n = block.value().size();
  if (offset < 0 || offset + n > total) throw ShapeError("embed: window out of range");
  Matrix v = Matrix::Zero(total, 1);
  RowMajor rm = block.value();
  std::copy(rm.data(), rm.data() + n, v.data() + offset);
  return unary(Op::Embed, block, std::move(v), 0.0, 0.0, offset);
}

Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) throw ShapeError("reshape: element count mismatch");
  Matrix v = a.value().reshaped(rows, cols);
  return unary(Op::Reshape, a, std::move(v));
}

Var detach(Var a) { return a.tape().constant(a.value()); }

}  // namespace dreamprm::ad
