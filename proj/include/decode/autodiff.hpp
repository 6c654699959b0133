#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation applied to Var handles in creation order;
// Tape::backward walks the nodes once in reverse. Values are Eigen matrices so
// one tape node covers a whole block of rows (one row per propagated event),
// which keeps the per-node bookkeeping small relative to the arithmetic.

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace decode::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct Parameter {
  std::string name;
  Matrix value;
};

// Ordered, named parameter tensors. Slots are stable once created.
class ParameterSet {
 public:
  std::size_t add(std::string name, Matrix value);

  [[nodiscard]] std::size_t size() const { return params_.size(); }
  [[nodiscard]] const Parameter& operator[](std::size_t slot) const { return params_.at(slot); }
  [[nodiscard]] Parameter& operator[](std::size_t slot) { return params_.at(slot); }
  [[nodiscard]] std::size_t find(const std::string& name) const;
  [[nodiscard]] std::size_t num_scalars() const;

  [[nodiscard]] auto begin() const { return params_.begin(); }
  [[nodiscard]] auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
};

// One gradient matrix per parameter slot, shaped like the parameter.
using Gradients = std::vector<Matrix>;

[[nodiscard]] Gradients zero_gradients(const ParameterSet& params);
void add_into(Gradients& dst, const Gradients& src);
[[nodiscard]] double global_norm(const Gradients& g);

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::int32_t id) : tape_(tape), id_(id) {}

  [[nodiscard]] const Matrix& value() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
  [[nodiscard]] double scalar() const;
  [[nodiscard]] Tape* tape() const { return tape_; }
  [[nodiscard]] std::int32_t id() const { return id_; }
  [[nodiscard]] bool valid() const { return tape_ != nullptr && id_ >= 0; }

 private:
  Tape* tape_{nullptr};
  std::int32_t id_{-1};
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Differentiable leaf that is not a model parameter (tests, sensitivities).
  Var variable(Matrix value);
  // Leaf bound to a parameter slot; repeated calls return the same node.
  Var parameter(const ParameterSet& params, std::size_t slot);

  // Appends a node. `backward` runs only when some parent requires a gradient.
  Var push(Matrix value, bool requires_grad, Backward backward);

  void backward(Var loss, double seed = 1.0);

  [[nodiscard]] const Matrix& value(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  [[nodiscard]] bool requires_grad(Var v) const;
  // Gradient of the last backward pass; zeros when unreachable.
  [[nodiscard]] Matrix grad(Var v) const;
  // Adds parameter gradients of the last backward pass into `dst`.
  void accumulate_parameter_gradients(Gradients& dst) const;

  void accumulate(std::int32_t id, const Matrix& g);
  template <class Expr>
  void accumulate_expr(std::int32_t id, const Expr& g) {
    auto& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0) {
      node.grad = g;
    } else {
      node.grad += g;
    }
  }

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad{false};
    Backward backward;
  };
  std::vector<Node> nodes_;
  // (slot, node id) pairs for parameter leaves.
  std::vector<std::pair<std::size_t, std::int32_t>> param_nodes_;
  bool backward_done_{false};
};

// ---- operations -----------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double c);
Var cwise_mul(Var a, Var b);
// a (n x m) + bias (1 x m) broadcast over rows.
Var add_row_vector(Var a, Var bias);
// Row r multiplied by s(r).
Var scale_rows(Var a, const Vector& s);
Var add_constant(Var a, const Matrix& c);

Var tanh(Var a);
Var softplus(Var a);
Var exp(Var a);
Var log(Var a);
// max(log a, floor); gradient is zero where the floor is active.
Var log_clamped(Var a, double floor);
Var log_softmax_rows(Var a);
Var softmax_rows(Var a);

Var sum(Var a);
Var row_sums(Var a);
Var hcat(Var a, Var b);
Var vcat(std::span<const Var> parts);
Var top_rows(Var a, Eigen::Index n);
Var middle_cols(Var a, Eigen::Index start, Eigen::Index n);
Var gather_rows(Var a, std::span<const int> index);
// out(index[r], :) += a(r, :), with `out_rows` output rows.
Var scatter_add_rows(Var a, std::span<const int> index, Eigen::Index out_rows);
// out(r) = a(r, index[r]) as an n x 1 column.
Var pick(Var a, std::span<const int> index);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }

// Numerically safe softplus and its derivative on plain values.
[[nodiscard]] double softplus(double x);
[[nodiscard]] double sigmoid(double x);
[[nodiscard]] Matrix softplus(const Matrix& x);
[[nodiscard]] Matrix sigmoid(const Matrix& x);
[[nodiscard]] Matrix tanh(const Matrix& x);

}  // namespace decode::ad
