#include "decode/autodiff.hpp"

#include <cmath>

namespace decode::ad {

// ---- parameters -------------------------------------------------------------

std::size_t ParameterSet::add(std::string name, Matrix value) {
  for (const auto& p : params_) {
    if (p.name == name) throw AutodiffError("duplicate parameter name " + name);
  }
  params_.push_back(Parameter{std::move(name), std::move(value)});
  return params_.size() - 1;
}

std::size_t ParameterSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw AutodiffError("unknown parameter " + name);
}

std::size_t ParameterSet::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

Gradients zero_gradients(const ParameterSet& params) {
  Gradients g;
  g.reserve(params.size());
  for (const auto& p : params) g.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  return g;
}

void add_into(Gradients& dst, const Gradients& src) {
  if (dst.size() != src.size()) throw AutodiffError("gradient size mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

double global_norm(const Gradients& g) {
  double s = 0.0;
  for (const auto& m : g) s += m.squaredNorm();
  return std::sqrt(s);
}

// ---- tape -------------------------------------------------------------------

const Matrix& Var::value() const {
  if (!valid()) throw AutodiffError("use of an unbound Var");
  return tape_->value(id_);
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw AutodiffError("scalar() on a non-scalar Var");
  return v(0, 0);
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::variable(Matrix value) { return push(std::move(value), true, nullptr); }

Var Tape::parameter(const ParameterSet& params, std::size_t slot) {
  for (const auto& [s, id] : param_nodes_) {
    if (s == slot) return Var(this, id);
  }
  Var v = push(params[slot].value, true, nullptr);
  param_nodes_.emplace_back(slot, v.id());
  return v;
}

Var Tape::push(Matrix value, bool requires_grad, Backward backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  backward_done_ = false;
  return Var(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

bool Tape::requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].requires_grad; }

void Tape::accumulate(std::int32_t id, const Matrix& g) { accumulate_expr(id, g); }

void Tape::backward(Var loss, double seed) {
  if (!loss.valid() || loss.tape() != this) throw AutodiffError("backward on a Var from another tape");
  if (loss.value().size() != 1) throw AutodiffError("backward needs a scalar loss");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  const auto last = static_cast<std::size_t>(loss.id());
  if (!nodes_[last].requires_grad) {
    backward_done_ = true;
    return;
  }
  nodes_[last].grad = Matrix::Constant(1, 1, seed);
  for (std::size_t i = last + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    // The closure may touch other nodes; keep a local copy of the gradient.
    Matrix g = std::move(n.grad);
    n.backward(*this, g);
    n.grad = std::move(g);
  }
  backward_done_ = true;
}

Matrix Tape::grad(Var v) const {
  if (!backward_done_) throw AutodiffError("gradient requested before backward");
  const Node& n = nodes_[static_cast<std::size_t>(v.id())];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate_parameter_gradients(Gradients& dst) const {
  if (!backward_done_) throw AutodiffError("gradient requested before backward");
  for (const auto& [slot, id] : param_nodes_) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() != 0) dst.at(slot) += n.grad;
  }
}

void Tape::clear() {
  nodes_.clear();
  param_nodes_.clear();
  backward_done_ = false;
}

// ---- scalar helpers ---------------------------------------------------------

double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Vectorized forms; max(x, 0) + log1p(exp(-|x|)) is accurate at both tails.
Matrix softplus(const Matrix& x) {
  return (x.array().max(0.0) + (-x.array().abs()).exp().log1p()).matrix();
}

Matrix sigmoid(const Matrix& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

Matrix tanh(const Matrix& x) {
  // (e - 1) / (e + 1) cancels near zero, where the odd series takes over.
  const Eigen::ArrayXXd a = x.array().min(40.0).max(-40.0);
  const Eigen::ArrayXXd e = (2.0 * a).exp();
  const Eigen::ArrayXXd a2 = a * a;
  const Eigen::ArrayXXd series =
      a * (1.0 + a2 * (-1.0 / 3.0 + a2 * (2.0 / 15.0 + a2 * (-17.0 / 315.0 + a2 * (62.0 / 2835.0)))));
  return (a.abs() < 0.05).select(series, (e - 1.0) / (e + 1.0)).matrix();
}

// ---- operations -------------------------------------------------------------

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw AutodiffError("operation on an unbound Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  if (&tape_of(b) != &t) throw AutodiffError("operands live on different tapes");
  return t;
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw AutodiffError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()));
  }
}

std::int32_t next_id(const Tape& t) { return static_cast<std::int32_t>(t.size()); }

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) {
    throw AutodiffError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                        std::to_string(b.rows()) + " differ");
  }
  Matrix v;
  v.noalias() = a.value() * b.value();
  const auto ia = a.id(), ib = b.id();
  return t.push(std::move(v), t.requires_grad(a) || t.requires_grad(b), [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate_expr(ia, g * tp.value(ib).transpose());
    tp.accumulate_expr(ib, tp.value(ia).transpose() * g);
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  check_same_shape(a.value(), b.value(), "add");
  const auto ia = a.id(), ib = b.id();
  return t.push(a.value() + b.value(), t.requires_grad(a) || t.requires_grad(b),
                [ia, ib](Tape& tp, const Matrix& g) {
                  tp.accumulate_expr(ia, g);
                  tp.accumulate_expr(ib, g);
                });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  check_same_shape(a.value(), b.value(), "sub");
  const auto ia = a.id(), ib = b.id();
  return t.push(a.value() - b.value(), t.requires_grad(a) || t.requires_grad(b),
                [ia, ib](Tape& tp, const Matrix& g) {
                  tp.accumulate_expr(ia, g);
                  tp.accumulate_expr(ib, -g);
                });
}

Var scale(Var a, double c) {
  Tape& t = tape_of(a);
  const auto ia = a.id();
  return t.push(c * a.value(), t.requires_grad(a),
                [ia, c](Tape& tp, const Matrix& g) { tp.accumulate_expr(ia, c * g); });
}

Var cwise_mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  check_same_shape(a.value(), b.value(), "cwise_mul");
  const auto ia = a.id(), ib = b.id();
  return t.push(a.value().cwiseProduct(b.value()), t.requires_grad(a) || t.requires_grad(b),
                [ia, ib](Tape& tp, const Matrix& g) {
                  tp.accumulate_expr(ia, g.cwiseProduct(tp.value(ib)));
                  tp.accumulate_expr(ib, g.cwiseProduct(tp.value(ia)));
                });
}

Var add_row_vector(Var a, Var bias) {
  Tape& t = tape_of(a, bias);
  if (bias.rows() != 1 || bias.cols() != a.cols()) throw AutodiffError("add_row_vector: bias must be 1 x cols");
  Matrix v = a.value();
  v.rowwise() += bias.value().row(0);
  const auto ia = a.id(), ib = bias.id();
  return t.push(std::move(v), t.requires_grad(a) || t.requires_grad(bias), [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate_expr(ia, g);
    tp.accumulate_expr(ib, g.colwise().sum());
  });
}

Var scale_rows(Var a, const Vector& s) {
  Tape& t = tape_of(a);
  if (s.size() != a.rows()) throw AutodiffError("scale_rows: one factor per row required");
  const auto ia = a.id();
  return t.push(s.asDiagonal() * a.value(), t.requires_grad(a),
                [ia, s](Tape& tp, const Matrix& g) { tp.accumulate_expr(ia, s.asDiagonal() * g); });
}

Var add_constant(Var a, const Matrix& c) {
  Tape& t = tape_of(a);
  check_same_shape(a.value(), c, "add_constant");
  const auto ia = a.id();
  return t.push(a.value() + c, t.requires_grad(a), [ia](Tape& tp, const Matrix& g) { tp.accumulate_expr(ia, g); });
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  const auto ia = a.id();
  const auto out = next_id(t);
  return t.push(tanh(a.value()), t.requires_grad(a), [ia, out](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(out);
    tp.accumulate_expr(ia, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

Var softplus(Var a) {
  Tape& t = tape_of(a);
  const auto ia = a.id();
  return t.push(softplus(a.value()), t.requires_grad(a), [ia](Tape& tp, const Matrix& g) {
    tp.accumulate_expr(ia, g.cwiseProduct(sigmoid(tp.value(ia))));
  });
}

Var exp(Var a) {
  Tape& t = tape_of(a);
  const auto ia = a.id();
  const auto out = next_id(t);
  return t.push(a.value().array().exp().matrix(), t.requires_grad(a), [ia, out](Tape& tp, const Matrix& g) {
    tp.accumulate_expr(ia, g.cwiseProduct(tp.value(out)));
  });
}

Var log(Var a) {
  Tape& t = tape_of(a);
  const auto ia = a.id();
  return t.push(a.value().array().log().matrix(), t.requires_grad(a), [ia](Tape& tp, const Matrix& g) {
    tp.accumulate_expr(ia, (g.array() / tp.value(ia).array()).matrix());
  });
}

Var log_clamped(Var a, double floor) {
  Tape& t = tape_of(a);
  const auto ia = a.id();
  Matrix v = a.value().unaryExpr([floor](double x) {
    if (!(x > 0.0)) return floor;
    return std::max(std::log(x), floor);
  });
  return t.push(std::move(v), t.requires_grad(a), [ia, floor](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(ia);
    Matrix d(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double xi = x(i, j);
        d(i, j) = (xi > 0.0 && std::log(xi) > floor) ? g(i, j) / xi : 0.0;
      }
    }
    tp.accumulate_expr(ia, d);
  });
}

namespace {

Matrix log_softmax_values(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    const double lse = m + std::log((x.row(r).array() - m).exp().sum());
    y.row(r) = x.row(r).array() - lse;
  }
  return y;
}

}  // namespace

Var log_softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const auto ia = a.id();
  const auto out = next_id(t);
  return t.push(log_softmax_values(a.value()), t.requires_grad(a), [ia, out](Tape& tp, const Matrix& g) {
    const Matrix p = tp.value(out).array().exp().matrix();
    const Vector gs = g.rowwise().sum();
    tp.accumulate_expr(ia, g - (gs.asDiagonal() * p));
  });
}

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const auto ia = a.id();
  const auto out = next_id(t);
  return t.push(log_softmax_values(a.value()).array().exp().matrix(), t.requires_grad(a),
                [ia, out](Tape& tp, const Matrix& g) {
                  const Matrix& y = tp.value(out);
                  const Vector dot = g.cwiseProduct(y).rowwise().sum();
                  tp.accumulate_expr(ia, y.cwiseProduct(g - dot.replicate(1, g.cols())));
                });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  const auto ia = a.id();
  const auto r = a.rows(), c = a.cols();
  return t.push(Matrix::Constant(1, 1, a.value().sum()), t.requires_grad(a),
                [ia, r, c](Tape& tp, const Matrix& g) { tp.accumulate_expr(ia, Matrix::Constant(r, c, g(0, 0))); });
}

Var row_sums(Var a) {
  Tape& t = tape_of(a);
  const auto ia = a.id();
  const auto c = a.cols();
  return t.push(a.value().rowwise().sum(), t.requires_grad(a),
                [ia, c](Tape& tp, const Matrix& g) { tp.accumulate_expr(ia, g.replicate(1, c)); });
}

Var hcat(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (a.rows() != b.rows()) throw AutodiffError("hcat: row counts differ");
  Matrix v(a.rows(), a.cols() + b.cols());
  v << a.value(), b.value();
  const auto ia = a.id(), ib = b.id();
  const auto ca = a.cols(), cb = b.cols();
  return t.push(std::move(v), t.requires_grad(a) || t.requires_grad(b),
                [ia, ib, ca, cb](Tape& tp, const Matrix& g) {
                  tp.accumulate_expr(ia, g.leftCols(ca));
                  tp.accumulate_expr(ib, g.rightCols(cb));
                });
}

Var vcat(std::span<const Var> parts) {
  if (parts.empty()) throw AutodiffError("vcat of nothing");
  Tape& t = tape_of(parts.front());
  const auto cols = parts.front().cols();
  Eigen::Index rows = 0;
  bool rg = false;
  std::vector<std::int32_t> ids;
  std::vector<Eigen::Index> heights;
  ids.reserve(parts.size());
  heights.reserve(parts.size());
  for (const Var& p : parts) {
    if (&tape_of(p) != &t) throw AutodiffError("vcat: operands live on different tapes");
    if (p.cols() != cols) throw AutodiffError("vcat: column counts differ");
    rows += p.rows();
    rg = rg || t.requires_grad(p);
    ids.push_back(p.id());
    heights.push_back(p.rows());
  }
  Matrix v(rows, cols);
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return t.push(std::move(v), rg, [ids = std::move(ids), heights = std::move(heights)](Tape& tp, const Matrix& g) {
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      tp.accumulate_expr(ids[i], g.middleRows(row, heights[i]));
      row += heights[i];
    }
  });
}

Var top_rows(Var a, Eigen::Index n) {
  Tape& t = tape_of(a);
  if (n < 0 || n > a.rows()) throw AutodiffError("top_rows: out of range");
  if (n == a.rows()) return a;
  const auto ia = a.id();
  const auto rows = a.rows(), cols = a.cols();
  return t.push(a.value().topRows(n), t.requires_grad(a), [ia, n, rows, cols](Tape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(rows, cols);
    full.topRows(n) = g;
    tp.accumulate_expr(ia, full);
  });
}

Var middle_cols(Var a, Eigen::Index start, Eigen::Index n) {
  Tape& t = tape_of(a);
  if (start < 0 || n < 0 || start + n > a.cols()) throw AutodiffError("middle_cols: out of range");
  const auto ia = a.id();
  const auto rows = a.rows(), cols = a.cols();
  return t.push(a.value().middleCols(start, n), t.requires_grad(a),
                [ia, start, n, rows, cols](Tape& tp, const Matrix& g) {
                  Matrix full = Matrix::Zero(rows, cols);
                  full.middleCols(start, n) = g;
                  tp.accumulate_expr(ia, full);
                });
}

Var gather_rows(Var a, std::span<const int> index) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix v(static_cast<Eigen::Index>(index.size()), x.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= x.rows()) throw AutodiffError("gather_rows: index out of range");
    v.row(static_cast<Eigen::Index>(r)) = x.row(index[r]);
  }
  const auto ia = a.id();
  const auto rows = x.rows();
  std::vector<int> idx(index.begin(), index.end());
  return t.push(std::move(v), t.requires_grad(a), [ia, rows, idx = std::move(idx)](Tape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(rows, g.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) full.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
    tp.accumulate_expr(ia, full);
  });
}

Var scatter_add_rows(Var a, std::span<const int> index, Eigen::Index out_rows) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  if (static_cast<Eigen::Index>(index.size()) != x.rows()) throw AutodiffError("scatter_add_rows: one index per row");
  Matrix v = Matrix::Zero(out_rows, x.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= out_rows) throw AutodiffError("scatter_add_rows: index out of range");
    v.row(index[r]) += x.row(static_cast<Eigen::Index>(r));
  }
  const auto ia = a.id();
  std::vector<int> idx(index.begin(), index.end());
  return t.push(std::move(v), t.requires_grad(a), [ia, idx = std::move(idx)](Tape& tp, const Matrix& g) {
    Matrix d(static_cast<Eigen::Index>(idx.size()), g.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) d.row(static_cast<Eigen::Index>(r)) = g.row(idx[r]);
    tp.accumulate_expr(ia, d);
  });
}

Var pick(Var a, std::span<const int> index) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  if (static_cast<Eigen::Index>(index.size()) != x.rows()) throw AutodiffError("pick: one index per row");
  Matrix v(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const int c = index[static_cast<std::size_t>(r)];
    if (c < 0 || c >= x.cols()) throw AutodiffError("pick: column out of range");
    v(r, 0) = x(r, c);
  }
  const auto ia = a.id();
  const auto cols = x.cols();
  std::vector<int> idx(index.begin(), index.end());
  return t.push(std::move(v), t.requires_grad(a), [ia, cols, idx = std::move(idx)](Tape& tp, const Matrix& g) {
    Matrix d = Matrix::Zero(g.rows(), cols);
    for (Eigen::Index r = 0; r < g.rows(); ++r) d(r, idx[static_cast<std::size_t>(r)]) = g(r, 0);
    tp.accumulate_expr(ia, d);
  });
}

}  // namespace decode::ad
