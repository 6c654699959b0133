#pragma once

// Multilayer perceptrons and the mark-embedding table, written once against an
// "ops" policy so the same code runs on plain Eigen values (evaluation) or on a
// Tape (training). PlainOps::Value is a Matrix, TapeOps::Value is an ad::Var.

#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "decode/autodiff.hpp"

namespace decode {

using ad::Matrix;
using ad::Vector;

struct PlainOps {
  using Value = Matrix;

  const ad::ParameterSet* params{nullptr};

  [[nodiscard]] const Matrix& param(std::size_t slot) const { return (*params)[slot].value; }
  [[nodiscard]] Matrix constant(Matrix m) const { return m; }

  static Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix r;
    r.noalias() = a * b;
    return r;
  }
  static Matrix add(const Matrix& a, const Matrix& b) { return a + b; }
  static Matrix sub(const Matrix& a, const Matrix& b) { return a - b; }
  static Matrix scale(const Matrix& a, double c) { return c * a; }
  static Matrix add_row_vector(const Matrix& a, const Matrix& bias) {
    Matrix r = a;
    r.rowwise() += bias.row(0);
    return r;
  }
  static Matrix scale_rows(const Matrix& a, const Vector& s) { return s.asDiagonal() * a; }
  static Matrix tanh(const Matrix& a) { return ad::tanh(a); }
  static Matrix softplus(const Matrix& a) { return ad::softplus(a); }
  static Matrix exp(const Matrix& a) { return a.array().exp().matrix(); }
  static Matrix log_clamped(const Matrix& a, double floor);
  static Matrix log_softmax_rows(const Matrix& a);
  static Matrix softmax_rows(const Matrix& a);
  static Matrix sum(const Matrix& a) { return Matrix::Constant(1, 1, a.sum()); }
  static Matrix row_sums(const Matrix& a) { return a.rowwise().sum(); }
  static Matrix hcat(const Matrix& a, const Matrix& b);
  static Matrix vcat(std::span<const Matrix> parts);
  static Matrix top_rows(const Matrix& a, Eigen::Index n) { return a.topRows(n); }
  static Matrix middle_cols(const Matrix& a, Eigen::Index start, Eigen::Index n) { return a.middleCols(start, n); }
  static Matrix gather_rows(const Matrix& a, std::span<const int> index);
  static Matrix scatter_add_rows(const Matrix& a, std::span<const int> index, Eigen::Index out_rows);
  static Matrix pick(const Matrix& a, std::span<const int> index);
  static const Matrix& value(const Matrix& a) { return a; }
};

struct TapeOps {
  using Value = ad::Var;

  ad::Tape* tape{nullptr};
  const ad::ParameterSet* params{nullptr};

  [[nodiscard]] ad::Var param(std::size_t slot) const { return tape->parameter(*params, slot); }
  [[nodiscard]] ad::Var constant(Matrix m) const { return tape->constant(std::move(m)); }

  static ad::Var matmul(ad::Var a, ad::Var b) { return ad::matmul(a, b); }
  static ad::Var add(ad::Var a, ad::Var b) { return ad::add(a, b); }
  static ad::Var sub(ad::Var a, ad::Var b) { return ad::sub(a, b); }
  static ad::Var scale(ad::Var a, double c) { return ad::scale(a, c); }
  static ad::Var add_row_vector(ad::Var a, ad::Var bias) { return ad::add_row_vector(a, bias); }
  static ad::Var scale_rows(ad::Var a, const Vector& s) { return ad::scale_rows(a, s); }
  static ad::Var tanh(ad::Var a) { return ad::tanh(a); }
  static ad::Var softplus(ad::Var a) { return ad::softplus(a); }
  static ad::Var exp(ad::Var a) { return ad::exp(a); }
  static ad::Var log_clamped(ad::Var a, double floor) { return ad::log_clamped(a, floor); }
  static ad::Var log_softmax_rows(ad::Var a) { return ad::log_softmax_rows(a); }
  static ad::Var softmax_rows(ad::Var a) { return ad::softmax_rows(a); }
  static ad::Var sum(ad::Var a) { return ad::sum(a); }
  static ad::Var row_sums(ad::Var a) { return ad::row_sums(a); }
  static ad::Var hcat(ad::Var a, ad::Var b) { return ad::hcat(a, b); }
  static ad::Var vcat(std::span<const ad::Var> parts) { return ad::vcat(parts); }
  static ad::Var top_rows(ad::Var a, Eigen::Index n) { return ad::top_rows(a, n); }
  static ad::Var middle_cols(ad::Var a, Eigen::Index start, Eigen::Index n) { return ad::middle_cols(a, start, n); }
  static ad::Var gather_rows(ad::Var a, std::span<const int> index) { return ad::gather_rows(a, index); }
  static ad::Var scatter_add_rows(ad::Var a, std::span<const int> index, Eigen::Index out_rows) {
    return ad::scatter_add_rows(a, index, out_rows);
  }
  static ad::Var pick(ad::Var a, std::span<const int> index) { return ad::pick(a, index); }
  static const Matrix& value(ad::Var a) { return a.value(); }
};

enum class Activation { tanh, softplus };

[[nodiscard]] std::string to_string(Activation a);
[[nodiscard]] Activation activation_from_string(const std::string& s);

class Mlp {
 public:
  Mlp() = default;
  // widths = {d_in, hidden..., d_out}; hidden layers use `act`, the output is affine.
  Mlp(ad::ParameterSet& params, const std::string& name, std::vector<int> widths, Activation act,
      std::mt19937_64& rng);

  template <class Ops>
  typename Ops::Value forward(Ops& ops, const typename Ops::Value& x) const {
    using Value = typename Ops::Value;
    if (ops.value(x).cols() != in_dim()) {
      throw ad::AutodiffError("mlp input has " + std::to_string(ops.value(x).cols()) + " columns, expected " +
                              std::to_string(in_dim()));
    }
    Value h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      h = ops.add_row_vector(ops.matmul(h, ops.param(weights_[l])), ops.param(biases_[l]));
      if (l + 1 < weights_.size()) h = act_ == Activation::tanh ? ops.tanh(h) : ops.softplus(h);
    }
    return h;
  }

  [[nodiscard]] int in_dim() const { return widths_.front(); }
  [[nodiscard]] int out_dim() const { return widths_.back(); }
  [[nodiscard]] const std::vector<int>& widths() const { return widths_; }
  [[nodiscard]] Activation activation() const { return act_; }
  [[nodiscard]] const std::vector<std::size_t>& weight_slots() const { return weights_; }
  [[nodiscard]] const std::vector<std::size_t>& bias_slots() const { return biases_; }

 private:
  std::vector<int> widths_;
  Activation act_{Activation::tanh};
  std::vector<std::size_t> weights_;
  std::vector<std::size_t> biases_;
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(ad::ParameterSet& params, const std::string& name, int num_rows, int dim, double init_scale,
            std::mt19937_64& rng);

  template <class Ops>
  typename Ops::Value lookup(Ops& ops, std::span<const int> rows) const {
    for (int r : rows) {
      if (r < 0 || r >= num_rows_) {
        throw std::out_of_range("embedding row " + std::to_string(r) + " out of range [0, " +
                                std::to_string(num_rows_) + ")");
      }
    }
    return ops.gather_rows(ops.param(slot_), rows);
  }

  [[nodiscard]] int num_rows() const { return num_rows_; }
  [[nodiscard]] int dim() const { return dim_; }
  [[nodiscard]] std::size_t slot() const { return slot_; }

 private:
  int num_rows_{0};
  int dim_{0};
  std::size_t slot_{0};
};

// {"version": 1, "tensors": [{"name", "rows", "cols", "data"}]}
[[nodiscard]] nlohmann::json parameters_to_json(const ad::ParameterSet& params);
// Overwrites values of an already-shaped set; names and shapes must match.
void parameters_from_json(const nlohmann::json& doc, ad::ParameterSet& params);

}  // namespace decode
