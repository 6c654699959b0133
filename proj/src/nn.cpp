#include "decode/nn.hpp"

#include <cmath>

namespace decode {

Matrix PlainOps::log_clamped(const Matrix& a, double floor) {
  return a.unaryExpr([floor](double x) {
    if (!(x > 0.0)) return floor;
    return std::max(std::log(x), floor);
  });
}

Matrix PlainOps::log_softmax_rows(const Matrix& a) {
  Matrix y(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double m = a.row(r).maxCoeff();
    const double lse = m + std::log((a.row(r).array() - m).exp().sum());
    y.row(r) = a.row(r).array() - lse;
  }
  return y;
}

Matrix PlainOps::softmax_rows(const Matrix& a) { return log_softmax_rows(a).array().exp().matrix(); }

Matrix PlainOps::hcat(const Matrix& a, const Matrix& b) {
  Matrix r(a.rows(), a.cols() + b.cols());
  r << a, b;
  return r;
}

Matrix PlainOps::vcat(std::span<const Matrix> parts) {
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Matrix r(rows, parts.empty() ? 0 : parts.front().cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    r.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return r;
}

Matrix PlainOps::gather_rows(const Matrix& a, std::span<const int> index) {
  Matrix r(static_cast<Eigen::Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) r.row(static_cast<Eigen::Index>(i)) = a.row(index[i]);
  return r;
}

Matrix PlainOps::scatter_add_rows(const Matrix& a, std::span<const int> index, Eigen::Index out_rows) {
  Matrix r = Matrix::Zero(out_rows, a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) r.row(index[i]) += a.row(static_cast<Eigen::Index>(i));
  return r;
}

Matrix PlainOps::pick(const Matrix& a, std::span<const int> index) {
  Matrix r(a.rows(), 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i) r(i, 0) = a(i, index[static_cast<std::size_t>(i)]);
  return r;
}

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "softplus"; }

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "softplus") return Activation::softplus;
  throw std::invalid_argument("unknown activation " + s);
}

Mlp::Mlp(ad::ParameterSet& params, const std::string& name, std::vector<int> widths, Activation act,
         std::mt19937_64& rng)
    : widths_(std::move(widths)), act_(act) {
  if (widths_.size() < 2) throw std::invalid_argument("mlp needs at least input and output widths");
  for (int w : widths_) {
    if (w <= 0) throw std::invalid_argument("mlp widths must be positive");
  }
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const int fan_in = widths_[l];
    const int fan_out = widths_[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix w(fan_in, fan_out);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
    }
    Matrix b(1, fan_out);
    for (Eigen::Index j = 0; j < b.cols(); ++j) b(0, j) = u(rng);
    weights_.push_back(params.add(name + ".w" + std::to_string(l), std::move(w)));
    biases_.push_back(params.add(name + ".b" + std::to_string(l), std::move(b)));
  }
}

Embedding::Embedding(ad::ParameterSet& params, const std::string& name, int num_rows, int dim, double init_scale,
                     std::mt19937_64& rng)
    : num_rows_(num_rows), dim_(dim) {
  if (num_rows <= 0 || dim <= 0) throw std::invalid_argument("embedding shape must be positive");
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix table(num_rows, dim);
  for (Eigen::Index j = 0; j < table.cols(); ++j) {
    for (Eigen::Index i = 0; i < table.rows(); ++i) table(i, j) = init_scale * n(rng);
  }
  slot_ = params.add(name, std::move(table));
}

nlohmann::json parameters_to_json(const ad::ParameterSet& params) {
  nlohmann::json doc;
  doc["version"] = 1;
  doc["tensors"] = nlohmann::json::array();
  for (const auto& p : params) {
    std::vector<double> data(static_cast<std::size_t>(p.value.size()));
    Eigen::Map<Matrix>(data.data(), p.value.rows(), p.value.cols()) = p.value;
    doc["tensors"].push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}, {"data", data}});
  }
  return doc;
}

void parameters_from_json(const nlohmann::json& doc, ad::ParameterSet& params) {
  if (doc.value("version", 0) != 1) throw std::runtime_error("unsupported checkpoint version");
  const auto& tensors = doc.at("tensors");
  if (tensors.size() != params.size()) throw std::runtime_error("checkpoint tensor count mismatch");
  for (const auto& t : tensors) {
    const std::size_t slot = params.find(t.at("name").get<std::string>());
    auto& p = params[slot];
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    if (rows != p.value.rows() || cols != p.value.cols()) {
      throw std::runtime_error("checkpoint shape mismatch for " + p.name);
    }
    const auto data = t.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw std::runtime_error("checkpoint data size mismatch");
    p.value = Eigen::Map<const Matrix>(data.data(), rows, cols);
  }
}

}  // namespace decode
