#include "metagnn/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "metagnn/error.hpp"

namespace metagnn {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_to_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor(Shape{rows, cols}, std::vector<double>(values));
}

Tensor Tensor::column(std::span<const double> values) {
  return Tensor(Shape{values.size(), 1}, std::vector<double>(values.begin(), values.end()));
}

std::size_t Tensor::rows() const {
  if (shape_.size() == 2) return shape_[0];
  if (shape_.size() < 2) return 1;
  throw ShapeError("rows() requires rank <= 2, got " + shape_to_string(shape_));
}

std::size_t Tensor::cols() const {
  if (shape_.size() == 2) return shape_[1];
  if (shape_.size() == 1) return shape_[0];
  if (shape_.empty()) return 1;
  throw ShapeError("cols() requires rank <= 2, got " + shape_to_string(shape_));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_same_layout(const ParamSet& a, const ParamSet& b, const char* context) {
  if (a.size() != b.size()) {
    throw ContractError(std::string(context) + ": parameter sets differ in size (" + std::to_string(a.size()) +
                        " vs " + std::to_string(b.size()) + ")");
  }
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first) {
      throw ContractError(std::string(context) + ": parameter names differ ('" + ia->first + "' vs '" + ib->first +
                          "')");
    }
    if (ia->second.shape() != ib->second.shape()) {
      throw ContractError(std::string(context) + ": shape mismatch for '" + ia->first + "'");
    }
  }
}

ParamSet sgd_step(const ParamSet& params, const GradMap& grads, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw ContractError("sgd_step: learning rate must be finite and non-negative");
  }
  ParamSet out;
  for (const auto& [name, value] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw ContractError("sgd_step: missing gradient for '" + name + "'");
    if (it->second.shape() != value.shape()) {
      throw ContractError("sgd_step: gradient shape mismatch for '" + name + "'");
    }
    Tensor next = value;
    auto g = it->second.data();
    auto d = next.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= lr * g[i];
    out.emplace(name, std::move(next));
  }
  return out;
}

std::size_t parameter_count(const ParamSet& params) {
  std::size_t n = 0;
  for (const auto& [name, value] : params) n += value.size();
  return n;
}

}  // namespace metagnn
