#pragma once

#include <cstddef>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace metagnn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major array of doubles. A rank-0 shape holds a single scalar.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor full(Shape shape, double value);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
  static Tensor column(std::span<const double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  // Row/column view of a rank-2 tensor. Rank 0 and rank 1 are treated as 1×1 and 1×n.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

  double item() const;
  bool all_finite() const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Named parameter tensors of one model. Ordered by name, so iteration is deterministic.
using ParamSet = std::map<std::string, Tensor>;

/// Gradient per parameter name; shapes mirror the ParamSet they were taken against.
using GradMap = std::map<std::string, Tensor>;

/// θ − lr·g for every entry. `grads` must cover every parameter with matching shapes.
ParamSet sgd_step(const ParamSet& params, const GradMap& grads, double lr);

/// Total number of scalars across all tensors.
std::size_t parameter_count(const ParamSet& params);

/// Throws ContractError unless both sets have identical names and shapes.
void require_same_layout(const ParamSet& a, const ParamSet& b, const char* context);

}  // namespace metagnn
