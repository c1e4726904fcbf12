#include "metagnn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "metagnn/error.hpp"
#include "metagnn/rng.hpp"

namespace metagnn {

namespace {

std::string op_error(Primitive kind, const std::string& what) {
  return std::string(primitive_name(kind)) + ": " + what;
}

void require_rank2(Primitive kind, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(op_error(kind, "expected rank-2 operand, got " + shape_to_string(t.shape())));
}

void require_same_shape(Primitive kind, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(op_error(kind, "shape mismatch " + shape_to_string(a.shape()) + " vs " +
                                        shape_to_string(b.shape())));
  }
}

bool is_row_broadcast(const Tensor& a, const Tensor& b) {
  return a.rank() == 2 && b.rank() == 2 && b.rows() == 1 && a.rows() != 1 && b.cols() == a.cols();
}

void require_index(Primitive kind, const PrimitiveArgs& args, std::size_t expected_len, std::size_t bound) {
  if (!args.index) throw ShapeError(op_error(kind, "missing index"));
  if (expected_len != std::numeric_limits<std::size_t>::max() && args.index->size() != expected_len) {
    throw ShapeError(op_error(kind, "index length " + std::to_string(args.index->size()) + " does not match " +
                                        std::to_string(expected_len) + " rows"));
  }
  for (std::size_t v : *args.index) {
    if (v >= bound) throw ShapeError(op_error(kind, "index " + std::to_string(v) + " out of range " +
                                                        std::to_string(bound)));
  }
}

template <typename F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

// C += A·B for row-major A[m,k], B[k,n].
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

std::string_view primitive_name(Primitive kind) {
  switch (kind) {
    case Primitive::kLeaf: return "leaf";
    case Primitive::kMatmul: return "matmul";
    case Primitive::kAdd: return "add";
    case Primitive::kSub: return "sub";
    case Primitive::kMul: return "mul";
    case Primitive::kScalarMul: return "scalar_mul";
    case Primitive::kConcat: return "concat";
    case Primitive::kRelu: return "relu";
    case Primitive::kLeakyRelu: return "leaky_relu";
    case Primitive::kSigmoid: return "sigmoid";
    case Primitive::kExp: return "exp";
    case Primitive::kLog: return "log";
    case Primitive::kSumReduce: return "sum_reduce";
    case Primitive::kMeanReduce: return "mean_reduce";
    case Primitive::kMaxReduce: return "max_reduce";
    case Primitive::kSegmentMax: return "segment_max";
    case Primitive::kSegmentSum: return "segment_sum";
    case Primitive::kGather: return "gather";
    case Primitive::kSquare: return "square";
    case Primitive::kSqrt: return "sqrt";
    case Primitive::kDiv: return "div";
    case Primitive::kSegmentSoftmax: return "softmax_over_segments";
  }
  return "unknown";
}

Index make_index(std::vector<std::size_t> rows) {
  return std::make_shared<const std::vector<std::size_t>>(std::move(rows));
}

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  return push(std::move(node));
}

Var Tape::parameter(std::string name, Tensor value) {
  if (!value.all_finite()) throw DomainError("parameter '" + name + "' holds non-finite values");
  Node node;
  node.value = std::move(value);
  node.requires_grad = true;
  Var v = push(std::move(node));
  params_.emplace_back(std::move(name), v.id());
  return v;
}

Var Tape::apply(Primitive kind, std::span<const Var> inputs, const PrimitiveArgs& args) {
  auto arity = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw ShapeError(op_error(kind, "expected " + std::to_string(n) + " operands, got " +
                                          std::to_string(inputs.size())));
    }
  };
  for (const Var& v : inputs) {
    if (v.tape() != this) throw ContractError(op_error(kind, "operand recorded on a different tape"));
  }
  auto in = [&](std::size_t i) -> const Tensor& { return nodes_[inputs[i].id()].value; };

  Node node;
  node.kind = kind;
  node.args = args;
  for (const Var& v : inputs) {
    node.inputs.push_back(v.id());
    node.requires_grad = node.requires_grad || nodes_[v.id()].requires_grad;
  }

  switch (kind) {
    case Primitive::kLeaf:
      throw ContractError("apply: leaf is not a primitive; use constant() or parameter()");

    case Primitive::kMatmul: {
      arity(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      require_rank2(kind, a);
      require_rank2(kind, b);
      if (a.cols() != b.rows()) {
        throw ShapeError(op_error(kind, "inner dimensions differ: " + shape_to_string(a.shape()) + " x " +
                                            shape_to_string(b.shape())));
      }
      node.value = Tensor(Shape{a.rows(), b.cols()});
      gemm_acc(a.data().data(), b.data().data(), node.value.data().data(), a.rows(), a.cols(), b.cols());
      break;
    }

    case Primitive::kAdd:
    case Primitive::kSub: {
      arity(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const double sign = kind == Primitive::kAdd ? 1.0 : -1.0;
      node.value = a;
      auto out = node.value.data();
      auto bd = b.data();
      if (is_row_broadcast(a, b)) {
        const std::size_t cols = a.cols();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * bd[i % cols];
      } else {
        require_same_shape(kind, a, b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * bd[i];
      }
      break;
    }

    case Primitive::kMul:
    case Primitive::kDiv: {
      arity(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      require_same_shape(kind, a, b);
      node.value = a;
      auto out = node.value.data();
      auto bd = b.data();
      if (kind == Primitive::kMul) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
      } else {
        for (std::size_t i = 0; i < out.size(); ++i) {
          if (bd[i] == 0.0) throw DomainError(op_error(kind, "division by zero"));
          out[i] /= bd[i];
        }
      }
      break;
    }

    case Primitive::kScalarMul: {
      arity(1);
      const double s = args.scalar;
      node.value = map_unary(in(0), [s](double x) { return s * x; });
      break;
    }

    case Primitive::kConcat: {
      if (inputs.empty()) throw ShapeError(op_error(kind, "no operands"));
      if (args.axis > 1) throw ShapeError(op_error(kind, "axis must be 0 or 1"));
      for (std::size_t i = 0; i < inputs.size(); ++i) require_rank2(kind, in(i));
      if (args.axis == 0) {
        const std::size_t cols = in(0).cols();
        std::size_t rows = 0;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
          if (in(i).cols() != cols) throw ShapeError(op_error(kind, "column counts differ along axis 0"));
          rows += in(i).rows();
        }
        std::vector<double> data;
        data.reserve(rows * cols);
        for (std::size_t i = 0; i < inputs.size(); ++i) data.insert(data.end(), in(i).data().begin(), in(i).data().end());
        node.value = Tensor(Shape{rows, cols}, std::move(data));
      } else {
        const std::size_t rows = in(0).rows();
        std::size_t cols = 0;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
          if (in(i).rows() != rows) throw ShapeError(op_error(kind, "row counts differ along axis 1"));
          cols += in(i).cols();
        }
        node.value = Tensor(Shape{rows, cols});
        std::size_t offset = 0;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
          const Tensor& part = in(i);
          const std::size_t pc = part.cols();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < pc; ++c) node.value.at(r, offset + c) = part.at(r, c);
          }
          offset += pc;
        }
      }
      break;
    }

    case Primitive::kRelu:
      arity(1);
      node.value = map_unary(in(0), [](double x) { return x > 0.0 ? x : 0.0; });
      break;

    case Primitive::kLeakyRelu: {
      arity(1);
      const double slope = args.scalar;
      node.value = map_unary(in(0), [slope](double x) { return x > 0.0 ? x : slope * x; });
      break;
    }

    case Primitive::kSigmoid:
      arity(1);
      node.value = map_unary(in(0), [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
      break;

    case Primitive::kExp:
      arity(1);
      node.value = map_unary(in(0), [](double x) { return std::exp(x); });
      break;

    case Primitive::kLog:
      arity(1);
      for (double x : in(0).data()) {
        if (!(x > 0.0)) throw DomainError(op_error(kind, "argument must be positive"));
      }
      node.value = map_unary(in(0), [](double x) { return std::log(x); });
      break;

    case Primitive::kSquare:
      arity(1);
      node.value = map_unary(in(0), [](double x) { return x * x; });
      break;

    case Primitive::kSqrt:
      arity(1);
      for (double x : in(0).data()) {
        if (x < 0.0) throw DomainError(op_error(kind, "argument must be non-negative"));
      }
      node.value = map_unary(in(0), [](double x) { return std::sqrt(x); });
      break;

    case Primitive::kSumReduce:
    case Primitive::kMeanReduce: {
      arity(1);
      const Tensor& a = in(0);
      if (a.size() == 0) throw ShapeError(op_error(kind, "empty operand"));
      double total = 0.0;
      for (double x : a.data()) total += x;
      if (kind == Primitive::kMeanReduce) total /= static_cast<double>(a.size());
      node.value = Tensor::scalar(total);
      break;
    }

    case Primitive::kMaxReduce: {
      arity(1);
      const Tensor& a = in(0);
      require_rank2(kind, a);
      const std::size_t rows = a.rows();
      const std::size_t cols = a.cols();
      if (args.axis == 0) {
        if (rows == 0) throw ShapeError(op_error(kind, "reduction over zero rows"));
        node.value = Tensor(Shape{1, cols});
        node.argmax.assign(cols, 0);
        for (std::size_t c = 0; c < cols; ++c) {
          std::size_t best = 0;
          for (std::size_t r = 1; r < rows; ++r) {
            if (a.at(r, c) > a.at(best, c)) best = r;
          }
          node.value.at(0, c) = a.at(best, c);
          node.argmax[c] = best * cols + c;
        }
      } else if (args.axis == 1) {
        if (cols == 0) throw ShapeError(op_error(kind, "reduction over zero columns"));
        node.value = Tensor(Shape{rows, 1});
        node.argmax.assign(rows, 0);
        for (std::size_t r = 0; r < rows; ++r) {
          std::size_t best = 0;
          for (std::size_t c = 1; c < cols; ++c) {
            if (a.at(r, c) > a.at(r, best)) best = c;
          }
          node.value.at(r, 0) = a.at(r, best);
          node.argmax[r] = r * cols + best;
        }
      } else {
        throw ShapeError(op_error(kind, "axis must be 0 or 1"));
      }
      break;
    }

    case Primitive::kSegmentMax:
    case Primitive::kSegmentSum: {
      arity(1);
      const Tensor& a = in(0);
      require_rank2(kind, a);
      require_index(kind, args, a.rows(), args.num_segments);
      const std::size_t cols = a.cols();
      const auto& seg = *args.index;
      node.value = Tensor(Shape{args.num_segments, cols});
      if (kind == Primitive::kSegmentSum) {
        for (std::size_t r = 0; r < seg.size(); ++r) {
          for (std::size_t c = 0; c < cols; ++c) node.value.at(seg[r], c) += a.at(r, c);
        }
      } else {
        // Empty segments stay zero; argmax marks them with the sentinel.
        constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
        node.argmax.assign(args.num_segments * cols, kNone);
        for (std::size_t r = 0; r < seg.size(); ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            std::size_t& slot = node.argmax[seg[r] * cols + c];
            if (slot == kNone || a.at(r, c) > a.data()[slot]) slot = r * cols + c;
          }
        }
        for (std::size_t i = 0; i < node.argmax.size(); ++i) {
          if (node.argmax[i] != kNone) node.value.data()[i] = a.data()[node.argmax[i]];
        }
      }
      break;
    }

    case Primitive::kGather: {
      arity(1);
      const Tensor& a = in(0);
      require_rank2(kind, a);
      require_index(kind, args, std::numeric_limits<std::size_t>::max(), a.rows());
      const auto& rows = *args.index;
      const std::size_t cols = a.cols();
      node.value = Tensor(Shape{rows.size(), cols});
      for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(a.data().begin() + rows[i] * cols, cols, node.value.data().begin() + i * cols);
      }
      break;
    }

    case Primitive::kSegmentSoftmax: {
      arity(1);
      const Tensor& a = in(0);
      require_rank2(kind, a);
      require_index(kind, args, a.rows(), args.num_segments);
      const auto& seg = *args.index;
      const std::size_t cols = a.cols();
      Tensor seg_max = Tensor::full(Shape{args.num_segments, cols}, -std::numeric_limits<double>::infinity());
      for (std::size_t r = 0; r < seg.size(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) seg_max.at(seg[r], c) = std::max(seg_max.at(seg[r], c), a.at(r, c));
      }
      node.value = Tensor(a.shape());
      Tensor seg_sum(Shape{args.num_segments, cols});
      for (std::size_t r = 0; r < seg.size(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const double e = std::exp(a.at(r, c) - seg_max.at(seg[r], c));
          node.value.at(r, c) = e;
          seg_sum.at(seg[r], c) += e;
        }
      }
      for (std::size_t r = 0; r < seg.size(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) node.value.at(r, c) /= seg_sum.at(seg[r], c);
      }
      break;
    }
  }

  if (!node.value.all_finite()) throw DomainError(op_error(kind, "produced a non-finite value"));
  return push(std::move(node));
}

void Tape::backprop_node(const Node& node, const Tensor& grad, std::vector<Tensor>& grads,
                         std::vector<bool>& has_grad) const {
  auto slot = [&](std::size_t input) -> Tensor* {
    const std::size_t id = node.inputs[input];
    if (!nodes_[id].requires_grad) return nullptr;
    if (!has_grad[id]) {
      grads[id] = Tensor(nodes_[id].value.shape());
      has_grad[id] = true;
    }
    return &grads[id];
  };
  auto val = [&](std::size_t input) -> const Tensor& { return nodes_[node.inputs[input]].value; };
  auto g = grad.data();

  switch (node.kind) {
    case Primitive::kLeaf:
      break;

    case Primitive::kMatmul: {
      const Tensor& a = val(0);
      const Tensor& b = val(1);
      const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
      if (Tensor* ga = slot(0)) {
        // dA = G·Bᵀ
        auto out = ga->data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * b.data()[p * n + j];
            out[i * k + p] += acc;
          }
        }
      }
      if (Tensor* gb = slot(1)) {
        // dB = Aᵀ·G
        auto out = gb->data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double av = a.data()[i * k + p];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out[p * n + j] += av * g[i * n + j];
          }
        }
      }
      break;
    }

    case Primitive::kAdd:
    case Primitive::kSub: {
      const double sign = node.kind == Primitive::kAdd ? 1.0 : -1.0;
      if (Tensor* ga = slot(0)) {
        auto out = ga->data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += g[i];
      }
      if (Tensor* gb = slot(1)) {
        auto out = gb->data();
        if (is_row_broadcast(val(0), val(1))) {
          const std::size_t cols = out.size();
          for (std::size_t i = 0; i < g.size(); ++i) out[i % cols] += sign * g[i];
        } else {
          for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * g[i];
        }
      }
      break;
    }

    case Primitive::kMul: {
      const auto a = val(0).data();
      const auto b = val(1).data();
      if (Tensor* ga = slot(0)) {
        auto out = ga->data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += g[i] * b[i];
      }
      if (Tensor* gb = slot(1)) {
        auto out = gb->data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += g[i] * a[i];
      }
      break;
    }

    case Primitive::kDiv: {
      const auto a = val(0).data();
      const auto b = val(1).data();
      if (Tensor* ga = slot(0)) {
        auto out = ga->data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += g[i] / b[i];
      }
      if (Tensor* gb = slot(1)) {
        auto out = gb->data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= g[i] * a[i] / (b[i] * b[i]);
      }
      break;
    }

    case Primitive::kScalarMul:
      if (Tensor* ga = slot(0)) {
        auto out = ga->data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += node.args.scalar * g[i];
      }
      break;

    case Primitive::kConcat: {
      std::size_t offset = 0;
      for (std::size_t part = 0; part < node.inputs.size(); ++part) {
        const Tensor& v = val(part);
        Tensor* gp = slot(part);
        if (node.args.axis == 0) {
          if (gp) {
            auto out = gp->data();
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += g[offset + i];
          }
          offset += v.size();
        } else {
          const std::size_t pc = v.cols();
          if (gp) {
            for (std::size_t r = 0; r < v.rows(); ++r) {
              for (std::size_t c = 0; c < pc; ++c) gp->at(r, c) += grad.at(r, offset + c);
            }
          }
          offset += pc;
        }
      }
      break;
    }

    case Primitive::kRelu:
    case Primitive::kLeakyRelu: {
      if (Tensor* ga = slot(0)) {
        const double slope = node.kind == Primitive::kRelu ? 0.0 : node.args.scalar;
        const auto x = val(0).data();
        auto out = ga->data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i] > 0.0 ? g[i] : slope * g[i];
      }
      break;
    }

    case Primitive::kSigmoid: {
      if (Tensor* ga = slot(0)) {
        const auto y = node.value.data();
        auto out = ga->data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += g[i] * y[i] * (1.0 - y[i]);
      }
      break;
    }

    case Primitive::kExp: {
      if (Tensor* ga = slot(0)) {
        const auto y = node.value.data();
        auto out = ga->data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += g[i] * y[i];
      }
      break;
    }

    case Primitive::kLog: {
      if (Tensor* ga = slot(0)) {
        const auto x = val(0).data();
        auto out = ga->data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += g[i] / x[i];
      }
      break;
    }

    case Primitive::kSquare: {
      if (Tensor* ga = slot(0)) {
        const auto x = val(0).data();
        auto out = ga->data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += 2.0 * x[i] * g[i];
      }
      break;
    }

    case Primitive::kSqrt: {
      if (Tensor* ga = slot(0)) {
        const auto y = node.value.data();
        auto out = ga->data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += g[i] / (2.0 * y[i]);
      }
      break;
    }

    case Primitive::kSumReduce:
    case Primitive::kMeanReduce: {
      if (Tensor* ga = slot(0)) {
        auto out = ga->data();
        double d = g[0];
        if (node.kind == Primitive::kMeanReduce) d /= static_cast<double>(out.size());
        for (double& v : out) v += d;
      }
      break;
    }

    case Primitive::kMaxReduce:
    case Primitive::kSegmentMax: {
      if (Tensor* ga = slot(0)) {
        auto out = ga->data();
        for (std::size_t i = 0; i < node.argmax.size(); ++i) {
          if (node.argmax[i] != std::numeric_limits<std::size_t>::max()) out[node.argmax[i]] += g[i];
        }
      }
      break;
    }

    case Primitive::kSegmentSum: {
      if (Tensor* ga = slot(0)) {
        const auto& seg = *node.args.index;
        const std::size_t cols = ga->cols();
        for (std::size_t r = 0; r < seg.size(); ++r) {
          for (std::size_t c = 0; c < cols; ++c) ga->at(r, c) += grad.at(seg[r], c);
        }
      }
      break;
    }

    case Primitive::kGather: {
      if (Tensor* ga = slot(0)) {
        const auto& rows = *node.args.index;
        const std::size_t cols = ga->cols();
        for (std::size_t i = 0; i < rows.size(); ++i) {
          for (std::size_t c = 0; c < cols; ++c) ga->at(rows[i], c) += grad.at(i, c);
        }
      }
      break;
    }

    case Primitive::kSegmentSoftmax: {
      if (Tensor* ga = slot(0)) {
        // dx = y ⊙ (g − Σ_seg g⊙y)
        const auto& seg = *node.args.index;
        const Tensor& y = node.value;
        const std::size_t cols = y.cols();
        Tensor dot(Shape{node.args.num_segments, cols});
        for (std::size_t r = 0; r < seg.size(); ++r) {
          for (std::size_t c = 0; c < cols; ++c) dot.at(seg[r], c) += grad.at(r, c) * y.at(r, c);
        }
        for (std::size_t r = 0; r < seg.size(); ++r) {
          for (std::size_t c = 0; c < cols; ++c) ga->at(r, c) += y.at(r, c) * (grad.at(r, c) - dot.at(seg[r], c));
        }
      }
      break;
    }
  }
}

GradMap Tape::backward(Var loss) const { return backward(loss, 1.0); }

GradMap Tape::backward(Var loss, double seed) const {
  if (loss.tape() != this) throw ContractError("backward: loss recorded on a different tape");
  const Node& root = nodes_[loss.id()];
  if (root.value.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_to_string(root.value.shape()));
  }
  std::vector<Tensor> grads(loss.id() + 1);
  std::vector<bool> has_grad(loss.id() + 1, false);
  if (root.requires_grad) {
    grads[loss.id()] = Tensor::full(root.value.shape(), seed);
    has_grad[loss.id()] = true;
  }
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    if (!has_grad[id]) continue;
    backprop_node(nodes_[id], grads[id], grads, has_grad);
  }
  GradMap out;
  for (const auto& [name, id] : params_) {
    if (id <= loss.id() && has_grad[id]) {
      out.insert_or_assign(name, grads[id]);
    } else {
      out.insert_or_assign(name, Tensor(nodes_[id].value.shape()));
    }
  }
  return out;
}

namespace ad {

namespace {
Var unary(Primitive kind, Var a, PrimitiveArgs args = {}) {
  const Var in[] = {a};
  return a.tape()->apply(kind, in, args);
}
Var binary(Primitive kind, Var a, Var b) {
  const Var in[] = {a, b};
  return a.tape()->apply(kind, in);
}
PrimitiveArgs segment_args(const Index& segments, std::size_t num_segments) {
  PrimitiveArgs args;
  args.index = segments;
  args.num_segments = num_segments;
  return args;
}
}  // namespace

Var matmul(Var a, Var b) { return binary(Primitive::kMatmul, a, b); }
Var add(Var a, Var b) { return binary(Primitive::kAdd, a, b); }
Var sub(Var a, Var b) { return binary(Primitive::kSub, a, b); }
Var mul(Var a, Var b) { return binary(Primitive::kMul, a, b); }
Var div(Var a, Var b) { return binary(Primitive::kDiv, a, b); }

Var scale(Var a, double factor) {
  PrimitiveArgs args;
  args.scalar = factor;
  return unary(Primitive::kScalarMul, a, args);
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  PrimitiveArgs args;
  args.axis = axis;
  return parts.front().tape()->apply(Primitive::kConcat, parts, args);
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var relu(Var a) { return unary(Primitive::kRelu, a); }

Var leaky_relu(Var a, double slope) {
  PrimitiveArgs args;
  args.scalar = slope;
  return unary(Primitive::kLeakyRelu, a, args);
}

Var sigmoid(Var a) { return unary(Primitive::kSigmoid, a); }
Var exp(Var a) { return unary(Primitive::kExp, a); }
Var log(Var a) { return unary(Primitive::kLog, a); }
Var sum(Var a) { return unary(Primitive::kSumReduce, a); }
Var mean(Var a) { return unary(Primitive::kMeanReduce, a); }
Var square(Var a) { return unary(Primitive::kSquare, a); }
Var sqrt(Var a) { return unary(Primitive::kSqrt, a); }

Var max_reduce(Var a, std::size_t axis) {
  PrimitiveArgs args;
  args.axis = axis;
  return unary(Primitive::kMaxReduce, a, args);
}

Var segment_max(Var a, const Index& segments, std::size_t num_segments) {
  return unary(Primitive::kSegmentMax, a, segment_args(segments, num_segments));
}

Var segment_sum(Var a, const Index& segments, std::size_t num_segments) {
  return unary(Primitive::kSegmentSum, a, segment_args(segments, num_segments));
}

Var segment_softmax(Var a, const Index& segments, std::size_t num_segments) {
  return unary(Primitive::kSegmentSoftmax, a, segment_args(segments, num_segments));
}

Var gather(Var a, const Index& rows) {
  PrimitiveArgs args;
  args.index = rows;
  return unary(Primitive::kGather, a, args);
}

Var mse(Var prediction, Var target) { return mean(square(sub(prediction, target))); }

}  // namespace ad

std::map<std::string, Var> register_parameters(Tape& tape, const ParamSet& params, const std::string& prefix) {
  std::map<std::string, Var> vars;
  for (const auto& [name, value] : params) vars.emplace(name, tape.parameter(prefix + name, value));
  return vars;
}

FiniteDiffReport finite_diff_report(const LossBuilder& loss, const ParamSet& params, std::size_t probe_count,
                                    double eps, std::uint64_t seed) {
  if (probe_count < 1) throw ContractError("finite_diff_check: probe count must be >= 1");
  if (!(eps > 0.0 && eps <= 1e-3)) throw ContractError("finite_diff_check: eps must lie in (0, 1e-3]");

  GradMap analytic;
  {
    Tape tape;
    Var l = loss(tape, params);
    analytic = tape.backward(l);
  }

  std::vector<std::pair<std::string, std::size_t>> coords;
  for (const auto& [name, value] : params) {
    for (std::size_t i = 0; i < value.size(); ++i) coords.emplace_back(name, i);
  }
  if (coords.empty()) throw ContractError("finite_diff_check: empty parameter set");

  auto eval_at = [&](const std::string& name, std::size_t i, double delta) {
    ParamSet shifted = params;
    shifted.at(name)[i] += delta;
    Tape tape;
    double v;
    try {
      v = loss(tape, shifted).value().item();
    } catch (const DomainError& e) {
      throw DomainError(std::string("finite_diff_check: non-finite loss at perturbed point: ") + e.what());
    }
    if (!std::isfinite(v)) throw DomainError("finite_diff_check: non-finite loss at perturbed point");
    return v;
  };

  Rng rng(seed);
  FiniteDiffReport report;
  for (std::size_t probe = 0; probe < probe_count; ++probe) {
    const auto& [name, i] = coords[uniform_index(rng, coords.size())];
    const double numeric = (eval_at(name, i, eps) - eval_at(name, i, -eps)) / (2.0 * eps);
    const double a = analytic.at(name)[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double rel = std::abs(a - numeric) / denom;
    if (probe == 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst = probe;
    }
    report.probes.push_back({name, i, a, numeric, rel});
  }
  return report;
}

double finite_diff_check(const LossBuilder& loss, const ParamSet& params, std::size_t probe_count, double eps,
                         std::uint64_t seed) {
  return finite_diff_report(loss, params, probe_count, eps, seed).max_rel_error;
}

}  // namespace metagnn
