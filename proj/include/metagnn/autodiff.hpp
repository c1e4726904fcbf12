#pragma once

// Define-by-run reverse-mode differentiation over dense Tensors.
//
// A Tape records every primitive applied during one forward pass. Values are
// computed eagerly; backward() walks the tape once in reverse. Tapes are cheap
// to build and are meant to be discarded after each gradient evaluation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metagnn/tensor.hpp"

namespace metagnn {

enum class Primitive {
  kLeaf,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kScalarMul,
  kConcat,
  kRelu,
  kLeakyRelu,
  kSigmoid,
  kExp,
  kLog,
  kSumReduce,
  kMeanReduce,
  kMaxReduce,
  kSegmentMax,
  kSegmentSum,
  kGather,
  kSquare,
  kSqrt,
  kDiv,
  kSegmentSoftmax,
};

std::string_view primitive_name(Primitive kind);

/// Shared, immutable row index (segment ids or gather rows).
using Index = std::shared_ptr<const std::vector<std::size_t>>;

Index make_index(std::vector<std::size_t> rows);

/// Extra arguments for the primitives that take them.
struct PrimitiveArgs {
  std::size_t axis = 0;        // concat, max_reduce
  double scalar = 0.0;         // scalar_mul factor, leaky_relu slope
  Index index;                 // segment ids (segment_*), row ids (gather)
  std::size_t num_segments = 0;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Detached input; receives no gradient.
  Var constant(Tensor value);

  /// Named differentiable leaf. backward() reports a gradient for it.
  Var parameter(std::string name, Tensor value);

  /// Evaluates `kind` on `inputs`, records it and returns the result.
  /// Throws ShapeError for non-conforming operands and DomainError for
  /// out-of-domain or non-finite results.
  Var apply(Primitive kind, std::span<const Var> inputs, const PrimitiveArgs& args = {});

  /// Reverse sweep from a scalar `loss`. Returns one gradient per registered
  /// parameter; parameters the loss does not depend on get zeros.
  GradMap backward(Var loss) const;

  /// Same as backward() but seeds d(loss) with `seed` instead of 1.
  GradMap backward(Var loss, double seed) const;

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Primitive kind = Primitive::kLeaf;
    std::vector<std::size_t> inputs;
    PrimitiveArgs args;
    Tensor value;
    std::vector<std::size_t> argmax;  // max_reduce / segment_max winners, per output element
    bool requires_grad = false;
  };

  Var push(Node node);
  void backprop_node(const Node& node, const Tensor& grad, std::vector<Tensor>& grads,
                     std::vector<bool>& has_grad) const;

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, std::size_t>> params_;
};

// Convenience wrappers over Tape::apply. All operands must live on the same tape.
namespace ad {

Var matmul(Var a, Var b);
Var add(Var a, Var b);  // b may be a 1×C row broadcast over the rows of a
Var sub(Var a, Var b);  // same broadcasting as add
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var concat(std::span<const Var> parts, std::size_t axis);
Var concat(std::initializer_list<Var> parts, std::size_t axis);
Var relu(Var a);
Var leaky_relu(Var a, double slope);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var sum(Var a);
Var mean(Var a);
Var max_reduce(Var a, std::size_t axis);
Var segment_max(Var a, const Index& segments, std::size_t num_segments);
Var segment_sum(Var a, const Index& segments, std::size_t num_segments);
Var gather(Var a, const Index& rows);
Var square(Var a);
Var sqrt(Var a);
Var div(Var a, Var b);
Var segment_softmax(Var a, const Index& segments, std::size_t num_segments);

/// Mean squared error between column vectors of equal shape.
Var mse(Var prediction, Var target);

}  // namespace ad

/// Loss closure used by the gradient checker: builds a fresh tape from a ParamSet,
/// registers every entry with Tape::parameter and returns the scalar loss.
using LossBuilder = std::function<Var(Tape&, const ParamSet&)>;

/// Compares reverse-mode gradients against central differences at `probe_count`
/// randomly chosen scalar coordinates (seeded). Returns the maximum relative error
/// |a − n| / max(|a|, |n|, 1e-8).
double finite_diff_check(const LossBuilder& loss, const ParamSet& params, std::size_t probe_count, double eps,
                         std::uint64_t seed);

struct FiniteDiffProbe {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t worst = 0;  // index into probes
  std::vector<FiniteDiffProbe> probes;
};

/// finite_diff_check with every probe kept.
FiniteDiffReport finite_diff_report(const LossBuilder& loss, const ParamSet& params, std::size_t probe_count,
                                    double eps, std::uint64_t seed);

/// Registers all entries of `params` on the tape under `prefix + name`.
std::map<std::string, Var> register_parameters(Tape& tape, const ParamSet& params, const std::string& prefix = "");

}  // namespace metagnn
