#pragma once

#include "motionlab/grad/tensor.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

namespace motionlab::grad {

/// Handle to a node of a Graph.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Graph;

/// What a vector-Jacobian product sees: the node's output and output gradient,
/// its inputs, and the gradient slots of inputs that need one (null otherwise).
class BackwardContext {
 public:
  BackwardContext(Graph& graph, int node) : graph_(graph), node_(node) {}
  const Tensor& output() const;
  const Tensor& output_grad() const;
  const Tensor& input(std::size_t i) const;
  Tensor* input_grad(std::size_t i);

 private:
  Graph& graph_;
  int node_;
};

using VjpFn = std::function<void(BackwardContext&)>;

/// Tape-based reverse-mode differentiation over dense tensors.
///
/// Every op evaluates eagerly and records its vector-Jacobian product. A Graph
/// is single-use and single-threaded; parameters may be shared read-only by
/// several graphs for evaluation.
class Graph {
 public:
  struct Options {
    bool training = false;
    std::uint64_t seed = 0;
  };

  Graph() : Graph(Options{}) {}
  explicit Graph(Options options);

  bool training() const { return options_.training; }

  Var constant(Tensor value);
  /// Leaf that receives a gradient (readable with grad()).
  Var variable(Tensor value);
  /// Leaf bound to a parameter; backward() accumulates into Parameter::grad.
  Var parameter(Parameter& p);

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;
  const Shape& shape(Var v) const { return value(v).shape(); }
  std::size_t node_count() const { return nodes_.size(); }

  // Linear algebra and elementwise arithmetic. Binary ops broadcast b over a
  // when b's shape equals a's trailing dimensions, or when both have equal rank
  // and every mismatched dimension is 1.
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  /// factor * a + offset, elementwise.
  Var affine(Var a, double factor, double offset);

  Var sigmoid(Var a);
  Var tanh(Var a);
  Var relu(Var a);
  Var softmax(Var a, std::size_t axis);

  Var concat(std::span<const Var> parts, std::size_t axis);
  Var concat(std::initializer_list<Var> parts, std::size_t axis) {
    return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
  }
  Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
  Var reshape(Var a, Shape shape);
  Var permute(Var a, const std::vector<std::size_t>& axes);

  Var sum(Var a);
  Var sum(Var a, std::size_t axis);
  Var mean(Var a);
  /// Euclidean norm over the last axis; the axis is removed.
  Var l2_norm(Var a);

  /// x [N,C,H,W], w [O,C,kh,kw], b [O] -> [N,O,Ho,Wo].
  Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t padding);
  /// Adjoint of conv2d: x [N,C,H,W], w [C,O,kh,kw], b [O] ->
  /// [N,O,(H-1)*stride-2*padding+kh+output_padding, ...].
  Var transpose_conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t padding,
                       std::size_t output_padding_h, std::size_t output_padding_w);

  /// Inverted dropout; the identity when the graph is not training or rate is 0.
  Var dropout(Var a, double rate);

  /// Op with a caller-supplied forward value and vector-Jacobian product.
  Var custom(std::span<const Var> inputs, Tensor value, VjpFn vjp);

  /// Accumulates d(loss)/d(parameter) into every bound parameter. Calling it
  /// again without zeroing parameter gradients adds a second copy.
  void backward(Var loss);

 private:
  friend class BackwardContext;

  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> inputs;
    VjpFn vjp;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Tensor value, std::vector<int> inputs, VjpFn vjp);
  const Node& node(Var v) const;
  Var binary(Var a, Var b, int kind);

  Options options_;
  std::mt19937_64 rng_;
  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, int> param_nodes_;
};

}  // namespace motionlab::grad
