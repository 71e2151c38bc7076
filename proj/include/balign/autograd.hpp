#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "balign/tensor.hpp"

// Reverse-mode differentiation over Tensor values.
//
// A Var is a shared handle to a graph node. Operations on Vars that require
// gradients record a node holding the result, its inputs and a backward rule;
// backward(loss) walks the recorded graph once in reverse topological order.
// A graph must stay confined to one thread; Tensor values may cross threads.
namespace balign {

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node&)>;

struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  BackwardFn backward_fn;
  const char* op = "leaf";

  Tensor& ensure_grad();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  // Builds an op node. If no input requires a gradient the node is a constant
  // and `fn` is dropped.
  static Var make_op(Tensor value, std::vector<Var> inputs, BackwardFn fn, const char* op);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const;
  Tensor& mutable_value();
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool has_grad() const;
  const Tensor& grad() const;
  Tensor& mutable_grad();
  void zero_grad();
  Var detach() const;
  const char* op_name() const;
  const NodePtr& node() const noexcept { return node_; }

 private:
  explicit Var(NodePtr node) : node_(std::move(node)) {}
  NodePtr node_;
};

inline Var parameter(Tensor value) { return Var(std::move(value), true); }
inline Var constant(Tensor value) { return Var(std::move(value), false); }

// Nodes reachable from `root` that require gradients, inputs before users.
std::vector<const Node*> topological_order(const Var& root);

// Seeds d(loss)/d(loss) = 1 and accumulates into every reachable node that
// requires gradients. Throws UsageError for non-scalar losses and
// NumericalError if a leaf gradient becomes non-finite.
void backward(const Var& loss);

// ---- operations -----------------------------------------------------------

// NCHW cross-correlation; `bias` may be undefined.
Var conv2d(const Var& input, const Var& kernel, const Var& bias, int stride, int padding);

// Pointwise a (+|-|*) b. `b` may also be single-channel NCHW ([N,1,H,W]) and is
// then broadcast across the channels of `a`.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

// Concatenation / slicing along axis 1.
Var concat(std::span<const Var> parts);
Var slice_channels(const Var& x, int begin, int count);

Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var sigmoid(const Var& x);
Var log(const Var& x);
Var square(const Var& x);
// Gradient passes only where lo < x < hi.
Var clamp(const Var& x, double lo, double hi);

Var sum(const Var& x);   // -> [1]
Var mean(const Var& x);  // -> [1]

Var maxpool2(const Var& x);
Var upsample2(const Var& x);
Var global_avg_pool(const Var& x);  // [N,C,H,W] -> [N,C]
Var reshape(const Var& x, Shape shape);

// [N,F] x [O,F]^T + [O] -> [N,O]; bias may be undefined.
Var linear(const Var& x, const Var& weight, const Var& bias);
// Independent head per slot: [N,K,C] with weights [K,C] and bias [K] -> [N,K].
Var slot_linear(const Var& x, const Var& weight, const Var& bias);
// [N,K,C] -> [N,C]
Var mean_axis1(const Var& x);

}  // namespace balign
