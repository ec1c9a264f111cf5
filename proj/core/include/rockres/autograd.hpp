#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "rockres/tensor.hpp"

namespace rockres {

template <typename T>
struct Node;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

/// Reads the output gradient and accumulates into the inputs that require it.
template <typename T>
using BackwardFn = std::function<void(const NDArray<T>& grad_out, std::vector<NodePtr<T>>& inputs)>;

template <typename T>
struct Node {
  NDArray<T> value;
  NDArray<T> grad;  // null until something flows into this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr<T>> inputs;
  BackwardFn<T> backward;

  bool is_leaf() const noexcept { return !backward; }

  void accumulate(const NDArray<T>& g) {
    if (grad.is_null()) {
      grad = g;
    } else {
      grad.add_inplace(g);
    }
  }
};

/// Differentiable handle over a shared node. Copies alias the same node.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NDArray<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  /// Builds the output of an operation. The graph edge is only recorded when
  /// some input requires a gradient and recording is enabled.
  static Tensor from_op(NDArray<T> value, const char* op, std::vector<Tensor> inputs,
                        BackwardFn<T> backward);

  bool defined() const noexcept { return node_ != nullptr; }
  const NDArray<T>& value() const { return node_->value; }
  /// Parameter updates only; the optimizer is the single writer.
  NDArray<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  std::int64_t numel() const { return node_->value.numel(); }
  std::span<const T> data() const { return node_->value.data(); }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  const char* op_name() const { return node_->op; }

  /// Accumulated gradient, zeros when nothing has been accumulated.
  NDArray<T> grad() const;
  bool has_grad() const { return !node_->grad.is_null(); }
  void zero_grad() { node_->grad = NDArray<T>(); }

  /// Same value, cut from the graph.
  Tensor detach() const { return Tensor(node_->value, false); }

  const NodePtr<T>& node() const noexcept { return node_; }

 private:
  NodePtr<T> node_;
};

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_recording_enabled();

/// Opt-in fail-fast check: every op output must be finite.
void set_check_numerics(bool on);
bool check_numerics_enabled();

/// Reverse topological order of the graph reachable from a root. Each node
/// that requires a gradient appears exactly once.
template <typename T>
class GradTape {
 public:
  static GradTape record(const Tensor<T>& root);

  const std::vector<Node<T>*>& nodes() const noexcept { return order_; }
  /// Seeds the root gradient with `seed` and runs every backward rule once.
  /// Leaf gradients accumulate across calls; interior gradients are reset.
  void replay(const NDArray<T>& seed);

 private:
  std::vector<Node<T>*> order_;  // topological: inputs before outputs
  NodePtr<T> root_;
};

/// Reverse-mode differentiation of a scalar loss.
template <typename T>
void backward(const Tensor<T>& loss);

/// Reverse-mode differentiation of a non-scalar output with an explicit
/// output gradient.
template <typename T>
void backward(const Tensor<T>& output, const NDArray<T>& grad_output);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class GradTape<float>;
extern template class GradTape<double>;

}  // namespace rockres
