#include "rockres/autograd.hpp"

#include <atomic>
#include <unordered_set>

namespace rockres {

namespace {

thread_local bool g_recording = true;
std::atomic<bool> g_check_numerics{false};

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = previous_; }

bool grad_recording_enabled() { return g_recording; }

void set_check_numerics(bool on) { g_check_numerics.store(on); }
bool check_numerics_enabled() { return g_check_numerics.load(); }

template <typename T>
Tensor<T> Tensor<T>::from_op(NDArray<T> value, const char* op, std::vector<Tensor> inputs,
                             BackwardFn<T> backward) {
  if (check_numerics_enabled() && !value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  Tensor out(std::move(value), false);
  out.node_->op = op;
  if (!g_recording) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->inputs.reserve(inputs.size());
  for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
  out.node_->backward = std::move(backward);
  return out;
}

template <typename T>
T Tensor<T>::item() const {
  if (node_->value.numel() != 1) {
    throw ShapeError("item() on tensor of shape " + to_string(shape()));
  }
  return node_->value[0];
}

template <typename T>
NDArray<T> Tensor<T>::grad() const {
  if (node_->grad.is_null()) return NDArray<T>(node_->value.shape(), T{0});
  return node_->grad;
}

template <typename T>
GradTape<T> GradTape<T>::record(const Tensor<T>& root) {
  GradTape tape;
  tape.root_ = root.node();
  if (!root.requires_grad()) return tape;
  // Iterative post-order DFS; a node is emitted after all of its inputs.
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

template <typename T>
void GradTape<T>::replay(const NDArray<T>& seed) {
  if (order_.empty()) return;
  for (Node<T>* node : order_) {
    if (!node->is_leaf()) node->grad = NDArray<T>();
  }
  require_same_shape(root_->value.shape(), seed.shape(), "backward seed");
  root_->accumulate(seed);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node<T>* node = *it;
    if (node->is_leaf() || node->grad.is_null()) continue;
    node->backward(node->grad, node->inputs);
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  backward(loss, NDArray<T>(loss.shape(), T{1}));
}

template <typename T>
void backward(const Tensor<T>& output, const NDArray<T>& grad_output) {
  GradTape<T>::record(output).replay(grad_output);
}

template class Tensor<float>;
template class Tensor<double>;
template class GradTape<float>;
template class GradTape<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);
template void backward<float>(const Tensor<float>&, const NDArray<float>&);
template void backward<double>(const Tensor<double>&, const NDArray<double>&);

}  // namespace rockres
