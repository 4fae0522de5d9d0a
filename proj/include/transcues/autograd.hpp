#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "transcues/tensor.hpp"

namespace transcues {

// Reverse-mode differentiation on a dynamically recorded graph. Each op
// result owns a Node that remembers its inputs and a closure that pushes the
// incoming gradient back to them.
template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(const Tensor<Scalar>&)> backward;

  bool is_leaf() const { return inputs.empty(); }

  Tensor<Scalar>& grad_buffer() {
    if (grad.empty()) grad = Tensor<Scalar>(value.shape());
    return grad;
  }
};

// Graph recording switch; thread-local so that independent model instances
// may run on separate threads.
class GradMode {
 public:
  static bool enabled() { return enabled_; }
  static void set_enabled(bool on) { enabled_ = on; }

 private:
  static inline thread_local bool enabled_ = true;
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Var() = default;
  explicit Var(Tensor<Scalar> value, bool requires_grad = false) : node_(std::make_shared<Node<Scalar>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const NodePtr& node() const { return node_; }

  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& value_mut() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Index dim(int axis) const { return node_->value.dim(axis); }
  Index size() const { return node_->value.size(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor<Scalar>& grad() const { return node_->grad; }
  void zero_grad() const { node_->grad = Tensor<Scalar>(); }

  // Seeds the output gradient with ones and propagates to every leaf that
  // requires a gradient. Intermediate gradients are released afterwards.
  void backward() const {
    std::vector<Node<Scalar>*> order;
    std::unordered_set<Node<Scalar>*> visited;
    std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node<Scalar>* child = node->inputs[next++].get();
        if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    node_->grad_buffer().array().setOnes();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<Scalar>* node = *it;
      if (node->is_leaf()) continue;
      if (node->backward && !node->grad.empty()) node->backward(node->grad);
      node->grad = Tensor<Scalar>();
    }
  }

 private:
  NodePtr node_;
};

// Wraps an op result. The backward closure is attached only when gradient
// recording is on and at least one input needs a gradient.
template <typename Scalar, typename Backward>
Var<Scalar> make_result(Tensor<Scalar> value, std::vector<Var<Scalar>> inputs, Backward&& backward) {
  Var<Scalar> out(std::move(value));
  if (!GradMode::enabled()) return out;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.inputs.reserve(inputs.size());
  for (auto& in : inputs) node.inputs.push_back(in.node());
  node.backward = std::forward<Backward>(backward);
  return out;
}

template <typename Scalar>
void accumulate(const typename Var<Scalar>::NodePtr& node, const Tensor<Scalar>& grad) {
  if (!node->requires_grad) return;
  if (node->grad.empty()) {
    node->grad = grad;
    node->grad.reshape(node->value.shape());
  } else {
    node->grad.array() += grad.array();
  }
}

}  // namespace transcues
