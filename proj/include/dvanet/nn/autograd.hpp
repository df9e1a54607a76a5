#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dvanet/nn/tensor.hpp"

namespace dva::nn {

// Reverse-mode tape over a dynamically built DAG. Ops record a backprop
// closure that pulls the node's accumulated gradient into its parents.

inline bool& grad_flag() {
  thread_local bool enabled = true;
  return enabled;
}
inline bool grad_enabled() { return grad_flag(); }
inline void set_grad_enabled(bool b) { grad_flag() = b; }

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev); }
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on demand
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backprop;

  Tensor<T>& ensure_grad() {
    if (!grad.same_shape(value)) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> v, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(v);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& value() { return node_->value; }
  Tensor<T>& grad() { return node_->ensure_grad(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  std::shared_ptr<Node<T>>& node() { return node_; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

  void zero_grad() {
    if (node_ && node_->grad.defined()) node_->grad.fill(T(0));
  }

  // Reverse pass from a scalar root.
  void backward() {
    if (!node_ || !node_->requires_grad)
      throw InvariantError("backward: root does not require grad");
    if (node_->value.size() != 1)
      throw InvariantError("backward: root must be scalar");

    // iterative post-order DFS over parents; reverse post-order is a
    // topological order from the root
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.push_back({node_.get(), 0});
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        Node<T>* p = n->parents[i].get();
        ++i;
        if (p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }

    node_->ensure_grad().fill(T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backprop) (*it)->backprop(**it);
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds the output node for an op: value plus, when recording, the edge
// list and backprop closure.
template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs,
               std::function<void(Node<T>&)> backprop) {
  Var<T> out(std::move(value));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  out.node()->requires_grad = true;
  out.node()->parents.reserve(inputs.size());
  for (auto& in : inputs) out.node()->parents.push_back(in.node());
  out.node()->backprop = std::move(backprop);
  return out;
}

}  // namespace dva::nn
