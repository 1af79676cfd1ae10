#pragma once

#include <algorithm>
#include <atomic>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "compogauss/core/tensor.hpp"

namespace cg::ad {

// Reverse-mode tape. Nodes are created in forward order; backward() visits
// the reachable subgraph in reverse creation order, which is a valid reverse
// topological order for a dynamically built tape.

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  uint64_t id = 0;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward_fn;  // pulls this->grad into parents

  Tensor<T>& ensure_grad() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

inline uint64_t next_node_id() {
  static std::atomic<uint64_t> counter{1};
  return counter.fetch_add(1);
}

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  bool defined() const { return n_ != nullptr; }
  const Tensor<T>& val() const { return n_->value; }
  Tensor<T>& val() { return n_->value; }
  Tensor<T>& grad() { return n_->ensure_grad(); }
  const Tensor<T>& grad_view() const { return n_->grad; }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  std::shared_ptr<Node<T>> node() const { return n_; }
  Node<T>* raw() const { return n_.get(); }

  void zero_grad() {
    if (n_ && !n_->grad.empty()) n_->grad.fill(T(0));
  }

 private:
  std::shared_ptr<Node<T>> n_;
};

template <class T>
Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->id = next_node_id();
  return Var<T>(n);
}

template <class T>
Var<T> constant(Tensor<T> value) {
  return leaf(std::move(value), false);
}

// Creates a derived node. `backward_fn` receives the node and must add into
// each parent's grad (call parent->ensure_grad() first).
template <class T>
Var<T> make_op(Tensor<T> value, std::vector<std::shared_ptr<Node<T>>> parents,
               std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->id = next_node_id();
  bool req = false;
  for (auto& p : parents) req = req || (p && p->requires_grad);
  n->requires_grad = req;
  if (req) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Var<T>(n);
}

// Seeds the root with `adjoint` and propagates. Root grads accumulate, so
// zero parameter grads between steps.
template <class T>
void backward(const Var<T>& root, const Tensor<T>& adjoint) {
  CG_CHECK(root.defined(), "backward on undefined var");
  if (!root.raw()->requires_grad) return;
  CG_CHECK(adjoint.same_shape(root.val()), "adjoint shape mismatch");

  // Collect reachable grad-requiring nodes.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root.raw()};
  seen.insert(root.raw());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Node<T>* a, const Node<T>* b) { return a->id > b->id; });

  Tensor<T>& g = root.raw()->ensure_grad();
  for (int64_t i = 0; i < g.numel(); ++i) g[i] += adjoint[i];

  for (Node<T>* n : order) {
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// Scalar convenience: seeds d(root)/d(root) = 1.
template <class T>
void backward(const Var<T>& root) {
  CG_CHECK(root.val().numel() == 1, "scalar backward on non-scalar");
  backward(root, Tensor<T>::scalar(T(1)));
}

}  // namespace cg::ad
