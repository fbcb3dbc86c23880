#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "seqvae/tensor.hpp"

namespace seqvae {

// Define-by-run reverse-mode tape. Every forward op allocates a Node holding
// its value; when gradients are enabled and an input requires them, the node
// also records its parents and a closure that pushes adjoints to them.
// A graph is confined to one thread; distinct graphs may run in parallel.

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor adjoint;  // allocated lazily, same shape as value
  bool has_adjoint = false;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backprop;  // reads adjoint, accumulates into parents

  Tensor& grad() {
    if (!has_adjoint) {
      adjoint = Tensor::zeros_like(value);
      has_adjoint = true;
    }
    return adjoint;
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

// Disables graph recording in scope; forward values are still computed.
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Value-semantics handle to a graph node.
class Var {
 public:
  Var() = default;

  explicit Var(Tensor value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad && grad_mode();
  }

  explicit Var(NodePtr n) : node_(std::move(n)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  const Tensor& grad() const { return node_->grad(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::vector<size_t>& shape() const { return node_->value.shape(); }
  size_t numel() const { return node_->value.numel(); }
  double item() const { return node_->value.item(); }

  Node* node() const { return node_.get(); }
  const NodePtr& ptr() const { return node_; }

 private:
  NodePtr node_;
};

inline Var constant(Tensor t) { return Var(std::move(t), false); }
inline Var constant(double v) { return Var(Tensor::scalar(v), false); }

namespace detail {

// Central op factory. Skips all bookkeeping when no parent needs gradients,
// so evaluation-mode forwards never retain a graph.
template <typename Backprop>
Var make_op(const char* op, Tensor value, std::vector<Var> inputs, Backprop&& fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (grad_mode()) {
    for (const Var& v : inputs) {
      if (v.requires_grad()) {
        needs = true;
        break;
      }
    }
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const Var& v : inputs) node->parents.push_back(v.ptr());
    node->backprop = std::forward<Backprop>(fn);
  }
  return Var(std::move(node));
}

}  // namespace detail

// Reverse pass from a scalar root. Adjoints accumulate across repeated calls;
// the traversal order is a deterministic function of graph construction.
inline void backward(const Var& root) {
  if (!root.defined() || root.numel() != 1) {
    throw NumericError("backward: root must be a defined scalar");
  }
  // Iterative post-order over parent edges: leaves first, root last.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p->requires_grad && visited.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->has_adjoint) n->backprop(*n);
  }
}

}  // namespace seqvae
