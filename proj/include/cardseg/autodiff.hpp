#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "cardseg/tensor.hpp"

namespace cardseg::nn {

/// One node of the define-by-run graph. Ops allocate nodes; a node owns its
/// value, its (lazily allocated) gradient, and the closure that pushes its
/// gradient into its parents.
struct Node {
  Tensor value;
  Tensor grad;  // empty until first touched during backward
  bool requires_grad = false;
  bool is_leaf = false;
  uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool has_grad() const { return !grad.data.empty(); }

  Tensor& ensure_grad() {
    if (grad.data.empty()) grad = Tensor::zeros(value.shape);
    return grad;
  }
};

uint64_t next_node_id();

/// Handle to a graph node. Cheap to copy; the graph stays alive as long as
/// some handle (usually the loss) reaches it.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  /// Leaf holding a constant (no gradient).
  static Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->is_leaf = true;
    n->id = next_node_id();
    return Var(std::move(n));
  }

  /// Leaf parameter; gradients accumulate across backward calls until cleared.
  static Var parameter(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->is_leaf = true;
    n->requires_grad = true;
    n->id = next_node_id();
    return Var(std::move(n));
  }

  bool defined() const { return n_ != nullptr; }
  std::shared_ptr<Node> node() const { return n_; }
  Node* raw() const { return n_.get(); }

  const Tensor& val() const { return n_->value; }
  Tensor& val() { return n_->value; }
  Tensor& grad() const { return n_->ensure_grad(); }
  bool has_grad() const { return n_->has_grad(); }
  bool requires_grad() const { return n_ && n_->requires_grad; }

  void zero_grad() const {
    if (n_) n_->grad = Tensor();
  }

  /// Value-sharing view cut off from the graph.
  Var detach() const {
    auto n = std::make_shared<Node>();
    n->value = n_->value;
    n->is_leaf = true;
    n->id = next_node_id();
    return Var(std::move(n));
  }

  const std::vector<int>& shape() const { return n_->value.shape; }

 private:
  std::shared_ptr<Node> n_;
};

bool grad_enabled();

/// Disables graph recording in scope (inference passes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

/// Builds an op node. Parents are recorded (and the backward closure kept)
/// only when grad mode is on and some parent requires grad.
Var make_op(Tensor value, std::initializer_list<Var> parents,
            std::function<void(Node&)> backward_fn);

/// Reverse-mode sweep from a scalar root. Gradients of non-leaf nodes are
/// cleared first, so a subgraph may be swept more than once per step; leaf
/// (parameter) gradients accumulate. Traversal halts at `stop_at` nodes:
/// they receive gradient but do not propagate further (detach semantics
/// without re-running the forward pass).
void backward(const Var& root, std::span<const Var> stop_at = {});

}  // namespace cardseg::nn
