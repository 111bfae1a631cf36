#include "cardseg/autodiff.hpp"

#include <algorithm>
#include <unordered_set>

namespace cardseg::nn {

namespace {
uint64_t g_node_counter = 0;
bool g_grad_enabled = true;
}  // namespace

uint64_t next_node_id() { return ++g_node_counter; }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

Var make_op(Tensor value, std::initializer_list<Var> parents,
            std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = next_node_id();
  bool need = false;
  if (g_grad_enabled) {
    for (const Var& p : parents) need = need || (p.defined() && p.node()->requires_grad);
  }
  if (need) {
    n->requires_grad = true;
    for (const Var& p : parents)
      if (p.defined()) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(n));
}

void backward(const Var& root, std::span<const Var> stop_at) {
  Node* rn = root.raw();
  if (rn == nullptr) throw std::invalid_argument("backward: undefined root");
  if (rn->value.numel() != 1) throw std::invalid_argument("backward: root must be scalar");

  std::unordered_set<const Node*> stops;
  for (const Var& v : stop_at)
    if (v.defined()) stops.insert(v.raw());

  // Reachable subgraph, honoring stop nodes.
  std::vector<Node*> order;
  std::unordered_set<const Node*> seen;
  std::vector<Node*> stack{rn};
  seen.insert(rn);
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    if (stops.count(n)) continue;
    for (auto& p : n->parents)
      if (seen.insert(p.get()).second) stack.push_back(p.get());
  }

  // Non-leaf gradients are transient per sweep.
  for (Node* n : order)
    if (!n->is_leaf) n->grad = Tensor();

  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->id > b->id; });

  rn->ensure_grad().fill(1.0f);
  for (Node* n : order) {
    if (!n->backward_fn || !n->has_grad() || stops.count(n)) continue;
    n->backward_fn(*n);
  }
}

}  // namespace cardseg::nn
