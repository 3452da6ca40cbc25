#include "s2neck/autograd.hpp"

#include <algorithm>
#include <atomic>
#include <stdexcept>
#include <unordered_set>

namespace s2neck {

namespace {
std::atomic<uint64_t> g_order{0};
}

Tensor& Node::ensure_grad() {
    if (grad.numel() == 0) grad = Tensor::zeros_like(value);
    return grad;
}

void Node::zero_grad() {
    if (grad.numel() != 0) grad.fill(0.0);
}

Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = false;
    n->order = g_order.fetch_add(1);
    return n;
}

Var leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->order = g_order.fetch_add(1);
    return n;
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->order = g_order.fetch_add(1);
    bool needs = false;
    for (const auto& p : parents)
        if (p && p->requires_grad) needs = true;
    n->requires_grad = needs;
    if (needs) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return n;
}

void backward(const Var& root) {
    if (!root) throw std::invalid_argument("backward: null root");
    if (root->value.numel() != 1)
        throw std::invalid_argument("backward: root must be scalar, got " + root->value.shape_str());
    if (!root->requires_grad) return;

    // Collect the reachable requires_grad subgraph.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents)
            if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->order > b->order; });

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (Node* n : order) {
        if (n->backward_fn && n->grad.numel() != 0) n->backward_fn(*n);
    }
}

}  // namespace s2neck
