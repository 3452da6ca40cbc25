#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "s2neck/tensor.hpp"

namespace s2neck {

struct Node;
using Var = std::shared_ptr<Node>;

// One value in a dynamically recorded computation graph. Gradients accumulate
// into `grad` (same shape as `value`) and persist until explicitly zeroed, so
// leaves double as trainable parameters.
struct Node {
    Tensor value;
    Tensor grad;  // empty until first needed
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;
    uint64_t order = 0;

    Tensor& ensure_grad();
    void zero_grad();
};

// Leaf without gradient tracking.
Var constant(Tensor value);
// Leaf that accumulates gradients (trainable parameter or checked input).
Var leaf(Tensor value, bool requires_grad = true);

// Interior node; requires_grad is inferred from parents. When no parent
// requires a gradient the backward closure is dropped.
Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

// Reverse sweep from a scalar root (numel == 1). Seeds d(root)/d(root) = 1
// and visits nodes in reverse creation order, which is a valid topological
// order for tape-built graphs.
void backward(const Var& root);

}  // namespace s2neck
