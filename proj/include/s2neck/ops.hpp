#pragma once

#include "s2neck/autograd.hpp"
#include "s2neck/kernels.hpp"

namespace s2neck {

// Differentiable ops over graph variables. bias may be null.
Var conv2d(const Var& x, const Var& w, const Var& bias, const kernels::Conv2dSpec& spec);
Var conv3d(const Var& x, const Var& w, const Var& bias, const kernels::Conv3dSpec& spec);

// Running stats live outside the graph and are updated in place during
// training-mode forwards.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
               Tensor& running_var, double eps, double momentum, bool training);

Var leaky_relu(const Var& x, double slope);
Var resize2d(const Var& x, int64_t out_h, int64_t out_w, kernels::ResizeMode mode);
Var stack_levels(const std::vector<Var>& maps);
Var concat_channels(const Var& a, const Var& b);
Var avgpool_levels(const Var& x);

Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var sum_all(const Var& x);

// Sum of elementwise binary cross-entropy between sigmoid(logits) and
// targets, computed in the numerically stable logits form.
Var bce_with_logits_sum(const Var& logits, const Tensor& targets);

// Classical momentum SGD over a parameter set; buffers persist in the
// optimizer across steps. Weight decay is L2 (added to the gradient).
class SgdOptimizer {
public:
    SgdOptimizer(std::vector<Var> params, double lr, double momentum, double weight_decay);

    void step();
    void zero_grad();
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

private:
    std::vector<Var> params_;
    std::vector<Tensor> buffers_;
    double lr_, momentum_, weight_decay_;
};

// One update over `params` with transient buffers (buffers persist only when
// going through SgdOptimizer).
void sgd_step(const std::vector<Var>& params, std::vector<Tensor>& buffers, double lr,
              double momentum, double weight_decay);

// Max over input coordinates of |analytic - central difference| /
// max(1, |analytic|) for a scalar-valued function of the given inputs.
double grad_check(const std::function<Var(const std::vector<Var>&)>& fn,
                  const std::vector<Tensor>& inputs, double epsilon = 1e-5);

}  // namespace s2neck
