#include "s2neck/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace s2neck {

namespace {
const Tensor* value_ptr(const Var& v) { return v ? &v->value : nullptr; }
}

Var conv2d(const Var& x, const Var& w, const Var& bias, const kernels::Conv2dSpec& spec) {
    Tensor y = kernels::conv2d(x->value, w->value, value_ptr(bias), spec);
    std::vector<Var> parents{x, w};
    if (bias) parents.push_back(bias);
    return make_node(std::move(y), parents, [x, w, bias, spec](Node& n) {
        Tensor* gx = x->requires_grad ? &x->ensure_grad() : nullptr;
        Tensor* gw = w->requires_grad ? &w->ensure_grad() : nullptr;
        Tensor* gb = (bias && bias->requires_grad) ? &bias->ensure_grad() : nullptr;
        kernels::conv2d_backward(x->value, w->value, spec, n.grad, gx, gw, gb);
    });
}

Var conv3d(const Var& x, const Var& w, const Var& bias, const kernels::Conv3dSpec& spec) {
    Tensor y = kernels::conv3d(x->value, w->value, value_ptr(bias), spec);
    std::vector<Var> parents{x, w};
    if (bias) parents.push_back(bias);
    return make_node(std::move(y), parents, [x, w, bias, spec](Node& n) {
        Tensor* gx = x->requires_grad ? &x->ensure_grad() : nullptr;
        Tensor* gw = w->requires_grad ? &w->ensure_grad() : nullptr;
        Tensor* gb = (bias && bias->requires_grad) ? &bias->ensure_grad() : nullptr;
        kernels::conv3d_backward(x->value, w->value, spec, n.grad, gx, gw, gb);
    });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
               Tensor& running_var, double eps, double momentum, bool training) {
    auto saved = std::make_shared<kernels::BatchNormSaved>();
    Tensor y = kernels::batch_norm(x->value, gamma->value, beta->value, running_mean, running_var,
                                   eps, momentum, training, saved.get());
    return make_node(std::move(y), {x, gamma, beta}, [x, gamma, beta, saved, training](Node& n) {
        Tensor* gx = x->requires_grad ? &x->ensure_grad() : nullptr;
        Tensor* gg = gamma->requires_grad ? &gamma->ensure_grad() : nullptr;
        Tensor* gb = beta->requires_grad ? &beta->ensure_grad() : nullptr;
        kernels::batch_norm_backward(gamma->value, *saved, training, n.grad, gx, gg, gb);
    });
}

Var leaky_relu(const Var& x, double slope) {
    Tensor y = kernels::leaky_relu(x->value, slope);
    return make_node(std::move(y), {x}, [x, slope](Node& n) {
        kernels::leaky_relu_backward(x->value, slope, n.grad, &x->ensure_grad());
    });
}

Var resize2d(const Var& x, int64_t out_h, int64_t out_w, kernels::ResizeMode mode) {
    Tensor y = kernels::resize2d(x->value, out_h, out_w, mode);
    return make_node(std::move(y), {x}, [x, out_h, out_w, mode](Node& n) {
        kernels::resize2d_backward(x->value, out_h, out_w, mode, n.grad, &x->ensure_grad());
    });
}

Var stack_levels(const std::vector<Var>& maps) {
    std::vector<Tensor> vals;
    vals.reserve(maps.size());
    for (const auto& m : maps) vals.push_back(m->value);
    Tensor y = kernels::stack_levels(vals);
    std::vector<Var> parents(maps.begin(), maps.end());
    return make_node(std::move(y), parents, [maps](Node& n) {
        const int64_t L = static_cast<int64_t>(maps.size());
        const int64_t B = n.grad.dim(0), C = n.grad.dim(1), H = n.grad.dim(3), W = n.grad.dim(4);
        for (int64_t l = 0; l < L; ++l) {
            const auto& m = maps[static_cast<size_t>(l)];
            if (!m->requires_grad) continue;
            Tensor& gm = m->ensure_grad();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c) {
                    const double* src = n.grad.data() + ((b * C + c) * L + l) * H * W;
                    double* dst = gm.data() + (b * C + c) * H * W;
                    for (int64_t i = 0; i < H * W; ++i) dst[i] += src[i];
                }
        }
    });
}

Var concat_channels(const Var& a, const Var& b) {
    Tensor y = kernels::concat_channels(a->value, b->value);
    return make_node(std::move(y), {a, b}, [a, b](Node& n) {
        const int64_t B = n.grad.dim(0), H = n.grad.dim(2), W = n.grad.dim(3);
        const int64_t Ca = a->value.dim(1), Cb = b->value.dim(1);
        const int64_t Ct = Ca + Cb;
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (int64_t bi = 0; bi < B; ++bi) {
                const double* src = n.grad.data() + bi * Ct * H * W;
                double* dst = ga.data() + bi * Ca * H * W;
                for (int64_t i = 0; i < Ca * H * W; ++i) dst[i] += src[i];
            }
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (int64_t bi = 0; bi < B; ++bi) {
                const double* src = n.grad.data() + (bi * Ct + Ca) * H * W;
                double* dst = gb.data() + bi * Cb * H * W;
                for (int64_t i = 0; i < Cb * H * W; ++i) dst[i] += src[i];
            }
        }
    });
}

Var avgpool_levels(const Var& x) {
    Tensor y = kernels::avgpool_levels(x->value);
    return make_node(std::move(y), {x}, [x](Node& n) {
        kernels::avgpool_levels_backward(x->value, n.grad, &x->ensure_grad());
    });
}

Var add(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value))
        throw std::invalid_argument("add: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor y = a->value;
    for (int64_t i = 0; i < y.numel(); ++i) y[i] += b->value[i];
    return make_node(std::move(y), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += n.grad[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); ++i) gb[i] += n.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value))
        throw std::invalid_argument("mul: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor y = a->value;
    for (int64_t i = 0; i < y.numel(); ++i) y[i] *= b->value[i];
    return make_node(std::move(y), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += n.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); ++i) gb[i] += n.grad[i] * a->value[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor y = a->value;
    for (int64_t i = 0; i < y.numel(); ++i) y[i] *= s;
    return make_node(std::move(y), {a}, [a, s](Node& n) {
        Tensor& ga = a->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) ga[i] += s * n.grad[i];
    });
}

Var sum_all(const Var& x) {
    double acc = 0.0;
    for (int64_t i = 0; i < x->value.numel(); ++i) acc += x->value[i];
    Tensor y({1}, std::vector<double>{acc});
    return make_node(std::move(y), {x}, [x](Node& n) {
        Tensor& gx = x->ensure_grad();
        const double g = n.grad[0];
        for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
}

Var bce_with_logits_sum(const Var& logits, const Tensor& targets) {
    if (!logits->value.same_shape(targets))
        throw std::invalid_argument("bce_with_logits_sum: target shape mismatch");
    double acc = 0.0;
    for (int64_t i = 0; i < targets.numel(); ++i) {
        const double z = logits->value[i];
        const double t = targets[i];
        // log(1 + e^z) - t*z, stable for both signs
        acc += std::max(z, 0.0) - t * z + std::log1p(std::exp(-std::abs(z)));
    }
    Tensor y({1}, std::vector<double>{acc});
    auto tg = std::make_shared<Tensor>(targets);
    return make_node(std::move(y), {logits}, [logits, tg](Node& n) {
        Tensor& gx = logits->ensure_grad();
        const double g = n.grad[0];
        for (int64_t i = 0; i < gx.numel(); ++i) {
            const double z = logits->value[i];
            const double sig = 1.0 / (1.0 + std::exp(-z));
            gx[i] += g * (sig - (*tg)[i]);
        }
    });
}

SgdOptimizer::SgdOptimizer(std::vector<Var> params, double lr, double momentum, double weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
    if (lr_ < 0.0) throw std::invalid_argument("sgd: lr must be non-negative");
    buffers_.reserve(params_.size());
    for (const auto& p : params_) buffers_.push_back(Tensor::zeros_like(p->value));
}

void sgd_step(const std::vector<Var>& params, std::vector<Tensor>& buffers, double lr,
              double momentum, double weight_decay) {
    if (lr < 0.0) throw std::invalid_argument("sgd: lr must be non-negative");
    for (size_t i = 0; i < params.size(); ++i) {
        Node& p = *params[i];
        if (!p.requires_grad) continue;
        Tensor& g = p.ensure_grad();
        Tensor& buf = buffers[i];
        for (int64_t j = 0; j < g.numel(); ++j) {
            const double grad = g[j] + weight_decay * p.value[j];
            buf[j] = momentum * buf[j] + grad;
            p.value[j] -= lr * buf[j];
        }
    }
}

void SgdOptimizer::step() { sgd_step(params_, buffers_, lr_, momentum_, weight_decay_); }

void SgdOptimizer::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

double grad_check(const std::function<Var(const std::vector<Var>&)>& fn,
                  const std::vector<Tensor>& inputs, double epsilon) {
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const auto& t : inputs) vars.push_back(leaf(t));
    Var out = fn(vars);
    if (out->value.numel() != 1) throw std::invalid_argument("grad_check: function must be scalar-valued");
    out->value.check_finite("grad_check forward");
    backward(out);

    auto eval = [&fn](const std::vector<Var>& vs) {
        Var o = fn(vs);
        o->value.check_finite("grad_check probe");
        return o->value[0];
    };

    double max_rel = 0.0;
    for (size_t vi = 0; vi < vars.size(); ++vi) {
        const Tensor& analytic = vars[vi]->ensure_grad();
        for (int64_t j = 0; j < inputs[vi].numel(); ++j) {
            std::vector<Var> probe;
            probe.reserve(inputs.size());
            for (const auto& t : inputs) probe.push_back(constant(t));
            Tensor plus = inputs[vi];
            plus[j] += epsilon;
            probe[vi] = constant(plus);
            const double fp = eval(probe);
            Tensor minus = inputs[vi];
            minus[j] -= epsilon;
            probe[vi] = constant(minus);
            const double fm = eval(probe);
            const double fd = (fp - fm) / (2.0 * epsilon);
            const double a = analytic[j];
            const double rel = std::abs(a - fd) / std::max(1.0, std::abs(a));
            if (rel > max_rel) max_rel = rel;
        }
    }
    return max_rel;
}

}  // namespace s2neck
