#pragma once

#include <string>
#include <vector>

#include "s2neck/ops.hpp"

namespace s2neck {

struct NamedParam {
    std::string name;
    Var var;
};
using ParamList = std::vector<NamedParam>;

// Non-trainable state that still belongs in a checkpoint (BN running stats).
struct NamedBuffer {
    std::string name;
    Tensor* tensor;
};
using BufferList = std::vector<NamedBuffer>;

std::vector<Var> param_vars(const ParamList& params);
int64_t param_count(const ParamList& params);

// Weights drawn uniform in +-1/sqrt(fan_in), biases zero.
struct Conv2dLayer {
    Var weight, bias;
    kernels::Conv2dSpec spec;

    Conv2dLayer() = default;
    Conv2dLayer(int64_t cin, int64_t cout, int64_t k, int stride, int pad, Rng& rng);
    Var forward(const Var& x) const { return conv2d(x, weight, bias, spec); }
    void collect(const std::string& prefix, ParamList& out) const;
};

struct Conv3dLayer {
    Var weight, bias;
    kernels::Conv3dSpec spec;

    Conv3dLayer() = default;
    Conv3dLayer(int64_t cin, int64_t cout, int64_t kl, int64_t kh, int64_t kw,
                const kernels::Conv3dSpec& spec, Rng& rng);
    Var forward(const Var& x) const { return conv3d(x, weight, bias, spec); }
    void collect(const std::string& prefix, ParamList& out) const;
};

struct BatchNormLayer {
    Var gamma, beta;
    Tensor running_mean, running_var;
    double eps = 1e-5;
    double momentum = 0.1;

    BatchNormLayer() = default;
    explicit BatchNormLayer(int64_t channels, double eps = 1e-5, double momentum = 0.1);
    Var forward(const Var& x, bool training) {
        return batch_norm(x, gamma, beta, running_mean, running_var, eps, momentum, training);
    }
    void collect(const std::string& prefix, ParamList& out, BufferList* buffers = nullptr);
};

}  // namespace s2neck
