#include "s2neck/nn.hpp"

#include <cmath>

namespace s2neck {

std::vector<Var> param_vars(const ParamList& params) {
    std::vector<Var> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p.var);
    return out;
}

int64_t param_count(const ParamList& params) {
    int64_t n = 0;
    for (const auto& p : params) n += p.var->value.numel();
    return n;
}

Conv2dLayer::Conv2dLayer(int64_t cin, int64_t cout, int64_t k, int stride, int pad, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
    weight = leaf(rng.uniform_tensor({cout, cin, k, k}, -bound, bound));
    bias = leaf(Tensor({cout}));
    spec = {stride, pad};
}

void Conv2dLayer::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

Conv3dLayer::Conv3dLayer(int64_t cin, int64_t cout, int64_t kl, int64_t kh, int64_t kw,
                         const kernels::Conv3dSpec& sp, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin * kl * kh * kw));
    weight = leaf(rng.uniform_tensor({cout, cin, kl, kh, kw}, -bound, bound));
    bias = leaf(Tensor({cout}));
    spec = sp;
}

void Conv3dLayer::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

BatchNormLayer::BatchNormLayer(int64_t channels, double eps_, double momentum_)
    : eps(eps_), momentum(momentum_) {
    gamma = leaf(Tensor::full({channels}, 1.0));
    beta = leaf(Tensor({channels}));
    running_mean = Tensor({channels});
    running_var = Tensor::full({channels}, 1.0);
}

void BatchNormLayer::collect(const std::string& prefix, ParamList& out, BufferList* buffers) {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
    if (buffers) {
        buffers->push_back({prefix + ".running_mean", &running_mean});
        buffers->push_back({prefix + ".running_var", &running_var});
    }
}

}  // namespace s2neck
