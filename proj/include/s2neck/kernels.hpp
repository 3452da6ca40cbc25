#pragma once

#include "s2neck/tensor.hpp"

namespace s2neck::kernels {

// Plain forward/backward kernels on raw tensors. The autograd layer in
// ops.hpp wraps these; tests call them directly against brute-force oracles.
// All convolutions are cross-correlations (no kernel flip), zero padding.

struct Conv2dSpec {
    int stride = 1;
    int pad = 0;
};

struct Conv3dSpec {
    int stride_l = 1, stride_h = 1, stride_w = 1;
    int pad_l = 0, pad_h = 0, pad_w = 0;
};

// x: B x Cin x H x W, w: Cout x Cin x kh x kw, bias: Cout (optional).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const Conv2dSpec& spec);
void conv2d_backward(const Tensor& x, const Tensor& w, const Conv2dSpec& spec, const Tensor& gy,
                     Tensor* gx, Tensor* gw, Tensor* gb);

// x: B x Cin x L x H x W, w: Cout x Cin x kl x kh x kw.
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor* bias, const Conv3dSpec& spec);
void conv3d_backward(const Tensor& x, const Tensor& w, const Conv3dSpec& spec, const Tensor& gy,
                     Tensor* gx, Tensor* gw, Tensor* gb);

// Per-channel statistics over every non-channel axis (channel axis = 1).
struct BatchNormSaved {
    Tensor mean;     // C
    Tensor inv_std;  // C
    Tensor xhat;     // same shape as input
};

// Training mode standardizes with batch statistics and updates running stats
// in place (EMA with weight `momentum` on the new value, biased variance);
// eval mode uses the running stats.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, double eps, double momentum, bool training,
                  BatchNormSaved* saved);
void batch_norm_backward(const Tensor& gamma, const BatchNormSaved& saved, bool training,
                         const Tensor& gy, Tensor* gx, Tensor* ggamma, Tensor* gbeta);

Tensor leaky_relu(const Tensor& x, double slope);
void leaky_relu_backward(const Tensor& x, double slope, const Tensor& gy, Tensor* gx);

enum class ResizeMode { Bilinear, Nearest };

// Half-pixel centers, clamped borders. Constant inputs map to the same
// constant exactly in both modes.
Tensor resize2d(const Tensor& x, int64_t out_h, int64_t out_w, ResizeMode mode);
void resize2d_backward(const Tensor& x, int64_t out_h, int64_t out_w, ResizeMode mode,
                       const Tensor& gy, Tensor* gx);

// maps of B x C x H x W -> B x C x L x H x W, order preserved.
Tensor stack_levels(const std::vector<Tensor>& maps);

// a channels first.
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Mean over the whole level axis; level axis removed.
Tensor avgpool_levels(const Tensor& x);
void avgpool_levels_backward(const Tensor& x, const Tensor& gy, Tensor* gx);

}  // namespace s2neck::kernels
